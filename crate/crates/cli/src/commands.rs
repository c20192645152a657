//! Subcommand implementations. Each returns a JSON summary for stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use seedgrow::engine::{classify_negative_with, infer, Inference};
use seedgrow::eval::{
    ablation_markdown, ablation_sweep, eval_suite, prompt_variability, report_markdown, Agent, AblationReport, Benchmark,
    CaseVariability, EvalReport, Protocol, Summary,
};
use seedgrow::io::{read_mask, read_volume, write_mask_with_spacing};
use seedgrow::metrics::dice_score;
use seedgrow::ppo::{
    build_envs, read_policy, train_agent_on, write_episode_log, write_policy, Episode, EpisodeLog, PolicyParams, UpdateRecord,
};
use seedgrow::surrogate::{self, entropy_of, read_params, write_params};
use seedgrow::{EntropyField, Error as CoreError, GrowConfig, RegionGrower, SegEnv, SurrogateParams, Volume};

use crate::args::*;
use crate::config::RunConfig;
use crate::dataset::{load_split, write_dataset, Split};
use crate::error::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e).into())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("report serialises") + "\n"))
}

fn parent_dir(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Loads the config and applies the flags shared by every subcommand.
pub fn load_config(common: &Common, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Caps the rayon pool. Only the first call in a process takes effect.
pub fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

pub fn run(cli: Cli) -> CliResult<Value> {
    match cli.command {
        Command::GenerateDataset(a) => cmd_generate(&a),
        Command::TrainSurrogate(a) => cmd_train_surrogate(&a),
        Command::TrainAgent(a) => cmd_train_agent(&a),
        Command::Grow(a) => cmd_grow(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<Value> {
    let cfg = load_config(&a.common, a.seed)?;
    init_threads(cfg.threads);
    let dir = a.out.clone().unwrap_or(cfg.paths.data_dir.clone());
    let manifest = write_dataset(&dir, &cfg.dataset, cfg.seed)?;
    Ok(json!({
        "command": "generate-dataset",
        "data_dir": dir,
        "samples": manifest.samples.len(),
        "train": cfg.dataset.train,
        "test": cfg.dataset.test,
        "negatives": cfg.dataset.negatives,
    }))
}

fn train_pairs(samples: &[seedgrow::PhantomSample]) -> Vec<(Volume, seedgrow::Mask)> {
    samples.iter().map(|s| (s.volume.clone(), s.truth.clone())).collect()
}

pub fn cmd_train_surrogate(a: &TrainArgs) -> CliResult<Value> {
    let cfg = load_config(&a.common, a.seed)?;
    init_threads(cfg.threads);
    let data = a.data.clone().unwrap_or(cfg.paths.data_dir.clone());
    let out = a.out.clone().unwrap_or(cfg.paths.surrogate_path());
    let train = load_split(&data, Split::Train)?;
    let params = surrogate::train(
        &train_pairs(&train),
        &surrogate::SurrogateTrainConfig {
            seed: cfg.seed,
            ..cfg.surrogate.clone()
        },
    )?;
    parent_dir(&out)?;
    write_params(&out, &params)?;
    Ok(json!({
        "command": "train-surrogate",
        "out": out,
        "samples": train.len(),
        "initial_loss": params.meta.initial_loss,
        "final_loss": params.meta.final_loss,
    }))
}

fn read_surrogate(path: &Path) -> CliResult<SurrogateParams> {
    Ok(read_params(path)?)
}

fn read_policy_arc(path: &Path) -> CliResult<Arc<PolicyParams<f64>>> {
    Ok(Arc::new(read_policy(path)?))
}

pub fn cmd_train_agent(a: &TrainAgentArgs) -> CliResult<Value> {
    let mut cfg = load_config(&a.common, a.seed)?;
    if let Some(u) = a.updates {
        cfg.ppo.total_updates = u;
        cfg.validate()?;
    }
    init_threads(cfg.threads);
    let data = a.data.clone().unwrap_or(cfg.paths.data_dir.clone());
    let sur_path = a.surrogate.clone().unwrap_or(cfg.paths.surrogate_path());
    let out = a.out.clone().unwrap_or(cfg.paths.policy_path());
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    create_dir(if out_dir.as_os_str().is_empty() { Path::new(".") } else { &out_dir })?;

    let train = load_split(&data, Split::Train)?;
    let sur = read_surrogate(&sur_path)?;
    let envs = build_envs(&train, &sur, &cfg.env.to_env())?;

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| CoreError::io(&log_path, e))?);
    let ckpt_dir = out_dir.join("checkpoints");
    let every = cfg.eval.checkpoint_every;
    if every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let mut last: Option<UpdateRecord> = None;
    let total = cfg.ppo.total_updates;
    let dims = train[0].volume.dims();
    let mut observer = |rec: &UpdateRecord, p: &PolicyParams<f64>, batch: &[Episode<f64>]| -> seedgrow::Result<()> {
        let line = serde_json::to_string(rec).expect("record serialises");
        writeln!(log, "{line}").map_err(|e| CoreError::io(&log_path, e))?;
        if every > 0 && rec.step.is_multiple_of(every) {
            write_policy(ckpt_dir.join(format!("policy_{:05}.ppm", rec.step)), p)?;
        }
        if let (Some(path), true) = (&a.episode_log, rec.step == total) {
            write_episode_log(path, &EpisodeLog::from_episodes(dims, batch)?)?;
        }
        last = Some(rec.clone());
        Ok(())
    };
    let mut policy = train_agent_on(&train, &envs, &cfg.ppo, cfg.seed, &mut observer)?;
    log.flush().map_err(|e| CoreError::io(&log_path, e))?;
    policy.meta.beta = Some(cfg.env.beta);
    write_policy(&out, &policy)?;
    Ok(json!({
        "command": "train-agent",
        "out": out,
        "train_log": log_path,
        "episode_log": a.episode_log,
        "updates": policy.meta.updates_run,
        "env_steps": policy.meta.env_steps,
        "last": last,
    }))
}

/// Reads a one-channel volume as an entropy field.
pub fn read_entropy(path: &Path) -> CliResult<EntropyField> {
    let v: Volume = read_volume(path)?;
    if v.channels() != 1 {
        return Err(CliError::data(format!("{}: entropy field must have 1 channel, got {}", path.display(), v.channels()))
            .with_field("entropy"));
    }
    Ok(EntropyField::new(v.dims(), v.data().to_vec())?)
}

pub fn cmd_grow(a: &GrowArgs) -> CliResult<Value> {
    let cfg = load_config(&a.common, None)?;
    init_threads(cfg.threads);
    let grow_cfg = GrowConfig {
        radius: a.radius.unwrap_or(cfg.env.grow.radius),
        tau_sigma: a.tau_sigma.unwrap_or(cfg.env.grow.tau_sigma),
        tau_e: a.tau_e.unwrap_or(cfg.env.grow.tau_e),
        max_iters: a.max_iters.unwrap_or(cfg.env.grow.max_iters),
    };
    grow_cfg.validate()?;
    let x: Volume = read_volume(&a.volume)?;
    let entropy = match (&a.entropy, &a.surrogate) {
        (Some(p), _) => read_entropy(p)?,
        (None, Some(s)) => entropy_of(&x, &read_surrogate(s)?)?,
        (None, None) => return Err(CliError::config("one of --entropy or --surrogate is required").with_field("entropy")),
    };
    let grower = RegionGrower::new(&x, &entropy, &grow_cfg)?;
    let res = grower.grow(a.seed)?;
    parent_dir(&a.out)?;
    write_mask_with_spacing(&a.out, &res.mask, x.spacing_mm())?;
    Ok(json!({
        "command": "grow",
        "out": a.out,
        "seed": a.seed,
        "voxels": res.mask.count(),
        "iterations_run": res.iterations_run,
        "converged": res.converged,
        "frontier_history": res.frontier_history,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferSummary {
    pub prompt: seedgrow::engine::PromptSummary,
    pub steps: Vec<seedgrow::engine::StepRecord>,
    pub voxels: usize,
    pub negative: bool,
    pub dice: Option<f64>,
}

fn summarise(inf: &Inference, truth: Option<&seedgrow::Mask>, threshold: usize) -> CliResult<InferSummary> {
    Ok(InferSummary {
        prompt: inf.prompt.clone(),
        steps: inf.steps.clone(),
        voxels: inf.mask.count(),
        negative: classify_negative_with(&inf.mask, threshold),
        dice: truth.map(|t| dice_score(&inf.mask, t)).transpose()?,
    })
}

pub fn cmd_infer(a: &InferArgs) -> CliResult<Value> {
    let cfg = load_config(&a.common, None)?;
    init_threads(cfg.threads);
    let x: Arc<Volume> = Arc::new(read_volume(&a.volume)?);
    let truth = a.truth.as_ref().map(read_mask).transpose()?.map(Arc::new);
    let sur = read_surrogate(&a.surrogate.clone().unwrap_or(cfg.paths.surrogate_path()))?;
    let policy = if a.single_shot {
        None
    } else {
        Some(read_policy_arc(&a.policy.clone().unwrap_or(cfg.paths.policy_path()))?)
    };
    let env = SegEnv::with_surrogate(Arc::clone(&x), truth.clone(), &sur, &cfg.env.to_env())?;
    let inf = infer(&env, policy.as_ref(), a.prompt, a.trace_dir.is_some())?;
    let summary = summarise(&inf, truth.as_deref(), cfg.negative_threshold())?;
    parent_dir(&a.out)?;
    write_mask_with_spacing(&a.out, &inf.mask, x.spacing_mm())?;
    if let Some(dir) = &a.trace_dir {
        create_dir(dir)?;
        for (i, m) in inf.trace.iter().enumerate() {
            write_mask_with_spacing(dir.join(format!("step_{i:03}.svm")), m, x.spacing_mm())?;
        }
        write_json(&dir.join("trace.json"), &summary)?;
    }
    let mut out = serde_json::to_value(&summary).expect("summary serialises");
    out["command"] = json!("infer");
    out["out"] = json!(a.out);
    Ok(out)
}

/// Re-applies a negative-case threshold to a finished report.
pub fn apply_threshold(report: &mut EvalReport, threshold: usize) {
    for c in &mut report.cases {
        c.negative = c.voxels <= threshold;
    }
    report.negative_threshold = threshold;
    report.summary = Summary::of(&report.cases);
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalBundle {
    pub seed: u64,
    pub policy: PathBuf,
    pub surrogate: PathBuf,
    pub reports: Vec<EvalReport>,
    pub variability: Vec<CaseVariability>,
}

fn eval_markdown(b: &EvalBundle) -> String {
    let mut out = String::new();
    for r in &b.reports {
        out.push_str(&report_markdown(r));
        out.push('\n');
    }
    if !b.variability.is_empty() {
        out.push_str("# Prompt variability\n\n| case | mean Dice | std |\n|---|---|---|\n");
        for v in &b.variability {
            out.push_str(&format!("| {} | {:.3} | {:.3} |\n", v.case, v.mean, v.std));
        }
        let m = b.variability.iter().map(|v| v.std).sum::<f64>() / b.variability.len() as f64;
        out.push_str(&format!("\nMean per-case std: {m:.4}\n"));
    }
    out
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<Value> {
    let cfg = load_config(&a.common, a.seed)?;
    init_threads(cfg.threads);
    let data = a.data.clone().unwrap_or(cfg.paths.data_dir.clone());
    let sur_path = a.surrogate.clone().unwrap_or(cfg.paths.surrogate_path());
    let pol_path = a.policy.clone().unwrap_or(cfg.paths.policy_path());
    let out_dir = a.out.clone().unwrap_or(cfg.paths.run_dir.join("eval"));
    let sur = read_surrogate(&sur_path)?;
    let policy = Agent::Greedy(read_policy_arc(&pol_path)?);
    let env_cfg = cfg.env.to_env();
    let test = load_split(&data, Split::Test)?;
    let test_envs = build_envs(&test, &sur, &env_cfg)?;
    let seed = cfg.seed;
    let perturbed = Protocol::Perturbed {
        max_offset: cfg.eval.perturb_offset,
    };
    let mut reports = vec![
        eval_suite("policy", &test, &test_envs, &policy, Protocol::InLesion, seed)?,
        eval_suite("single-shot", &test, &test_envs, &Agent::SingleShot, Protocol::InLesion, seed)?,
        eval_suite("policy/perturbed", &test, &test_envs, &policy, perturbed, seed)?,
        eval_suite("single-shot/perturbed", &test, &test_envs, &Agent::SingleShot, perturbed, seed)?,
    ];
    if cfg.dataset.negatives > 0 {
        let neg = load_split(&data, Split::Negative)?;
        let neg_envs = build_envs(&neg, &sur, &env_cfg)?;
        reports.push(eval_suite("negatives", &neg, &neg_envs, &policy, Protocol::InGland, seed)?);
    }
    if let Some(t) = cfg.eval.negative_threshold {
        reports.iter_mut().for_each(|r| apply_threshold(r, t));
    }
    let variability = if cfg.eval.prompts_per_case > 0 {
        prompt_variability(&test, &test_envs, &policy, cfg.eval.prompts_per_case, seed)?
    } else {
        Vec::new()
    };
    let bundle = EvalBundle {
        seed,
        policy: pol_path,
        surrogate: sur_path,
        reports,
        variability,
    };
    create_dir(&out_dir)?;
    write_json(&out_dir.join("report.json"), &bundle)?;
    write_text(&out_dir.join("report.md"), &eval_markdown(&bundle))?;
    let summaries: Vec<Value> = bundle
        .reports
        .iter()
        .map(|r| json!({"label": r.label, "mean_dice": r.summary.mean_dice, "negatives": r.summary.negatives}))
        .collect();
    Ok(json!({"command": "eval", "out": out_dir, "reports": summaries}))
}

/// Builds the ablation benchmark from the dataset on disk.
pub fn benchmark(cfg: &RunConfig, data: &Path) -> CliResult<Benchmark<f64>> {
    Ok(Benchmark {
        train: load_split(data, Split::Train)?,
        test: load_split(data, Split::Test)?,
        negatives: if cfg.dataset.negatives > 0 {
            load_split(data, Split::Negative)?
        } else {
            Vec::new()
        },
        surrogate: cfg.surrogate.clone(),
        env: cfg.env.to_env(),
        ppo: cfg.ppo,
        betas: cfg.eval.betas.clone(),
        perturb_offset: cfg.eval.perturb_offset,
        single_channel: cfg.eval.single_channel,
        seed: cfg.seed,
    })
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<Value> {
    let mut cfg = load_config(&a.common, a.seed)?;
    if let Some(u) = a.updates {
        cfg.ppo.total_updates = u;
        cfg.validate()?;
    }
    init_threads(cfg.threads);
    let data = a.data.clone().unwrap_or(cfg.paths.data_dir.clone());
    let out_dir = a.out.clone().unwrap_or(cfg.paths.run_dir.join("ablation"));
    let bench = benchmark(&cfg, &data)?;
    let started = std::time::Instant::now();
    let progress = |msg: &str| eprintln!("[{:7.1}s] {msg}", started.elapsed().as_secs_f64());
    let mut report: AblationReport = ablation_sweep(&bench, &progress)?;
    if let Some(t) = cfg.eval.negative_threshold {
        report.rows.iter_mut().for_each(|r| apply_threshold(r, t));
    }
    create_dir(&out_dir)?;
    write_json(&out_dir.join("report.json"), &report)?;
    write_text(&out_dir.join("report.md"), &ablation_markdown(&report))?;
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| json!({"label": r.label, "mean_dice": r.summary.mean_dice}))
        .collect();
    Ok(json!({"command": "ablate", "out": out_dir, "rows": rows, "seconds": started.elapsed().as_secs_f64()}))
}

pub fn cmd_serve(a: &ServeArgs) -> CliResult<Value> {
    let cfg = load_config(&a.common, None)?;
    init_threads(cfg.threads);
    let bind = a.bind.clone().unwrap_or(cfg.serve.bind.clone());
    let service_cfg = seedgrow_service::ServiceConfig {
        env: cfg.env.to_env(),
        negative_threshold: cfg.negative_threshold(),
        session_ttl: std::time::Duration::from_secs(cfg.serve.session_ttl_secs),
        static_dir: a.static_dir.clone().or(cfg.serve.static_dir.clone()),
    };
    let state = seedgrow_service::AppState::new(service_cfg);
    let sur_path = a.surrogate.clone().unwrap_or(cfg.paths.surrogate_path());
    if a.surrogate.is_some() || sur_path.exists() {
        state.add_surrogate("default", read_surrogate(&sur_path)?);
    }
    let pol_path = a.policy.clone().unwrap_or(cfg.paths.policy_path());
    if a.policy.is_some() || pol_path.exists() {
        state.add_policy("default", read_policy(&pol_path)?);
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::data(format!("tokio runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| CliError::config(format!("cannot bind {bind}: {e}")).with_field("bind"))?;
        let addr = listener.local_addr().map_err(|e| CliError::data(e.to_string()))?;
        eprintln!("{}", json!({"listening": addr.to_string(), "api": "/api/v1"}));
        seedgrow_service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::data(format!("server: {e}")))
    })?;
    Ok(json!({"command": "serve", "bind": bind}))
}
