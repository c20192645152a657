//! Evaluation protocols, ablations and reports.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{classify_negative_with, infer};
use crate::env::{rollout, EnvConfig, SegEnv};
use crate::error::{Error, Result};
use crate::metrics::{dice_score, mean_std, paired_t_test, Confusion, PairedTTest};
use crate::phantom::{gland_centre_seed, sample_perturbed_seed, sample_seed_in_gland, sample_seed_in_lesion, PhantomSample};
use crate::ppo::{build_envs, train_agent_on, Episode, PolicyArch, PolicyParams, PpoConfig, UniformCells, UpdateRecord};
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::surrogate::{self, SurrogateTrainConfig};
use crate::volume::{Mask, VoxelIndex};

/// Where the user prompt comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Protocol {
    /// Uniform voxel inside the lesion.
    InLesion,
    /// Uniform voxel outside the lesion, Chebyshev distance `1..=max_offset`.
    Perturbed { max_offset: usize },
    /// Uniform voxel inside the gland (used on lesion-free cases).
    InGland,
    /// The gland-centre heuristic instead of a user prompt.
    GlandCentre,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::InLesion => write!(f, "in-lesion"),
            Protocol::Perturbed { max_offset } => write!(f, "perturbed({max_offset})"),
            Protocol::InGland => write!(f, "in-gland"),
            Protocol::GlandCentre => write!(f, "gland-centre"),
        }
    }
}

/// Prompt for case `case` under `protocol`; the same `(rng_seed, case)`
/// gives the same draw across agents, so comparisons are paired.
pub fn prompt_for<T>(sample: &PhantomSample<T>, protocol: Protocol, rng_seed: u64, case: usize) -> Result<VoxelIndex> {
    let s: u64 = rng::stream(rng_seed, Purpose::Eval, case as u64).random();
    match protocol {
        Protocol::InLesion => sample_seed_in_lesion(sample, s),
        Protocol::Perturbed { max_offset } => sample_perturbed_seed(sample, max_offset, s),
        Protocol::InGland => sample_seed_in_gland(sample, s),
        Protocol::GlandCentre => gland_centre_seed(&sample.gland),
    }
}

/// What refines the mask after the prompt.
#[derive(Debug, Clone)]
pub enum Agent<T> {
    /// Region growing from the prompt only.
    SingleShot,
    Greedy(Arc<PolicyParams<T>>),
    /// Uniformly random action cells for the whole horizon.
    UniformRandom(PolicyArch),
}

impl<T> Agent<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Agent::SingleShot => "single-shot",
            Agent::Greedy(_) => "policy",
            Agent::UniformRandom(_) => "uniform-random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: usize,
    pub prompt: VoxelIndex,
    /// Chebyshev distance from the prompt to the nearest lesion voxel (0 inside).
    pub prompt_offset: Option<usize>,
    pub has_lesion: bool,
    pub dice: Option<f64>,
    pub initial_dice: Option<f64>,
    pub fpr: f64,
    pub sensitivity: Option<f64>,
    pub voxels: usize,
    pub steps: usize,
    pub negative: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeCounts {
    /// Lesion cases called positive.
    pub true_positive: usize,
    /// Lesion cases called negative.
    pub false_negative: usize,
    /// Lesion-free cases called negative.
    pub true_negative: usize,
    /// Lesion-free cases called positive.
    pub false_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub mean_fpr: f64,
    pub std_fpr: f64,
    pub mean_sensitivity: f64,
    pub negatives: NegativeCounts,
}

impl Summary {
    pub fn of(cases: &[CaseResult]) -> Self {
        let dice: Vec<f64> = cases.iter().filter_map(|c| c.dice).collect();
        let fpr: Vec<f64> = cases.iter().map(|c| c.fpr).collect();
        let sens: Vec<f64> = cases.iter().filter_map(|c| c.sensitivity).collect();
        let (mean_dice, std_dice) = mean_std(&dice);
        let (mean_fpr, std_fpr) = mean_std(&fpr);
        let mut negatives = NegativeCounts::default();
        for c in cases {
            match (c.has_lesion, c.negative) {
                (true, false) => negatives.true_positive += 1,
                (true, true) => negatives.false_negative += 1,
                (false, true) => negatives.true_negative += 1,
                (false, false) => negatives.false_positive += 1,
            }
        }
        Summary {
            n: cases.len(),
            mean_dice,
            std_dice,
            mean_fpr,
            std_fpr,
            mean_sensitivity: mean_std(&sens).0,
            negatives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub agent: String,
    pub protocol: Protocol,
    pub rng_seed: u64,
    pub negative_threshold: usize,
    pub cases: Vec<CaseResult>,
    pub summary: Summary,
}

impl EvalReport {
    pub fn dice(&self) -> Vec<f64> {
        self.cases.iter().filter_map(|c| c.dice).collect()
    }
}

fn offset_to(truth: &Mask, v: VoxelIndex) -> Option<usize> {
    truth.voxels().map(|t| t.chebyshev(v)).min()
}

fn run_case<T: Real>(
    sample: &PhantomSample<T>,
    env: &SegEnv<T>,
    agent: &Agent<T>,
    protocol: Protocol,
    rng_seed: u64,
    case: usize,
    threshold: usize,
) -> Result<CaseResult> {
    let prompt = prompt_for(sample, protocol, rng_seed, case)?;
    let (initial, mask, steps) = match agent {
        Agent::SingleShot => {
            let r = infer(env, None, prompt, false)?;
            (r.mask.clone(), r.mask, 0)
        }
        Agent::Greedy(p) => {
            let r = infer(env, Some(p), prompt, false)?;
            let first = env.grower().grow(prompt)?.mask;
            (first, r.mask, r.steps.len())
        }
        Agent::UniformRandom(arch) => {
            let mut policy = UniformCells {
                arch: *arch,
                rng: rng::stream(rng_seed, Purpose::Eval, (1 << 32) + case as u64),
            };
            let first = env.grower().grow(prompt)?.mask;
            let tr = rollout(env, prompt, &mut policy)?;
            let steps = tr.len();
            let last = tr.into_iter().last().map_or_else(|| first.clone(), |t| t.next_state.mask);
            (first, last, steps)
        }
    };
    let truth = &sample.truth;
    let has_lesion = !truth.is_empty();
    let c = Confusion::of(&mask, truth)?;
    Ok(CaseResult {
        case,
        prompt,
        prompt_offset: offset_to(truth, prompt),
        has_lesion,
        dice: if has_lesion { Some(dice_score(&mask, truth)?) } else { None },
        initial_dice: if has_lesion { Some(dice_score(&initial, truth)?) } else { None },
        fpr: c.fpr(),
        sensitivity: c.sensitivity(),
        voxels: mask.count(),
        steps,
        negative: classify_negative_with(&mask, threshold),
    })
}

/// Full inference on every case; `envs[i]` belongs to `dataset[i]`.
pub fn eval_suite<T: Real>(
    label: &str,
    dataset: &[PhantomSample<T>],
    envs: &[SegEnv<T>],
    agent: &Agent<T>,
    protocol: Protocol,
    rng_seed: u64,
) -> Result<EvalReport> {
    if dataset.len() != envs.len() {
        return Err(Error::invalid("dataset", "need one environment per case"));
    }
    let threshold = envs.first().map_or(0, |e| e.config().grow.radius.window_volume());
    let cases = dataset
        .par_iter()
        .zip(envs)
        .enumerate()
        .map(|(i, (s, e))| run_case(s, e, agent, protocol, rng_seed, i, threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        label: label.to_string(),
        agent: agent.name().to_string(),
        protocol,
        rng_seed,
        negative_threshold: threshold,
        summary: Summary::of(&cases),
        cases,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVariability {
    pub case: usize,
    pub dice: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Dice spread over `n_prompts` independent in-lesion prompts per case.
pub fn prompt_variability<T: Real>(
    dataset: &[PhantomSample<T>],
    envs: &[SegEnv<T>],
    agent: &Agent<T>,
    n_prompts: usize,
    rng_seed: u64,
) -> Result<Vec<CaseVariability>> {
    if dataset.len() != envs.len() {
        return Err(Error::invalid("dataset", "need one environment per case"));
    }
    dataset
        .par_iter()
        .zip(envs)
        .enumerate()
        .filter(|(_, (s, _))| !s.truth.is_empty())
        .map(|(i, (s, e))| {
            let dice = (0..n_prompts)
                .map(|k| {
                    let seed = rng::derive_seed(rng_seed, k as u64);
                    Ok(run_case(s, e, agent, Protocol::InLesion, seed, i, 0)?.dice.unwrap_or(0.0))
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&dice);
            Ok(CaseVariability { case: i, dice, mean, std })
        })
        .collect()
}

/// Everything one ablation run needs.
#[derive(Debug, Clone)]
pub struct Benchmark<T> {
    pub train: Vec<PhantomSample<T>>,
    pub test: Vec<PhantomSample<T>>,
    /// Lesion-free cases for the negative rule; may be empty.
    pub negatives: Vec<PhantomSample<T>>,
    pub surrogate: SurrogateTrainConfig,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    /// Entropy weights of the sweep; the configured `env.beta` is the full method.
    pub betas: Vec<f64>,
    pub perturb_offset: usize,
    /// Also retrain on channel 0 alone.
    pub single_channel: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub label: String,
    pub records: Vec<UpdateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: PairedTTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub surrogate_final_loss: Option<f64>,
    pub rows: Vec<EvalReport>,
    pub comparisons: Vec<Comparison>,
    pub curves: Vec<TrainingCurve>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn mean_dice(&self, label: &str) -> Option<f64> {
        self.row(label).map(|r| r.summary.mean_dice)
    }
}

pub fn beta_label(beta: f64) -> String {
    format!("beta={beta}")
}

/// Per-step progress of an ablation run.
pub type Progress<'a> = dyn Fn(&str) + Sync + 'a;

fn train_policy<T: Real>(
    label: &str,
    train: &[PhantomSample<T>],
    envs: &[SegEnv<T>],
    beta: f64,
    ppo: &PpoConfig,
    seed: u64,
    progress: &Progress<'_>,
) -> Result<(Arc<PolicyParams<T>>, TrainingCurve)> {
    let envs = envs
        .iter()
        .map(|e| e.with_config(&EnvConfig { beta, ..*e.config() }))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut observe = |r: &UpdateRecord, _: &PolicyParams<T>, _: &[Episode<T>]| {
        if r.step.is_multiple_of(25) || r.step == ppo.total_updates {
            progress(&format!("{label}: update {} mean dice {:.3} return {:.3}", r.step, r.mean_dice, r.mean_return));
        }
        records.push(r.clone());
        Ok(())
    };
    let p = train_agent_on(train, &envs, ppo, seed, &mut observe)?;
    Ok((
        Arc::new(p),
        TrainingCurve {
            label: label.to_string(),
            records,
        },
    ))
}

fn compare(label: &str, a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    Ok(Comparison {
        label: label.to_string(),
        a: a.label.clone(),
        b: b.label.clone(),
        mean_a: a.summary.mean_dice,
        mean_b: b.summary.mean_dice,
        test: paired_t_test(&a.dice(), &b.dice())?,
    })
}

/// Trains the surrogate and one policy per entropy weight, then evaluates
/// the full method against its ablations on the held-out cases.
///
/// Rows: `full`, `no-prompt`, `no-entropy-reward`, `beta=…` per sweep value,
/// `single-shot`, `uniform-random`, `full/perturbed`, `single-shot/perturbed`,
/// optionally `single-channel`, and `negatives` when lesion-free cases are given.
pub fn ablation_sweep<T: Real>(bench: &Benchmark<T>, progress: &Progress<'_>) -> Result<AblationReport> {
    bench.env.validate()?;
    bench.ppo.validate()?;
    let seed = bench.seed;
    let volumes: Vec<_> = bench.train.iter().map(|s| (s.volume.clone(), s.truth.clone())).collect();
    let sur = surrogate::train(&volumes, &SurrogateTrainConfig { seed, ..bench.surrogate })?;
    progress(&format!("surrogate trained, final loss {:?}", sur.meta.final_loss));
    let train_envs = build_envs(&bench.train, &sur, &bench.env)?;
    let test_envs = build_envs(&bench.test, &sur, &bench.env)?;

    let full_beta = bench.env.beta;
    let mut betas = bench.betas.clone();
    for b in [full_beta, 0.0] {
        if !betas.contains(&b) {
            betas.push(b);
        }
    }
    let mut policies = Vec::new();
    let mut curves = Vec::new();
    for &b in &betas {
        let (p, c) = train_policy(&beta_label(b), &bench.train, &train_envs, b, &bench.ppo, seed, progress)?;
        policies.push((b, p));
        curves.push(c);
    }
    let policy = |b: f64| Arc::clone(&policies.iter().find(|(x, _)| *x == b).expect("trained above").1);
    let full = Agent::Greedy(policy(full_beta));
    let test = &bench.test;
    let perturbed = Protocol::Perturbed {
        max_offset: bench.perturb_offset,
    };

    let mut rows = vec![
        eval_suite("full", test, &test_envs, &full, Protocol::InLesion, seed)?,
        eval_suite("no-prompt", test, &test_envs, &full, Protocol::GlandCentre, seed)?,
        eval_suite("no-entropy-reward", test, &test_envs, &Agent::Greedy(policy(0.0)), Protocol::InLesion, seed)?,
    ];
    for &b in &bench.betas {
        rows.push(eval_suite(&beta_label(b), test, &test_envs, &Agent::Greedy(policy(b)), Protocol::InLesion, seed)?);
    }
    let arch = PolicyArch {
        channels: test.first().map_or(bench.ppo.arch.channels, |s| s.volume.channels()),
        ..bench.ppo.arch
    };
    rows.push(eval_suite("single-shot", test, &test_envs, &Agent::SingleShot, Protocol::InLesion, seed)?);
    rows.push(eval_suite("uniform-random", test, &test_envs, &Agent::UniformRandom(arch), Protocol::InLesion, seed)?);
    rows.push(eval_suite("full/perturbed", test, &test_envs, &full, perturbed, seed)?);
    rows.push(eval_suite("single-shot/perturbed", test, &test_envs, &Agent::SingleShot, perturbed, seed)?);

    if bench.single_channel {
        let ch0 = |set: &[PhantomSample<T>]| -> Result<Vec<PhantomSample<T>>> {
            set.iter()
                .map(|s| {
                    Ok(PhantomSample {
                        volume: s.volume.select_channels(&[0])?,
                        ..s.clone()
                    })
                })
                .collect()
        };
        let (train1, test1) = (ch0(&bench.train)?, ch0(test)?);
        let vols1: Vec<_> = train1.iter().map(|s| (s.volume.clone(), s.truth.clone())).collect();
        let sur1 = surrogate::train(&vols1, &SurrogateTrainConfig { seed, ..bench.surrogate })?;
        let tr_envs1 = build_envs(&train1, &sur1, &bench.env)?;
        let te_envs1 = build_envs(&test1, &sur1, &bench.env)?;
        let (p1, c1) = train_policy("single-channel", &train1, &tr_envs1, full_beta, &bench.ppo, seed, progress)?;
        curves.push(c1);
        rows.push(eval_suite("single-channel", &test1, &te_envs1, &Agent::Greedy(p1), Protocol::InLesion, seed)?);
    }
    if !bench.negatives.is_empty() {
        let neg_envs = build_envs(&bench.negatives, &sur, &bench.env)?;
        rows.push(eval_suite("negatives", &bench.negatives, &neg_envs, &full, Protocol::InGland, seed)?);
    }

    let get = |l: &str| rows.iter().find(|r| r.label == l).expect("row built above");
    let comparisons = vec![
        compare("full vs no-entropy-reward", get("full"), get("no-entropy-reward"))?,
        compare("full vs no-prompt", get("full"), get("no-prompt"))?,
        compare("full vs single-shot", get("full"), get("single-shot"))?,
        compare("full vs uniform-random", get("full"), get("uniform-random"))?,
    ];
    Ok(AblationReport {
        seed,
        env: bench.env,
        ppo: bench.ppo,
        surrogate_final_loss: sur.meta.final_loss,
        rows,
        comparisons,
        curves,
    })
}

fn summary_row(out: &mut String, r: &EvalReport) {
    let s = &r.summary;
    let _ = writeln!(
        out,
        "| {} | {} | {} | {:.3} ± {:.3} | {:.4} ± {:.4} | {:.3} | {} |",
        r.label, r.agent, r.protocol, s.mean_dice, s.std_dice, s.mean_fpr, s.std_fpr, s.mean_sensitivity, s.n
    );
}

const SUMMARY_HEADER: &str = "| variant | agent | prompt | Dice | FPR | sensitivity | n |\n|---|---|---|---|---|---|---|\n";

/// Markdown tables for a single evaluation.
pub fn report_markdown(r: &EvalReport) -> String {
    let mut out = format!("# Evaluation: {}\n\n{SUMMARY_HEADER}", r.label);
    summary_row(&mut out, r);
    let n = &r.summary.negatives;
    let _ = writeln!(
        out,
        "\n## Negative-case rule (threshold {} voxels)\n\n| | called positive | called negative |\n|---|---|---|\n| lesion | {} | {} |\n| lesion-free | {} | {} |",
        r.negative_threshold, n.true_positive, n.false_negative, n.false_positive, n.true_negative
    );
    let _ = writeln!(
        out,
        "\n## Cases\n\n| case | prompt | offset | Dice | initial Dice | FPR | voxels | steps | negative |\n|---|---|---|---|---|---|---|---|---|"
    );
    for c in &r.cases {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |d| format!("{d:.3}"));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {:.4} | {} | {} | {} |",
            c.case,
            c.prompt,
            c.prompt_offset.map_or("-".into(), |o| o.to_string()),
            f(c.dice),
            f(c.initial_dice),
            c.fpr,
            c.voxels,
            c.steps,
            c.negative
        );
    }
    out
}

/// Tables shaped like component ablation, entropy-weight sweep, robustness
/// and over-segmentation summaries.
pub fn ablation_markdown(a: &AblationReport) -> String {
    let mut out = String::from("# Ablations\n\n");
    let _ = writeln!(
        out,
        "Seed {}, horizon {}, full method beta = {}, {} PPO updates of {} episodes.\n",
        a.seed, a.env.horizon, a.env.beta, a.ppo.total_updates, a.ppo.batch_episodes
    );
    let section = |out: &mut String, title: &str, labels: &[&str]| {
        let _ = write!(out, "## {title}\n\n{SUMMARY_HEADER}");
        for l in labels {
            if let Some(r) = a.row(l) {
                summary_row(out, r);
            }
        }
        out.push('\n');
    };
    section(
        &mut out,
        "Method components",
        &["full", "no-prompt", "no-entropy-reward", "single-channel", "single-shot", "uniform-random"],
    );
    let beta_rows: Vec<String> = a.rows.iter().filter(|r| r.label.starts_with("beta=")).map(|r| r.label.clone()).collect();
    section(&mut out, "Entropy weight", &beta_rows.iter().map(String::as_str).collect::<Vec<_>>());
    section(&mut out, "Perturbed prompts", &["full", "full/perturbed", "single-shot", "single-shot/perturbed"]);
    if let (Some(f), Some(fp), Some(s), Some(sp)) = (
        a.mean_dice("full"),
        a.mean_dice("full/perturbed"),
        a.mean_dice("single-shot"),
        a.mean_dice("single-shot/perturbed"),
    ) {
        let _ = writeln!(out, "Dice drop under perturbation: policy {:.3}, single-shot {:.3}.\n", f - fp, s - sp);
    }
    if let Some(r) = a.row("negatives") {
        let n = &r.summary.negatives;
        let pos = a.row("full").map(|f| f.summary.negatives);
        let _ = writeln!(
            out,
            "## Negative-case rule (threshold {} voxels)\n\n| | called positive | called negative |\n|---|---|---|\n| lesion | {} | {} |\n| lesion-free | {} | {} |\n",
            r.negative_threshold,
            pos.map_or(0, |p| p.true_positive),
            pos.map_or(0, |p| p.false_negative),
            n.false_positive,
            n.true_negative
        );
    }
    let _ = writeln!(out, "## Paired comparisons\n\n| comparison | mean A | mean B | t | p |\n|---|---|---|---|---|");
    for c in &a.comparisons {
        let _ = writeln!(
            out,
            "| {} | {:.3} | {:.3} | {:.2} | {:.4} |",
            c.label, c.mean_a, c.mean_b, c.test.t, c.test.p_value
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grow::GrowConfig;
    use crate::phantom::{generate, PhantomSpec};
    use crate::volume::EntropyField;

    fn cases(n: usize) -> (Vec<PhantomSample<f64>>, Vec<SegEnv<f64>>) {
        let cfg = EnvConfig {
            grow: GrowConfig::desk(),
            ..EnvConfig::default()
        };
        let data: Vec<PhantomSample<f64>> = (0..n)
            .map(|i| {
                generate(&PhantomSpec {
                    rng_seed: i as u64,
                    dims: crate::volume::Dims::cube(24),
                    lesion_radius_range: (3.0, 4.0),
                    ..PhantomSpec::default()
                })
                .unwrap()
            })
            .collect();
        // oracle gates: entropy high exactly on the lesion border
        let envs = data
            .iter()
            .map(|s| {
                let ring = s.truth.dilate();
                let e = EntropyField::new(
                    s.truth.dims(),
                    (0..s.truth.dims().len())
                        .map(|i| if ring.get_linear(i) && !s.truth.get_linear(i) { 0.6 } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                let x = crate::volume::Volume::filled(s.truth.dims(), 3, 0.5);
                SegEnv::new(Arc::new(x), Some(Arc::new(s.truth.clone())), Arc::new(e), &cfg).unwrap()
            })
            .collect();
        (data, envs)
    }

    #[test]
    fn single_shot_with_oracle_gates_is_exact_in_lesion() {
        let (data, envs) = cases(4);
        let r = eval_suite("t", &data, &envs, &Agent::SingleShot, Protocol::InLesion, 3).unwrap();
        assert_eq!(r.summary.n, 4);
        assert!(r.cases.iter().all(|c| c.dice.unwrap() > 0.999 && c.prompt_offset == Some(0)));
        assert_eq!(r.summary.negatives.true_positive, 4);
        let again = eval_suite("t", &data, &envs, &Agent::SingleShot, Protocol::InLesion, 3).unwrap();
        assert_eq!(r, again);
        let p = eval_suite("p", &data, &envs, &Agent::SingleShot, Protocol::Perturbed { max_offset: 3 }, 3).unwrap();
        assert!(p.cases.iter().all(|c| (1..=3).contains(&c.prompt_offset.unwrap())));
        assert!(p.summary.mean_dice < r.summary.mean_dice);
        let md = report_markdown(&p);
        assert!(md.contains("| p | single-shot | perturbed(3) |"));
    }

    #[test]
    fn random_agent_is_reproducible() {
        let (data, envs) = cases(3);
        let arch = PolicyArch::default();
        let a = eval_suite("r", &data, &envs, &Agent::UniformRandom(arch), Protocol::InLesion, 9).unwrap();
        let b = eval_suite("r", &data, &envs, &Agent::UniformRandom(arch), Protocol::InLesion, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.cases.iter().all(|c| c.steps >= 1));
    }

    #[test]
    fn variability_is_zero_with_exact_gates() {
        let (data, envs) = cases(2);
        let v = prompt_variability(&data, &envs, &Agent::SingleShot, 4, 1).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|c| c.std < 1e-12 && c.dice.len() == 4));
    }
}
