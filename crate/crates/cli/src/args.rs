use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use seedgrow::VoxelIndex;

#[derive(Debug, Parser)]
#[command(name = "seedgrow", version, about = "Promptable region-growing segmentation with a learned re-seeding agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a phantom dataset and its manifest.
    GenerateDataset(GenerateArgs),
    /// Fit the surrogate probability model on the training split.
    TrainSurrogate(TrainArgs),
    /// Train the re-seeding policy.
    TrainAgent(TrainAgentArgs),
    /// Grow one region from a seed.
    Grow(GrowArgs),
    /// Prompt, then refine with the policy until the mask stabilises.
    Infer(InferArgs),
    /// Evaluate a trained policy on the test and negative splits.
    Eval(EvalArgs),
    /// Train and compare ablated variants.
    Ablate(AblateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(short = 'c', long = "config")]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides paths.data_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory (overrides paths.data_dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainAgentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Surrogate parameters (.spm).
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// Output policy (.ppm); the training log goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides ppo.total_updates.
    #[arg(long)]
    pub updates: Option<usize>,
    /// Write the last update's rollout batch here (.epl).
    #[arg(long)]
    pub episode_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GrowArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input volume (.svf).
    #[arg(long)]
    pub volume: PathBuf,
    /// Single-channel entropy field (.svf).
    #[arg(long, conflicts_with = "surrogate", required_unless_present = "surrogate")]
    pub entropy: Option<PathBuf>,
    /// Surrogate parameters used to compute the entropy field.
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// Seed voxel `a,b,c`.
    #[arg(long)]
    pub seed: VoxelIndex,
    #[arg(long)]
    pub tau_sigma: Option<f64>,
    #[arg(long)]
    pub tau_e: Option<f64>,
    /// Neighbourhood radius, `r` or `ra,rb,rc`.
    #[arg(long, value_parser = parse_radius)]
    pub radius: Option<VoxelIndex>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Output mask (.svm).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub volume: PathBuf,
    /// User prompt `a,b,c`.
    #[arg(long)]
    pub prompt: VoxelIndex,
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    #[arg(long, conflicts_with = "single_shot")]
    pub policy: Option<PathBuf>,
    /// Grow from the prompt only, without the policy.
    #[arg(long)]
    pub single_shot: bool,
    /// Ground truth (.svm) for reporting Dice.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output mask (.svm).
    #[arg(long)]
    pub out: PathBuf,
    /// Write the mask after every step plus `trace.json` here.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Report directory (default `<run_dir>/eval`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report directory (default `<run_dir>/ablation`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides ppo.total_updates for every trained policy.
    #[arg(long)]
    pub updates: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Address to listen on, e.g. 127.0.0.1:8080.
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Directory of UI assets served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn parse_radius(s: &str) -> Result<VoxelIndex, String> {
    if let Ok(r) = s.trim().parse::<usize>() {
        return Ok(VoxelIndex::splat(r));
    }
    s.parse::<VoxelIndex>().map_err(|e| e.to_string())
}
