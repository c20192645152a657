//! Run configuration: one TOML document binding every hyper-parameter.
//!
//! Unknown keys are rejected at every level. Missing keys take the values
//! in [`RunConfig::default`], which `configs/default.toml` spells out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seedgrow::phantom::PhantomSpec;
use seedgrow::ppo::PpoConfig;
use seedgrow::surrogate::SurrogateTrainConfig;
use seedgrow::{EnvConfig, GrowConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub surrogate: SurrogateTrainConfig,
    pub env: EnvSection,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    /// Defaults to `<run_dir>/surrogate.spm`.
    pub surrogate: Option<PathBuf>,
    /// Defaults to `<run_dir>/policy.ppm`.
    pub policy: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            surrogate: None,
            policy: None,
        }
    }
}

impl Paths {
    pub fn surrogate_path(&self) -> PathBuf {
        self.surrogate.clone().unwrap_or_else(|| self.run_dir.join("surrogate.spm"))
    }

    pub fn policy_path(&self) -> PathBuf {
        self.policy.clone().unwrap_or_else(|| self.run_dir.join("policy.ppm"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train: usize,
    pub test: usize,
    /// Lesion-free phantoms for the negative-case protocol.
    pub negatives: usize,
    pub phantom: PhantomSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: 24,
            test: 20,
            negatives: 20,
            phantom: PhantomSpec::default(),
        }
    }
}

/// Environment settings. Same fields as [`EnvConfig`], but the grow gates
/// default to the small-grid neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub beta: f64,
    pub horizon: usize,
    pub grow: GrowConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        let env = EnvConfig::default();
        EnvSection {
            beta: env.beta,
            horizon: env.horizon,
            grow: GrowConfig::desk(),
        }
    }
}

impl EnvSection {
    pub fn to_env(&self) -> EnvConfig {
        EnvConfig {
            beta: self.beta,
            horizon: self.horizon,
            grow: self.grow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Chebyshev distance of perturbed prompts outside the lesion.
    pub perturb_offset: usize,
    pub betas: Vec<f64>,
    /// Prompts per case for the variability protocol; 0 skips it.
    pub prompts_per_case: usize,
    /// Adds the channel-0-only ablation (retrains the surrogate and policy).
    pub single_channel: bool,
    /// Write a policy checkpoint every N updates; 0 disables.
    pub checkpoint_every: usize,
    /// Overrides the window-volume negative threshold.
    pub negative_threshold: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            perturb_offset: 4,
            betas: vec![0.0, 0.4, 0.8],
            prompts_per_case: 5,
            single_channel: false,
            checkpoint_every: 0,
            negative_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub bind: String,
    pub session_ttl_secs: u64,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1:8080".into(),
            session_ttl_secs: 1800,
            static_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())).with_field("config"))?;
        Self::from_toml(&text)
    }

    /// Loads `path` when given, otherwise the built-in defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.dataset.phantom.validate()?;
        self.surrogate.validate()?;
        self.env.to_env().validate()?;
        self.ppo.validate()?;
        if self.dataset.train == 0 {
            return Err(CliError::config("dataset.train must be >= 1").with_field("dataset.train"));
        }
        if self.eval.betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(CliError::config("eval.betas must be finite and >= 0").with_field("eval.betas"));
        }
        Ok(())
    }

    pub fn negative_threshold(&self) -> usize {
        self.eval
            .negative_threshold
            .unwrap_or_else(|| self.env.grow.radius.window_volume())
    }
}
