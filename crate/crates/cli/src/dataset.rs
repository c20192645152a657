//! Phantom datasets on disk.
//!
//! ```text
//! data_dir/
//!   manifest.json
//!   sample_0000.svf          volume
//!   sample_0000.truth.svm    lesion mask
//!   sample_0000.gland.svm    gland mask
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seedgrow::io::{read_mask, read_volume, write_mask_with_spacing, write_volume};
use seedgrow::phantom::{generate, PhantomSpec};
use seedgrow::rng::derive_seed;
use seedgrow::{PhantomSample, VoxelIndex};

use crate::config::DatasetConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub stem: String,
    pub split: Split,
    pub rng_seed: u64,
    pub lesion_count: usize,
    pub lesion_centres: Vec<VoxelIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }
}

pub fn volume_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.svf"))
}

pub fn truth_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.truth.svm"))
}

pub fn gland_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.gland.svm"))
}

/// Phantom spec of sample `index`: the base spec with a derived seed, and
/// no lesions for the negative split.
pub fn sample_spec(base: &PhantomSpec, seed: u64, index: usize, split: Split) -> PhantomSpec {
    PhantomSpec {
        rng_seed: derive_seed(seed ^ base.rng_seed, index as u64),
        lesion_count: if split == Split::Negative { 0 } else { base.lesion_count },
        ..base.clone()
    }
}

fn layout(cfg: &DatasetConfig) -> Vec<Split> {
    std::iter::repeat_n(Split::Train, cfg.train)
        .chain(std::iter::repeat_n(Split::Test, cfg.test))
        .chain(std::iter::repeat_n(Split::Negative, cfg.negatives))
        .collect()
}

/// Generates every sample in memory (same specs as [`write_dataset`]).
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> CliResult<Vec<(Split, PhantomSample)>> {
    layout(cfg)
        .into_par_iter()
        .enumerate()
        .map(|(i, split)| Ok((split, generate(&sample_spec(&cfg.phantom, seed, i, split))?)))
        .collect()
}

pub fn write_dataset(dir: &Path, cfg: &DatasetConfig, seed: u64) -> CliResult<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    let samples = generate_dataset(cfg, seed)?;
    let spacing = cfg.phantom.spacing_mm;
    let entries = samples
        .par_iter()
        .enumerate()
        .map(|(index, (split, s))| {
            let stem = format!("sample_{index:04}");
            write_volume(volume_path(dir, &stem), &s.volume)?;
            write_mask_with_spacing(truth_path(dir, &stem), &s.truth, spacing)?;
            write_mask_with_spacing(gland_path(dir, &stem), &s.gland, spacing)?;
            Ok(ManifestEntry {
                index,
                rng_seed: sample_spec(&cfg.phantom, seed, index, *split).rng_seed,
                lesion_count: s.lesion_centres.len(),
                lesion_centres: s.lesion_centres.clone(),
                split: *split,
                stem,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = Manifest {
        seed,
        phantom: cfg.phantom.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(manifest)
}

pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> CliResult<PhantomSample> {
    Ok(PhantomSample {
        volume: read_volume(volume_path(dir, &entry.stem))?,
        truth: read_mask(truth_path(dir, &entry.stem))?,
        gland: read_mask(gland_path(dir, &entry.stem))?,
        lesion_centres: entry.lesion_centres.clone(),
    })
}

/// Loads one split in manifest order.
pub fn load_split(dir: &Path, split: Split) -> CliResult<Vec<PhantomSample>> {
    let manifest = Manifest::read(dir)?;
    let entries: Vec<&ManifestEntry> = manifest.entries(split).collect();
    let out: Vec<PhantomSample> = entries
        .par_iter()
        .map(|e| load_sample(dir, e))
        .collect::<CliResult<_>>()?;
    if out.is_empty() {
        return Err(CliError::data(format!("{} has no {split:?} samples", dir.display())));
    }
    Ok(out)
}
