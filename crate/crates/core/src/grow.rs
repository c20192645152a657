//! Seeded region growing gated by local intensity homogeneity and
//! surrogate entropy.
//!
//! A voxel is admissible when the population std of its `±radius` window
//! (max over channels) is below `tau_sigma` and its entropy is below
//! `tau_e`. Both gates depend on the image alone, so the grown region is the
//! connected component of admissible voxels around the seed, whatever order
//! the frontier is visited in.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{std_field, Dims, EntropyField, Mask, Volume, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowConfig {
    pub radius: VoxelIndex,
    pub tau_sigma: f64,
    pub tau_e: f64,
    pub max_iters: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig::paper()
    }
}

impl GrowConfig {
    /// Neighbourhood (3,3,3), tau_sigma 0.3, tau_e 0.1.
    pub fn paper() -> Self {
        GrowConfig {
            radius: VoxelIndex::splat(3),
            tau_sigma: 0.3,
            tau_e: 0.1,
            max_iters: 64,
        }
    }

    /// Same thresholds with a (1,1,1) neighbourhood for 32³ grids.
    pub fn desk() -> Self {
        GrowConfig {
            radius: VoxelIndex::splat(1),
            ..GrowConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_sigma.is_finite() && self.tau_sigma > 0.0) {
            return Err(Error::invalid("tau_sigma", "must be > 0"));
        }
        if !(self.tau_e > 0.0 && self.tau_e <= std::f64::consts::LN_2) {
            return Err(Error::invalid("tau_e", "must lie in (0, ln 2]"));
        }
        if self.radius.a == 0 || self.radius.b == 0 || self.radius.c == 0 {
            return Err(Error::invalid("radius", "components must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowResult {
    pub mask: Mask,
    pub iterations_run: usize,
    pub converged: bool,
    /// Voxels added by each iteration.
    pub frontier_history: Vec<usize>,
}

/// Frontier visit order. Both orders produce the same mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traversal {
    Forward,
    Reverse,
}

/// Precomputed gates for one (volume, entropy, config) triple; grows any
/// number of seeds cheaply.
#[derive(Debug, Clone)]
pub struct RegionGrower {
    dims: Dims,
    cfg: GrowConfig,
    admissible: Vec<bool>,
}

impl RegionGrower {
    pub fn new<T: Real>(x: &Volume<T>, entropy: &EntropyField<T>, cfg: &GrowConfig) -> Result<Self> {
        cfg.validate()?;
        if x.dims() != entropy.dims() {
            return Err(Error::DimMismatch {
                expected: x.dims(),
                actual: entropy.dims(),
            });
        }
        let sigma = std_field(x, cfg.radius);
        let tau_sigma = T::lit(cfg.tau_sigma);
        let tau_e = T::lit(cfg.tau_e);
        let admissible = sigma
            .iter()
            .zip(entropy.data())
            .map(|(&s, &e)| s < tau_sigma && e < tau_e)
            .collect();
        Ok(RegionGrower {
            dims: x.dims(),
            cfg: *cfg,
            admissible,
        })
    }

    /// Builds a grower from an explicit admissibility map.
    pub fn from_admissible(dims: Dims, admissible: Vec<bool>, cfg: &GrowConfig) -> Result<Self> {
        cfg.validate()?;
        if admissible.len() != dims.len() {
            return Err(Error::invalid("admissible", "length does not match dims"));
        }
        Ok(RegionGrower {
            dims,
            cfg: *cfg,
            admissible,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn config(&self) -> &GrowConfig {
        &self.cfg
    }

    pub fn admissible_mask(&self) -> Mask {
        Mask::from_bytes(self.dims, self.admissible.iter().map(|&b| b as u8).collect())
            .expect("bool map is binary")
    }

    pub fn is_admissible(&self, v: VoxelIndex) -> bool {
        self.admissible[self.dims.linear(v)]
    }

    pub fn grow(&self, seed: VoxelIndex) -> Result<GrowResult> {
        self.grow_ordered(seed, Traversal::Forward)
    }

    pub fn grow_ordered(&self, seed: VoxelIndex, order: Traversal) -> Result<GrowResult> {
        self.dims.check(seed)?;
        let dims = self.dims;
        let radius = self.cfg.radius;
        let mut mask = Mask::empty(dims);
        mask.set(seed, true);
        let mut frontier = vec![dims.linear(seed)];
        let mut history = Vec::new();
        let mut converged = false;
        let mut window = Vec::with_capacity(radius.window_volume());

        while history.len() < self.cfg.max_iters {
            if order == Traversal::Reverse {
                frontier.reverse();
            }
            let mut added = Vec::new();
            for &included in &frontier {
                window.clear();
                dims.for_each_in_window(dims.voxel(included), radius, |n| window.push(n));
                if order == Traversal::Reverse {
                    window.reverse();
                }
                for &n in &window {
                    if !mask.get_linear(n) && self.admissible[n] {
                        mask.set_linear(n, true);
                        added.push(n);
                    }
                }
            }
            history.push(added.len());
            if added.is_empty() {
                converged = true;
                break;
            }
            frontier = added;
        }
        Ok(GrowResult {
            mask,
            iterations_run: history.len(),
            converged,
            frontier_history: history,
        })
    }

    /// Uncapped breadth-first flood fill over the admissible set plus the seed.
    pub fn flood_fill(&self, seed: VoxelIndex) -> Result<Mask> {
        self.dims.check(seed)?;
        let dims = self.dims;
        let mut mask = Mask::empty(dims);
        mask.set(seed, true);
        let mut queue = VecDeque::from([dims.linear(seed)]);
        while let Some(cur) = queue.pop_front() {
            dims.for_each_in_window(dims.voxel(cur), self.cfg.radius, |n| {
                if !mask.get_linear(n) && self.admissible[n] {
                    mask.set_linear(n, true);
                    queue.push_back(n);
                }
            });
        }
        Ok(mask)
    }
}

/// Region growing from `seed` with the iteration cap of `cfg`.
pub fn grow<T: Real>(x: &Volume<T>, entropy: &EntropyField<T>, seed: VoxelIndex, cfg: &GrowConfig) -> Result<GrowResult> {
    x.dims().check(seed)?;
    RegionGrower::new(x, entropy, cfg)?.grow(seed)
}

/// Reference flood fill; equals `grow(..).mask` whenever `grow` converged.
pub fn grow_oracle<T: Real>(x: &Volume<T>, entropy: &EntropyField<T>, seed: VoxelIndex, cfg: &GrowConfig) -> Result<Mask> {
    x.dims().check(seed)?;
    RegionGrower::new(x, entropy, cfg)?.flood_fill(seed)
}
