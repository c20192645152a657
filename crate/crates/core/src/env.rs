//! The segmentation MDP: state `(image, mask)`, action = next seed voxel,
//! transition = region growing from that seed (the new mask replaces the
//! old one), reward = Dice-loss improvement plus a weighted mean-entropy
//! bonus over the new mask.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grow::{GrowConfig, RegionGrower};
use crate::scalar::Real;
use crate::surrogate::{entropy_of, SurrogateParams};
use crate::volume::{dice_loss, mask_l1_diff, EntropyField, Mask, Volume, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Weight of the entropy bonus.
    pub beta: f64,
    /// Maximum number of agent steps per episode.
    pub horizon: usize,
    pub grow: GrowConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            beta: 0.8,
            horizon: 10,
            grow: GrowConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid("beta", "must be finite and >= 0"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        self.grow.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState<T> {
    pub volume: Arc<Volume<T>>,
    pub mask: Mask,
    pub step_index: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: EnvState<T>,
    pub action: VoxelIndex,
    pub reward: T,
    /// `L(y_t) - L(y_{t+1})` against the ground truth.
    pub dice_reward: T,
    /// `beta * mean entropy over y_{t+1}`.
    pub entropy_reward: T,
    pub next_state: EnvState<T>,
    pub done: bool,
}

/// Reward for replacing `current` by `next`.
///
/// Returns `(total, dice term, entropy term)`; the entropy mean over an
/// empty mask is taken as zero.
pub fn reward_terms<T: Real>(current: &Mask, next: &Mask, truth: &Mask, entropy: &EntropyField<T>, beta: f64) -> Result<(T, T, T)> {
    let dice = dice_loss::<T, _>(current, truth)? - dice_loss::<T, _>(next, truth)?;
    if entropy.dims() != next.dims() {
        return Err(Error::DimMismatch {
            expected: next.dims(),
            actual: entropy.dims(),
        });
    }
    let bonus = T::lit(beta) * entropy.mean_over(next);
    Ok((dice + bonus, dice, bonus))
}

pub fn reward_of<T: Real>(current: &Mask, next: &Mask, truth: &Mask, entropy: &EntropyField<T>, beta: f64) -> Result<T> {
    Ok(reward_terms(current, next, truth, entropy, beta)?.0)
}

/// One episode's environment: the volume, its cached entropy map and
/// region-growing gates, and the ground truth when training.
#[derive(Debug, Clone)]
pub struct SegEnv<T> {
    volume: Arc<Volume<T>>,
    truth: Option<Arc<Mask>>,
    entropy: Arc<EntropyField<T>>,
    grower: Arc<RegionGrower>,
    cfg: EnvConfig,
}

impl<T: Real> SegEnv<T> {
    pub fn new(volume: Arc<Volume<T>>, truth: Option<Arc<Mask>>, entropy: Arc<EntropyField<T>>, cfg: &EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let grower = Arc::new(RegionGrower::new(&volume, &entropy, &cfg.grow)?);
        Self::from_parts(volume, truth, entropy, grower, cfg)
    }

    /// Entropy from the frozen surrogate, computed once here.
    pub fn with_surrogate(volume: Arc<Volume<T>>, truth: Option<Arc<Mask>>, surrogate: &SurrogateParams<T>, cfg: &EnvConfig) -> Result<Self> {
        let entropy = Arc::new(entropy_of(&volume, surrogate)?);
        Self::new(volume, truth, entropy, cfg)
    }

    /// Reuses precomputed gates, e.g. across episodes on the same case.
    pub fn from_parts(
        volume: Arc<Volume<T>>,
        truth: Option<Arc<Mask>>,
        entropy: Arc<EntropyField<T>>,
        grower: Arc<RegionGrower>,
        cfg: &EnvConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let dims = volume.dims();
        for d in [entropy.dims(), grower.dims()].into_iter().chain(truth.as_ref().map(|t| t.dims())) {
            if d != dims {
                return Err(Error::DimMismatch {
                    expected: dims,
                    actual: d,
                });
            }
        }
        Ok(SegEnv {
            volume,
            truth,
            entropy,
            grower,
            cfg: *cfg,
        })
    }

    /// Same case under another configuration; the gates are rebuilt only
    /// when the growing parameters change.
    pub fn with_config(&self, cfg: &EnvConfig) -> Result<Self> {
        let grower = if cfg.grow == self.cfg.grow {
            Arc::clone(&self.grower)
        } else {
            cfg.validate()?;
            Arc::new(RegionGrower::new(&self.volume, &self.entropy, &cfg.grow)?)
        };
        Self::from_parts(Arc::clone(&self.volume), self.truth.clone(), Arc::clone(&self.entropy), grower, cfg)
    }

    pub fn volume(&self) -> &Arc<Volume<T>> {
        &self.volume
    }

    pub fn truth(&self) -> Option<&Mask> {
        self.truth.as_deref()
    }

    pub fn entropy(&self) -> &EntropyField<T> {
        &self.entropy
    }

    pub fn grower(&self) -> &RegionGrower {
        &self.grower
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// `y_0 = g(x, seed)`.
    pub fn reset(&self, initial_seed: VoxelIndex) -> Result<EnvState<T>> {
        let mask = self.grower.grow(initial_seed)?.mask;
        Ok(EnvState {
            volume: Arc::clone(&self.volume),
            mask,
            step_index: 0,
            terminal: false,
        })
    }

    pub fn step(&self, state: &EnvState<T>, action: VoxelIndex) -> Result<Transition<T>> {
        if state.terminal {
            return Err(Error::TerminalState { step: state.step_index });
        }
        if state.mask.dims() != self.volume.dims() {
            return Err(Error::DimMismatch {
                expected: self.volume.dims(),
                actual: state.mask.dims(),
            });
        }
        let next_mask = self.grower.grow(action)?.mask;
        let (reward, dice_reward, entropy_reward) = match &self.truth {
            Some(truth) => reward_terms(&state.mask, &next_mask, truth, &self.entropy, self.cfg.beta)?,
            None => {
                let bonus = T::lit(self.cfg.beta) * self.entropy.mean_over(&next_mask);
                (bonus, T::zero(), bonus)
            }
        };
        let stable = mask_l1_diff(&state.mask, &next_mask)? == 0;
        let done = stable || state.step_index + 1 >= self.cfg.horizon;
        let next_state = EnvState {
            volume: Arc::clone(&self.volume),
            mask: next_mask,
            step_index: state.step_index + 1,
            terminal: done,
        };
        Ok(Transition {
            state: state.clone(),
            action,
            reward,
            dice_reward,
            entropy_reward,
            next_state,
            done,
        })
    }
}

/// Anything that picks the next seed from a state.
pub trait SeedPolicy<T> {
    fn choose(&mut self, state: &EnvState<T>) -> Result<VoxelIndex>;
}

impl<T, F> SeedPolicy<T> for F
where
    F: FnMut(&EnvState<T>) -> Result<VoxelIndex>,
{
    fn choose(&mut self, state: &EnvState<T>) -> Result<VoxelIndex> {
        self(state)
    }
}

/// Runs one episode from `initial_seed` until the mask stabilises or the horizon.
pub fn rollout<T: Real>(env: &SegEnv<T>, initial_seed: VoxelIndex, policy: &mut impl SeedPolicy<T>) -> Result<Vec<Transition<T>>> {
    let mut state = env.reset(initial_seed)?;
    let mut out = Vec::with_capacity(env.config().horizon);
    while !state.terminal {
        let action = policy.choose(&state)?;
        let tr = env.step(&state, action)?;
        state = tr.next_state.clone();
        out.push(tr);
    }
    Ok(out)
}

pub fn discounted_return<T: Real>(rewards: &[T], gamma: f64) -> T {
    let g = T::lit(gamma);
    rewards.iter().rev().fold(T::zero(), |acc, &r| r + g * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    /// 8³ volume whose admissible set is a 2x2x2 "lesion" block plus the
    /// background, separated by a one-voxel high-entropy shell.
    fn fixture() -> (SegEnv<f64>, Mask) {
        let d = Dims::cube(8);
        let truth = Mask::from_fn(d, |v| (3..5).contains(&v.a) && (3..5).contains(&v.b) && (3..5).contains(&v.c));
        let shell = truth.dilate();
        let entropy = EntropyField::new(
            d,
            (0..d.len())
                .map(|i| if shell.get_linear(i) && !truth.get_linear(i) { 0.6 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let x = Volume::filled(d, 3, 0.5f64);
        let cfg = EnvConfig {
            beta: 0.0,
            horizon: 10,
            grow: GrowConfig::desk(),
        };
        let env = SegEnv::new(Arc::new(x), Some(Arc::new(truth.clone())), Arc::new(entropy), &cfg).unwrap();
        (env, truth)
    }

    #[test]
    fn repeating_the_seed_is_a_fixed_point() {
        let (env, truth) = fixture();
        let s0 = env.reset(VoxelIndex::splat(3)).unwrap();
        assert_eq!(s0.mask, truth);
        let tr = env.step(&s0, VoxelIndex::splat(4)).unwrap();
        assert!(tr.done);
        assert_eq!(tr.next_state.mask, s0.mask);
        assert_eq!(tr.dice_reward, 0.0);
        assert!(matches!(env.step(&tr.next_state, VoxelIndex::splat(3)), Err(Error::TerminalState { .. })));
    }

    #[test]
    fn jumping_into_the_lesion_earns_about_one() {
        let (env, truth) = fixture();
        // start in the background: mask is everything outside the shell
        let s0 = env.reset(VoxelIndex::splat(0)).unwrap();
        assert!(s0.mask.linear_indices().all(|i| !truth.get_linear(i)));
        let tr = env.step(&s0, VoxelIndex::splat(3)).unwrap();
        assert_eq!(tr.next_state.mask, truth);
        let eps = crate::DICE_EPS;
        let expected = (1.0 - eps / (s0.mask.count() as f64 + 8.0 + eps)) - (1.0 - (16.0 + eps) / (16.0 + eps));
        assert!((tr.reward - expected).abs() < 1e-12);
        assert!((tr.reward - 1.0).abs() < 1e-6);
        assert!(!tr.done);
    }

    #[test]
    fn entropy_bonus_on_constant_field() {
        let d = Dims::cube(3);
        let e = EntropyField::constant(d, std::f64::consts::LN_2).unwrap();
        let m = Mask::from_voxels(d, [VoxelIndex::splat(1)]).unwrap();
        let truth = Mask::from_voxels(d, [VoxelIndex::splat(0)]).unwrap();
        let r: f64 = reward_of(&m, &m, &truth, &e, 0.8).unwrap();
        assert!((r - 0.8 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r - 0.5545).abs() < 1e-4);
        let zero: f64 = reward_of(&m, &m, &truth, &e, 0.0).unwrap();
        assert_eq!(zero, 0.0);
        // empty next mask: no bonus
        let empty = Mask::empty(d);
        let (_, _, bonus) = reward_terms::<f64>(&m, &empty, &truth, &e, 0.8).unwrap();
        assert_eq!(bonus, 0.0);
    }

    #[test]
    fn horizon_ends_episode() {
        let (env, _) = fixture();
        let cfg = EnvConfig { horizon: 3, ..*env.config() };
        let env = SegEnv::from_parts(env.volume().clone(), env.truth().cloned().map(Arc::new), Arc::new(env.entropy().clone()), Arc::new(env.grower().clone()), &cfg).unwrap();
        let mut flip = false;
        let mut policy = |_: &EnvState<f64>| {
            flip = !flip;
            Ok(if flip { VoxelIndex::splat(0) } else { VoxelIndex::splat(3) })
        };
        let eps = rollout(&env, VoxelIndex::splat(3), &mut policy).unwrap();
        assert_eq!(eps.len(), 3);
        assert!(eps.last().unwrap().done);
        assert!(eps[..2].iter().all(|t| !t.done));
    }

    #[test]
    fn discounted_return_matches_sum() {
        let r = [1.0f64, -0.5, 2.0];
        let g = 0.9;
        assert!((discounted_return(&r, g) - (1.0 - 0.45 + 2.0 * 0.81)).abs() < 1e-15);
    }
}
