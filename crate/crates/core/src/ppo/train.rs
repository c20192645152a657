use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{ActMode, Observation, PolicyArch, PolicyParams};
use crate::env::{EnvConfig, SegEnv, Transition};
use crate::error::{Error, Result};
use crate::phantom::{sample_seed_in_lesion, PhantomSample};
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::surrogate::SurrogateParams;
use crate::volume::{dice_loss, VoxelIndex};

const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Episodes collected per update.
    pub batch_episodes: usize,
    pub total_updates: usize,
    /// Passes over each batch.
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
    /// Global gradient-norm cap; 0 disables.
    pub max_grad_norm: f64,
    pub arch: PolicyArch,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 1e-3,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            batch_episodes: 32,
            total_updates: 150,
            epochs_per_batch: 4,
            minibatch_size: 64,
            normalize_advantages: true,
            max_grad_norm: 0.5,
            arch: PolicyArch::default(),
        }
    }
}

impl PpoConfig {
    pub fn paper() -> Self {
        PpoConfig {
            lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &'static str, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(field, msg)) };
        check(self.lr.is_finite() && self.lr > 0.0, "lr", "must be > 0")?;
        check((0.0..1.0).contains(&self.gamma), "gamma", "must be in [0, 1)")?;
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda", "must be in [0, 1]")?;
        check(self.clip.is_finite() && self.clip > 0.0, "clip", "must be > 0")?;
        check(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0, "entropy_coef", "must be >= 0")?;
        check(self.value_coef.is_finite() && self.value_coef >= 0.0, "value_coef", "must be >= 0")?;
        check(self.batch_episodes > 0, "batch_episodes", "must be >= 1")?;
        check(self.epochs_per_batch > 0, "epochs_per_batch", "must be >= 1")?;
        check(self.minibatch_size > 0, "minibatch_size", "must be >= 1")?;
        check(self.max_grad_norm.is_finite() && self.max_grad_norm >= 0.0, "max_grad_norm", "must be >= 0")?;
        self.arch.validate()
    }
}

/// Generalised advantage estimates for one trajectory; `bootstrap` is the
/// value after the last step (0 for a terminal end).
pub fn gae<T: Real>(rewards: &[T], values: &[T], bootstrap: T, gamma: f64, lambda: f64) -> Vec<T> {
    assert_eq!(rewards.len(), values.len());
    let (g, gl) = (T::lit(gamma), T::lit(gamma * lambda));
    let mut out = vec![T::zero(); rewards.len()];
    let mut next_value = bootstrap;
    let mut acc = T::zero();
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + g * next_value - values[t];
        acc = delta + gl * acc;
        out[t] = acc;
        next_value = values[t];
    }
    out
}

/// `G_t = Σ_k γ^k r_{t+k}` for every t.
pub fn discounted_returns<T: Real>(rewards: &[T], gamma: f64) -> Vec<T> {
    let g = T::lit(gamma);
    let mut out = vec![T::zero(); rewards.len()];
    let mut acc = T::zero();
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + g * acc;
        out[t] = acc;
    }
    out
}

/// One agent step with what the update needs.
#[derive(Debug, Clone)]
pub struct Step<T> {
    pub transition: Transition<T>,
    pub obs: Observation<T>,
    pub cell: usize,
    pub log_prob: T,
    pub value: T,
}

#[derive(Debug, Clone)]
pub struct Episode<T> {
    pub case: usize,
    pub initial_seed: VoxelIndex,
    pub steps: Vec<Step<T>>,
    /// Dice of `y_0` and of the final mask, when the truth is known.
    pub initial_dice: Option<T>,
    pub final_dice: Option<T>,
}

impl<T: Real> Episode<T> {
    pub fn total_reward(&self) -> T {
        self.steps.iter().map(|s| s.transition.reward).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition<T>> {
        self.steps.iter().map(|s| &s.transition)
    }
}

pub fn collect_episode<T: Real>(
    env: &SegEnv<T>,
    params: &PolicyParams<T>,
    case: usize,
    initial_seed: VoxelIndex,
    rng: &mut rng::Rng,
    mode: ActMode,
) -> Result<Episode<T>> {
    let dims = env.volume().dims();
    let mut state = env.reset(initial_seed)?;
    let dice = |m: &crate::volume::Mask| -> Result<Option<T>> { env.truth().map(|t| Ok(T::one() - dice_loss(m, t)?)).transpose() };
    let initial_dice = dice(&state.mask)?;
    let mut steps = Vec::with_capacity(env.config().horizon);
    while !state.terminal {
        let obs = params.encode(&state.volume, &state.mask)?;
        let (action, _) = params.act_on(&obs, dims, rng, mode);
        let transition = env.step(&state, action.voxel)?;
        state = transition.next_state.clone();
        steps.push(Step {
            transition,
            obs,
            cell: action.cell,
            log_prob: action.log_prob,
            value: action.value,
        });
    }
    Ok(Episode {
        case,
        initial_seed,
        final_dice: dice(&state.mask)?,
        initial_dice,
        steps,
    })
}

/// Training sample after advantage estimation.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub obs: Observation<T>,
    pub cell: usize,
    pub old_log_prob: T,
    pub advantage: T,
    pub ret: T,
}

/// GAE per episode (terminal at the last step), returns as advantage plus
/// value, then optional batch normalisation of the advantages.
pub fn build_samples<T: Real>(episodes: &[Episode<T>], cfg: &PpoConfig) -> Vec<Sample<T>> {
    let mut out = Vec::new();
    for ep in episodes {
        let rewards: Vec<T> = ep.steps.iter().map(|s| s.transition.reward).collect();
        let values: Vec<T> = ep.steps.iter().map(|s| s.value).collect();
        let adv = gae(&rewards, &values, T::zero(), cfg.gamma, cfg.gae_lambda);
        for ((s, a), v) in ep.steps.iter().zip(adv).zip(values) {
            out.push(Sample {
                obs: s.obs.clone(),
                cell: s.cell,
                old_log_prob: s.log_prob,
                advantage: a,
                ret: a + v,
            });
        }
    }
    if cfg.normalize_advantages && out.len() > 1 {
        let n = T::from_usize_lossy(out.len());
        let mean = out.iter().map(|s| s.advantage).sum::<T>() / n;
        let var = out.iter().map(|s| (s.advantage - mean) * (s.advantage - mean)).sum::<T>() / n;
        let sd = var.sqrt().max(T::lit(1e-8));
        for s in &mut out {
            s.advantage = (s.advantage - mean) / sd;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.approx_kl += o.approx_kl;
        self.clip_fraction += o.clip_fraction;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.policy *= s;
        self.value *= s;
        self.entropy *= s;
        self.approx_kl *= s;
        self.clip_fraction *= s;
    }
}

/// Mean PPO objective over `samples` (clipped policy term + value_coef ·
/// squared value error − entropy_coef · policy entropy) and its gradient.
pub fn loss_and_gradient<T: Real>(params: &PolicyParams<T>, samples: &[Sample<T>], cfg: &PpoConfig) -> (LossParts, Vec<T>) {
    let n = samples.len().max(1);
    let inv_n = T::one() / T::from_usize_lossy(n);
    let (eps, ce, cv) = (T::lit(cfg.clip), T::lit(cfg.entropy_coef), T::lit(cfg.value_coef));
    let partials: Vec<(LossParts, Vec<T>)> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![T::zero(); params.theta.len()];
            let mut parts = LossParts::default();
            for s in chunk {
                let fwd = params.forward(&s.obs);
                let dist = &fwd.dist;
                let logp = dist.log_prob(s.cell);
                let ratio = (logp - s.old_log_prob).exp();
                let a = s.advantage;
                let unclipped = ratio * a;
                let clipped = ratio.max(T::one() - eps).min(T::one() + eps) * a;
                let policy = -unclipped.min(clipped);
                let d_logp = if unclipped <= clipped { -ratio * a } else { T::zero() };
                let h = dist.entropy();
                let verr = fwd.value - s.ret;

                let dlogits: Vec<T> = dist
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let onehot = if j == s.cell { T::one() } else { T::zero() };
                        let dh = if p > T::zero() { -p * (dist.log_prob(j) + h) } else { T::zero() };
                        (d_logp * (onehot - p) - ce * dh) * inv_n
                    })
                    .collect();
                let dvalue = T::lit(2.0) * cv * verr * inv_n;
                params.backward(&s.obs, &fwd, &dlogits, dvalue, &mut grad);

                let policy = policy.to_f64_lossy();
                let value = (verr * verr).to_f64_lossy();
                let entropy = h.to_f64_lossy();
                parts.add(&LossParts {
                    total: policy + cfg.value_coef * value - cfg.entropy_coef * entropy,
                    policy,
                    value,
                    entropy,
                    approx_kl: (s.old_log_prob - logp).to_f64_lossy(),
                    clip_fraction: if (ratio - T::one()).abs() > eps { 1.0 } else { 0.0 },
                });
            }
            (parts, grad)
        })
        .collect();
    let mut grad = vec![T::zero(); params.theta.len()];
    let mut parts = LossParts::default();
    for (p, g) in &partials {
        parts.add(p);
        for (acc, &x) in grad.iter_mut().zip(g) {
            *acc = *acc + x;
        }
    }
    parts.scale(1.0 / n as f64);
    (parts, grad)
}

/// Clipped-objective update over one batch; returns the mean loss parts.
pub fn ppo_update<T: Real>(params: &mut PolicyParams<T>, episodes: &[Episode<T>], cfg: &PpoConfig, rng: &mut rng::Rng) -> Result<LossParts> {
    let samples = build_samples(episodes, cfg);
    if samples.is_empty() {
        return Err(Error::invalid("episodes", "empty transition buffer"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut mean = LossParts::default();
    let mut batches = 0usize;
    for epoch in 0..cfg.epochs_per_batch {
        order.shuffle(rng);
        for (mb, idx) in order.chunks(cfg.minibatch_size).enumerate() {
            let batch: Vec<Sample<T>> = idx.iter().map(|&i| samples[i].clone()).collect();
            let (parts, mut grad) = loss_and_gradient(params, &batch, cfg);
            let norm = grad.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
            if !parts.total.is_finite() || !norm.is_finite() {
                let adv = batch.iter().map(|s| s.advantage.to_f64_lossy()).fold(0.0f64, |m, a| m.max(a.abs()));
                let ret = batch.iter().map(|s| s.ret.to_f64_lossy()).fold(0.0f64, |m, r| m.max(r.abs()));
                return Err(Error::Numeric {
                    stage: "ppo update",
                    at: format!("update {} epoch {epoch} minibatch {mb}", params.meta.updates_run),
                    message: format!(
                        "loss {} (policy {}, value {}, entropy {}), grad norm {norm}, batch {} samples, max |advantage| {adv}, max |return| {ret}",
                        parts.total,
                        parts.policy,
                        parts.value,
                        parts.entropy,
                        batch.len()
                    ),
                });
            }
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                let s = T::lit(cfg.max_grad_norm / norm);
                for g in &mut grad {
                    *g = *g * s;
                }
            }
            params.adam.step(&mut params.theta, &grad, cfg.lr);
            mean.add(&parts);
            batches += 1;
        }
    }
    mean.scale(1.0 / batches as f64);
    params.meta.updates_run += 1;
    params.meta.env_steps += samples.len();
    Ok(mean)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub step: usize,
    pub env_steps: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_dice: f64,
    pub mean_episode_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Environments for a dataset, entropy maps computed once per case.
pub fn build_envs<T: Real>(dataset: &[PhantomSample<T>], surrogate: &SurrogateParams<T>, cfg: &EnvConfig) -> Result<Vec<SegEnv<T>>> {
    dataset
        .par_iter()
        .map(|s| {
            SegEnv::with_surrogate(
                std::sync::Arc::new(s.volume.clone()),
                Some(std::sync::Arc::new(s.truth.clone())),
                surrogate,
                cfg,
            )
        })
        .collect()
}

/// Called after every update with its record, the updated parameters and
/// the batch the update was computed from.
pub type Observer<'a, T> = dyn FnMut(&UpdateRecord, &PolicyParams<T>, &[Episode<T>]) -> Result<()> + 'a;

pub fn train_agent<T: Real>(
    dataset: &[PhantomSample<T>],
    surrogate: &SurrogateParams<T>,
    env_cfg: &EnvConfig,
    cfg: &PpoConfig,
    seed: u64,
    observer: &mut Observer<'_, T>,
) -> Result<PolicyParams<T>> {
    let envs = build_envs(dataset, surrogate, env_cfg)?;
    train_agent_on(dataset, &envs, cfg, seed, observer)
}

/// Training loop over prebuilt environments (`envs[i]` belongs to `dataset[i]`).
///
/// Each update samples `batch_episodes` cases and in-lesion start seeds from
/// per-episode streams, rolls out the current policy in parallel, then runs
/// the clipped update. The observer sees every update record.
pub fn train_agent_on<T: Real>(
    dataset: &[PhantomSample<T>],
    envs: &[SegEnv<T>],
    cfg: &PpoConfig,
    seed: u64,
    observer: &mut Observer<'_, T>,
) -> Result<PolicyParams<T>> {
    cfg.validate()?;
    if dataset.is_empty() || dataset.len() != envs.len() {
        return Err(Error::invalid("dataset", "need one environment per case and at least one case"));
    }
    let channels = dataset[0].volume.channels();
    let mut params = PolicyParams::init(PolicyArch { channels, ..cfg.arch }, seed)?;
    params.meta.beta = Some(envs[0].config().beta);
    for u in 0..cfg.total_updates {
        let episodes: Vec<Episode<T>> = (0..cfg.batch_episodes)
            .into_par_iter()
            .map(|e| {
                let mut rng = rng::stream(seed, Purpose::Rollout, (u * cfg.batch_episodes + e) as u64);
                let case = rng.random_range(0..dataset.len());
                let start = sample_seed_in_lesion(&dataset[case], rng.random())?;
                collect_episode(&envs[case], &params, case, start, &mut rng, ActMode::Sample)
            })
            .collect::<Result<_>>()?;
        let mut mb_rng = rng::stream(seed, Purpose::Minibatch, u as u64);
        let parts = ppo_update(&mut params, &episodes, cfg, &mut mb_rng)?;
        let n = episodes.len() as f64;
        let record = UpdateRecord {
            step: u + 1,
            env_steps: params.meta.env_steps,
            episodes: episodes.len(),
            mean_return: episodes.iter().map(|e| e.total_reward().to_f64_lossy()).sum::<f64>() / n,
            mean_dice: episodes.iter().map(|e| e.final_dice.map_or(0.0, |d| d.to_f64_lossy())).sum::<f64>() / n,
            mean_episode_len: episodes.iter().map(|e| e.steps.len() as f64).sum::<f64>() / n,
            policy_loss: parts.policy,
            value_loss: parts.value,
            entropy: parts.entropy,
            approx_kl: parts.approx_kl,
            clip_fraction: parts.clip_fraction,
        };
        observer(&record, &params, &episodes)?;
    }
    Ok(params.freeze())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::encode;
    use crate::volume::{Dims, Mask, Volume};

    fn arch() -> PolicyArch {
        PolicyArch {
            channels: 2,
            pool_grid: 2,
            action_grid: 2,
            trunk: [6, 5],
            cell_hidden: 3,
            near_radius: 1,
        }
    }

    fn toy_samples(p: &PolicyParams<f64>) -> Vec<Sample<f64>> {
        let d = Dims::cube(4);
        (0..3)
            .map(|i| {
                let x = Volume::from_fn(d, 2, |ch, v| ((v.a * 7 + v.b * 3 + v.c + ch * 5 + i * 11) % 13) as f64 / 13.0).unwrap();
                let m = Mask::from_fn(d, |v| (v.a + v.b + i) % 3 == 0);
                let obs = encode(&p.arch, &x, &m).unwrap();
                let lp = p.forward(&obs).dist.log_prob(i * 2);
                Sample {
                    obs,
                    cell: i * 2,
                    // ratios away from the clip kinks
                    old_log_prob: lp + [0.05, -0.4, 0.1][i],
                    advantage: [1.3, -0.7, 0.4][i],
                    ret: [0.5, -0.2, 1.1][i],
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut p = PolicyParams::<f64>::init(arch(), 11).unwrap();
        // larger head so policy and entropy terms have visible curvature
        for t in &mut p.theta {
            *t *= 3.0;
        }
        let cfg = PpoConfig {
            arch: arch(),
            entropy_coef: 0.05,
            ..PpoConfig::default()
        };
        let samples = toy_samples(&p);
        let (_, grad) = loss_and_gradient(&p, &samples, &cfg);
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..p.theta.len() {
            let mut q = p.clone();
            q.theta[i] += h;
            let up = loss_and_gradient(&q, &samples, &cfg).0.total;
            q.theta[i] -= 2.0 * h;
            let down = loss_and_gradient(&q, &samples, &cfg).0.total;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn clipped_branch_is_used_above_one_plus_eps() {
        let p = PolicyParams::<f64>::init(arch(), 2).unwrap();
        let mut s = toy_samples(&p).remove(0);
        let lp = p.forward(&s.obs).dist.log_prob(s.cell);
        s.old_log_prob = lp - 1.5f64.ln();
        s.advantage = 2.0;
        let cfg = PpoConfig {
            arch: arch(),
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let (parts, grad) = loss_and_gradient(&p, std::slice::from_ref(&s), &cfg);
        assert!((parts.policy + 1.2 * 2.0).abs() < 1e-12);
        assert_eq!(parts.clip_fraction, 1.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_advantage_gives_no_policy_gradient() {
        let p = PolicyParams::<f64>::init(arch(), 4).unwrap();
        let mut samples = toy_samples(&p);
        for s in &mut samples {
            s.advantage = 0.0;
        }
        let cfg = PpoConfig {
            arch: arch(),
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let (parts, grad) = loss_and_gradient(&p, &samples, &cfg);
        assert_eq!(parts.policy, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gae_limits() {
        let r = [1.0f64, 0.5, -2.0];
        let v = [0.3f64, -0.1, 0.7];
        let g = 0.9;
        // λ = 0: one-step TD errors
        let td = gae(&r, &v, 0.0, g, 0.0);
        let expect = [1.0 + g * -0.1 - 0.3, 0.5 + g * 0.7 + 0.1, -2.0 - 0.7];
        for (a, b) in td.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // λ = 1: discounted return minus value
        let mc = gae(&r, &v, 0.0, g, 1.0);
        let ret = discounted_returns(&r, g);
        for t in 0..3 {
            assert!((mc[t] - (ret[t] - v[t])).abs() < 1e-12);
        }
        assert!((ret[0] - (1.0 + g * 0.5 - g * g * 2.0)).abs() < 1e-12);
        assert_eq!(ret[0], crate::env::discounted_return(&r, g));
    }

    #[test]
    fn normalised_advantages_have_unit_scale() {
        let p = PolicyParams::<f64>::init(arch(), 4).unwrap();
        let d = Dims::cube(4);
        let x = std::sync::Arc::new(Volume::filled(d, 2, 0.5f64));
        let truth = std::sync::Arc::new(Mask::from_fn(d, |v| v.a < 2));
        let e = std::sync::Arc::new(crate::volume::EntropyField::constant(d, 0.0).unwrap());
        let env = SegEnv::new(x, Some(truth), e, &EnvConfig::default()).unwrap();
        let mut rng = rng::stream(0, Purpose::Rollout, 0);
        let eps: Vec<_> = (0..4)
            .map(|i| collect_episode(&env, &p, 0, VoxelIndex::splat(i % 4), &mut rng, ActMode::Sample).unwrap())
            .collect();
        let cfg = PpoConfig { arch: arch(), ..PpoConfig::default() };
        let s = build_samples(&eps, &cfg);
        let n = s.len() as f64;
        let mean = s.iter().map(|s| s.advantage).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
    }
}
