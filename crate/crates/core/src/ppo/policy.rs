use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::error::{Error, Result};
use crate::io;
use crate::optim::AdamState;
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::volume::{Dims, Mask, Volume, VoxelIndex};

const PPM_MAGIC: &str = "PPM1";

/// Shape of the actor-critic.
///
/// The observation is the image channels plus the mask, average-pooled to
/// `pool_grid³` and fed to a two-layer tanh trunk. Actions are the cells of
/// an `action_grid³` partition; each cell's logit is a trunk readout plus a
/// small per-cell network shared across cells. The per-cell features include
/// whether the current mask lies within `near_radius` of the cell centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyArch {
    pub channels: usize,
    pub pool_grid: usize,
    pub action_grid: usize,
    pub trunk: [usize; 2],
    pub cell_hidden: usize,
    pub near_radius: usize,
}

impl Default for PolicyArch {
    fn default() -> Self {
        PolicyArch {
            channels: 3,
            pool_grid: 8,
            action_grid: 8,
            trunk: [32, 32],
            cell_hidden: 8,
            near_radius: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wp: usize,
    bp: usize,
    wv: usize,
    bv: usize,
    ca: usize,
    cb: usize,
    cv: usize,
    total: usize,
}

impl PolicyArch {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::invalid("channels", "must be >= 1"));
        }
        if self.pool_grid == 0 || self.action_grid == 0 {
            return Err(Error::invalid("pool_grid", "grids must be >= 1"));
        }
        if self.trunk.contains(&0) || self.cell_hidden == 0 {
            return Err(Error::invalid("trunk", "layer widths must be >= 1"));
        }
        Ok(())
    }

    pub fn n_global(&self) -> usize {
        (self.channels + 1) * self.pool_grid.pow(3)
    }

    /// Pooled means (image + mask), centre mask bit and mask-nearby bit.
    pub fn n_cell_features(&self) -> usize {
        self.channels + 3
    }

    pub fn n_actions(&self) -> usize {
        self.action_grid.pow(3)
    }

    fn layout(&self) -> Layout {
        let [h1, h2] = self.trunk;
        let (f, a, fc, hc) = (self.n_global(), self.n_actions(), self.n_cell_features(), self.cell_hidden);
        let w1 = 0;
        let b1 = w1 + h1 * f;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let wp = b2 + h2;
        let bp = wp + a * h2;
        let wv = bp + a;
        let bv = wv + h2;
        let ca = bv + 1;
        let cb = ca + hc * fc;
        let cv = cb + hc;
        Layout {
            w1,
            b1,
            w2,
            b2,
            wp,
            bp,
            wv,
            bv,
            ca,
            cb,
            cv,
            total: cv + hc,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }

    /// Full-resolution voxel an action cell maps to: the centre of the cell.
    pub fn action_voxel(&self, dims: Dims, cell: usize) -> VoxelIndex {
        let g = self.action_grid;
        let (i, j, k) = (cell / (g * g), (cell / g) % g, cell % g);
        let centre = |n: usize, i: usize| (i * n / g + (i + 1) * n / g) / 2;
        VoxelIndex::new(centre(dims.0, i), centre(dims.1, j), centre(dims.2, k))
    }

    /// Cell containing a voxel.
    pub fn cell_of(&self, dims: Dims, v: VoxelIndex) -> usize {
        let g = self.action_grid;
        let idx = |n: usize, x: usize| (0..g).rev().find(|&i| i * n / g <= x).unwrap_or(0);
        (idx(dims.0, v.a) * g + idx(dims.1, v.b)) * g + idx(dims.2, v.c)
    }
}

/// Encoded state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub global: Vec<T>,
    /// `n_actions × n_cell_features`, row per cell.
    pub cells: Vec<T>,
}

fn bounds(n: usize, g: usize, i: usize) -> (usize, usize) {
    (i * n / g, (i + 1) * n / g)
}

/// Average of `field` over each cell of a `g³` partition of `dims`.
fn pool<T: Real>(dims: Dims, g: usize, field: impl Fn(usize) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(g * g * g);
    for i in 0..g {
        let (a0, a1) = bounds(dims.0, g, i);
        for j in 0..g {
            let (b0, b1) = bounds(dims.1, g, j);
            for k in 0..g {
                let (c0, c1) = bounds(dims.2, g, k);
                let mut s = T::zero();
                for a in a0..a1 {
                    for b in b0..b1 {
                        let row = (a * dims.1 + b) * dims.2;
                        for c in c0..c1 {
                            s = s + field(row + c);
                        }
                    }
                }
                let n = (a1 - a0) * (b1 - b0) * (c1 - c0);
                out.push(s / T::from_usize_lossy(n));
            }
        }
    }
    out
}

pub fn encode<T: Real>(arch: &PolicyArch, volume: &Volume<T>, mask: &Mask) -> Result<Observation<T>> {
    let dims = volume.dims();
    if volume.channels() != arch.channels {
        return Err(Error::invalid(
            "channels",
            format!("policy expects {} channels, volume has {}", arch.channels, volume.channels()),
        ));
    }
    if mask.dims() != dims {
        return Err(Error::DimMismatch {
            expected: dims,
            actual: mask.dims(),
        });
    }
    let min_dim = dims.0.min(dims.1).min(dims.2);
    if min_dim < arch.pool_grid || min_dim < arch.action_grid {
        return Err(Error::invalid("pool_grid", format!("grid larger than volume {dims}")));
    }
    let mask_val = |i: usize| if mask.get_linear(i) { T::one() } else { T::zero() };

    let mut global = Vec::with_capacity(arch.n_global());
    for ch in 0..arch.channels {
        let x = volume.channel(ch);
        global.extend(pool(dims, arch.pool_grid, |i| x[i]));
    }
    global.extend(pool(dims, arch.pool_grid, mask_val));

    let ga = arch.action_grid;
    let mut pooled: Vec<Vec<T>> = (0..arch.channels)
        .map(|ch| {
            let x = volume.channel(ch);
            pool(dims, ga, |i| x[i])
        })
        .collect();
    pooled.push(pool(dims, ga, mask_val));
    let near = mask.dilate_by(arch.near_radius);
    let fc = arch.n_cell_features();
    let mut cells = Vec::with_capacity(arch.n_actions() * fc);
    for cell in 0..arch.n_actions() {
        let v = arch.action_voxel(dims, cell);
        cells.extend(pooled.iter().map(|p| p[cell]));
        cells.push(if mask.get(v) { T::one() } else { T::zero() });
        cells.push(if near.get(v) { T::one() } else { T::zero() });
    }
    Ok(Observation { global, cells })
}

/// Categorical distribution over action cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    log_norm: T,
}

impl<T: Real> ActionDistribution<T> {
    pub fn from_logits(logits: Vec<T>) -> Self {
        let max = logits.iter().fold(T::neg_infinity(), |m, &l| m.max(l));
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        let probs = exps.into_iter().map(|e| e / z).collect();
        ActionDistribution {
            logits,
            probs,
            log_norm: max + z.ln(),
        }
    }

    pub fn log_prob(&self, k: usize) -> T {
        self.logits[k] - self.log_norm
    }

    pub fn entropy(&self) -> T {
        self.probs
            .iter()
            .zip(&self.logits)
            .filter(|(p, _)| **p > T::zero())
            .map(|(&p, &l)| -p * (l - self.log_norm))
            .sum()
    }

    /// Argmax; ties go to the lowest index.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (k, &l) in self.logits.iter().enumerate() {
            if l > self.logits[best] {
                best = k;
            }
        }
        best
    }

    /// Inverse-CDF draw.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (k, p) in self.probs.iter().enumerate() {
            let p = p.to_f64_lossy();
            if p > 0.0 {
                last = k;
                acc += p;
                if u < acc {
                    return k;
                }
            }
        }
        last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action<T> {
    pub voxel: VoxelIndex,
    pub cell: usize,
    pub log_prob: T,
    pub value: T,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    h1: Vec<T>,
    h2: Vec<T>,
    cell_h: Vec<T>,
    pub dist: ActionDistribution<T>,
    pub value: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub updates_run: usize,
    pub env_steps: usize,
    /// Entropy-bonus weight the policy was trained with.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    pub arch: PolicyArch,
    pub theta: Vec<T>,
    pub adam: AdamState,
    pub meta: PolicyMeta,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

impl<T: Real> PolicyParams<T> {
    pub fn new(arch: PolicyArch, theta: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.n_params() {
            return Err(Error::invalid(
                "theta",
                format!("{} parameters, architecture needs {}", theta.len(), arch.n_params()),
            ));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("theta", "non-finite parameter"));
        }
        Ok(PolicyParams {
            adam: AdamState::new(theta.len()),
            arch,
            theta,
            meta: PolicyMeta::default(),
        })
    }

    /// Weights ~ N(0, 1/fan_in), zero biases; the action head starts near
    /// zero so the initial policy is close to uniform.
    pub fn init(arch: PolicyArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let l = arch.layout();
        let mut rng = rng::stream(seed, Purpose::PolicyInit, 0);
        let mut theta = vec![T::zero(); l.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, scale: f64| {
            for t in &mut theta[range] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *t = T::lit(scale * z / (fan_in as f64).sqrt());
            }
        };
        let [h1, h2] = arch.trunk;
        fill(l.w1..l.b1, arch.n_global(), 1.0);
        fill(l.w2..l.b2, h1, 1.0);
        fill(l.wp..l.bp, h2, 0.01);
        fill(l.wv..l.bv, h2, 1.0);
        fill(l.ca..l.cb, arch.n_cell_features(), 1.0);
        fill(l.cv..l.total, arch.cell_hidden, 0.1);
        Ok(Self::new(arch, theta)?.freeze())
    }

    /// Rounds parameters through `f32` so persisted and in-memory policies agree.
    pub fn freeze(mut self) -> Self {
        for t in &mut self.theta {
            *t = T::lit(t.to_f32().unwrap_or(f32::NAN) as f64);
        }
        self
    }

    pub fn encode(&self, volume: &Volume<T>, mask: &Mask) -> Result<Observation<T>> {
        encode(&self.arch, volume, mask)
    }

    pub fn forward(&self, obs: &Observation<T>) -> Forward<T> {
        let a = &self.arch;
        let l = a.layout();
        let th = &self.theta;
        let [n1, n2] = a.trunk;
        let f = a.n_global();
        let h1: Vec<T> = (0..n1)
            .map(|i| (dot(&th[l.w1 + i * f..l.w1 + (i + 1) * f], &obs.global) + th[l.b1 + i]).tanh())
            .collect();
        let h2: Vec<T> = (0..n2)
            .map(|i| (dot(&th[l.w2 + i * n1..l.w2 + (i + 1) * n1], &h1) + th[l.b2 + i]).tanh())
            .collect();
        let value = dot(&th[l.wv..l.bv], &h2) + th[l.bv];
        let (fc, hc) = (a.n_cell_features(), a.cell_hidden);
        let mut cell_h = Vec::with_capacity(a.n_actions() * hc);
        let logits = (0..a.n_actions())
            .map(|k| {
                let z = &obs.cells[k * fc..(k + 1) * fc];
                let mut s = T::zero();
                for j in 0..hc {
                    let u = (dot(&th[l.ca + j * fc..l.ca + (j + 1) * fc], z) + th[l.cb + j]).tanh();
                    s = s + th[l.cv + j] * u;
                    cell_h.push(u);
                }
                dot(&th[l.wp + k * n2..l.wp + (k + 1) * n2], &h2) + th[l.bp + k] + s
            })
            .collect();
        Forward {
            h1,
            h2,
            cell_h,
            dist: ActionDistribution::from_logits(logits),
            value,
        }
    }

    /// Accumulates into `grad` the gradient of a loss whose partials with
    /// respect to the logits and the value are `dlogits` and `dvalue`.
    pub fn backward(&self, obs: &Observation<T>, fwd: &Forward<T>, dlogits: &[T], dvalue: T, grad: &mut [T]) {
        let a = &self.arch;
        let l = a.layout();
        let th = &self.theta;
        let [n1, n2] = a.trunk;
        let f = a.n_global();
        let (fc, hc) = (a.n_cell_features(), a.cell_hidden);

        let mut dh2: Vec<T> = (0..n2).map(|i| th[l.wv + i] * dvalue).collect();
        for i in 0..n2 {
            grad[l.wv + i] = grad[l.wv + i] + dvalue * fwd.h2[i];
        }
        grad[l.bv] = grad[l.bv] + dvalue;

        for (k, &dl) in dlogits.iter().enumerate() {
            if dl == T::zero() {
                continue;
            }
            let row = l.wp + k * n2;
            for i in 0..n2 {
                grad[row + i] = grad[row + i] + dl * fwd.h2[i];
                dh2[i] = dh2[i] + dl * th[row + i];
            }
            grad[l.bp + k] = grad[l.bp + k] + dl;
            let z = &obs.cells[k * fc..(k + 1) * fc];
            for j in 0..hc {
                let u = fwd.cell_h[k * hc + j];
                grad[l.cv + j] = grad[l.cv + j] + dl * u;
                let dpre = dl * th[l.cv + j] * (T::one() - u * u);
                let r = l.ca + j * fc;
                for (m, &zm) in z.iter().enumerate() {
                    grad[r + m] = grad[r + m] + dpre * zm;
                }
                grad[l.cb + j] = grad[l.cb + j] + dpre;
            }
        }

        let mut dh1 = vec![T::zero(); n1];
        for i in 0..n2 {
            let dpre = dh2[i] * (T::one() - fwd.h2[i] * fwd.h2[i]);
            if dpre == T::zero() {
                continue;
            }
            let row = l.w2 + i * n1;
            for j in 0..n1 {
                grad[row + j] = grad[row + j] + dpre * fwd.h1[j];
                dh1[j] = dh1[j] + dpre * th[row + j];
            }
            grad[l.b2 + i] = grad[l.b2 + i] + dpre;
        }
        for i in 0..n1 {
            let dpre = dh1[i] * (T::one() - fwd.h1[i] * fwd.h1[i]);
            if dpre == T::zero() {
                continue;
            }
            let row = l.w1 + i * f;
            for (j, &x) in obs.global.iter().enumerate() {
                grad[row + j] = grad[row + j] + dpre * x;
            }
            grad[l.b1 + i] = grad[l.b1 + i] + dpre;
        }
    }

    pub fn distribution(&self, state: &EnvState<T>) -> Result<ActionDistribution<T>> {
        Ok(self.forward(&self.encode(&state.volume, &state.mask)?).dist)
    }

    /// Picks the next seed.
    pub fn act(&self, state: &EnvState<T>, rng: &mut impl rand::Rng, mode: ActMode) -> Result<Action<T>> {
        let obs = self.encode(&state.volume, &state.mask)?;
        Ok(self.act_on(&obs, state.volume.dims(), rng, mode).0)
    }

    pub(crate) fn act_on(&self, obs: &Observation<T>, dims: Dims, rng: &mut impl rand::Rng, mode: ActMode) -> (Action<T>, Forward<T>) {
        let fwd = self.forward(obs);
        let cell = match mode {
            ActMode::Greedy => fwd.dist.greedy(),
            ActMode::Sample => fwd.dist.sample(rng),
        };
        let action = Action {
            voxel: self.arch.action_voxel(dims, cell),
            cell,
            log_prob: fwd.dist.log_prob(cell),
            value: fwd.value,
        };
        (action, fwd)
    }
}

/// Greedy policy as a [`crate::env::SeedPolicy`].
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a, T>(pub &'a PolicyParams<T>);

impl<T: Real> crate::env::SeedPolicy<T> for Greedy<'_, T> {
    fn choose(&mut self, state: &EnvState<T>) -> Result<VoxelIndex> {
        let mut unused = rng::stream(0, Purpose::Eval, 0);
        Ok(self.0.act(state, &mut unused, ActMode::Greedy)?.voxel)
    }
}

/// Uniform choice among action cells; the baseline for the learned policy.
#[derive(Debug, Clone)]
pub struct UniformCells {
    pub arch: PolicyArch,
    pub rng: rng::Rng,
}

impl<T: Real> crate::env::SeedPolicy<T> for UniformCells {
    fn choose(&mut self, state: &EnvState<T>) -> Result<VoxelIndex> {
        let k = self.rng.random_range(0..self.arch.n_actions());
        Ok(self.arch.action_voxel(state.volume.dims(), k))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PpmHeader {
    magic: String,
    arch: PolicyArch,
    meta: PolicyMeta,
    n_params: usize,
    adam_step: u64,
    /// Payload holds `theta`, then Adam's first and second moments.
    moments: bool,
    dtype: String,
}

pub fn write_policy<T: Real>(path: impl AsRef<Path>, params: &PolicyParams<T>) -> Result<()> {
    let header = PpmHeader {
        magic: PPM_MAGIC.into(),
        arch: params.arch,
        meta: params.meta.clone(),
        n_params: params.theta.len(),
        adam_step: params.adam.step,
        moments: true,
        dtype: "f32le".into(),
    };
    let mut payload = io::f32_payload(&params.theta);
    payload.extend(io::f32_payload(&params.adam.m));
    payload.extend(io::f32_payload(&params.adam.v));
    io::write_bytes(path.as_ref(), &io::join_header(&header, &payload))
}

pub fn read_policy<T: Real>(path: impl AsRef<Path>) -> Result<PolicyParams<T>> {
    let path = path.as_ref();
    let (h, payload): (PpmHeader, _) = io::split_header(&io::read_bytes(path)?, path)?;
    let bad = |field, message: String| Error::Format {
        path: path.to_path_buf(),
        field,
        message,
    };
    if h.magic != PPM_MAGIC {
        return Err(bad("magic", format!("expected {PPM_MAGIC}, got {}", h.magic)));
    }
    if h.dtype != "f32le" {
        return Err(bad("dtype", format!("unsupported {}", h.dtype)));
    }
    h.arch.validate().map_err(|e| bad("arch", e.to_string()))?;
    let n = h.n_params;
    if n != h.arch.n_params() {
        return Err(bad("n_params", format!("{n} does not match architecture ({})", h.arch.n_params())));
    }
    let blocks = if h.moments { 3 } else { 1 };
    let all: Vec<f64> = io::parse_f32_payload(&payload, n * blocks, path, "n_params")?;
    let theta = all[..n].iter().map(|&x| T::lit(x)).collect();
    let mut p = PolicyParams::new(h.arch, theta).map_err(|e| bad("payload", e.to_string()))?;
    if h.moments {
        p.adam.m = all[n..2 * n].to_vec();
        p.adam.v = all[2 * n..].to_vec();
    }
    p.adam.step = h.adam_step;
    p.meta = h.meta;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::sync::Arc;

    fn small() -> PolicyArch {
        PolicyArch {
            channels: 2,
            pool_grid: 2,
            action_grid: 2,
            trunk: [5, 4],
            cell_hidden: 3,
            near_radius: 1,
        }
    }

    #[test]
    fn action_cells_map_to_centres() {
        let arch = PolicyArch::default();
        let d = Dims::cube(32);
        assert_eq!(arch.action_voxel(d, 0), VoxelIndex::splat(2));
        assert_eq!(arch.action_voxel(d, 511), VoxelIndex::splat(30));
        assert_eq!(arch.action_voxel(d, 8 * 8 + 1), VoxelIndex::new(6, 2, 6));
        for k in [0, 17, 300, 511] {
            assert_eq!(arch.cell_of(d, arch.action_voxel(d, k)), k);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let l = vec![0.3f64, -1.2, 2.0, 2.0, 0.0];
        let a = ActionDistribution::from_logits(l.clone());
        let b = ActionDistribution::from_logits(l.iter().map(|x| x + 37.5).collect());
        for (p, q) in a.probs.iter().zip(&b.probs) {
            assert!((p - q).abs() < 1e-9);
        }
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.greedy(), 2);
        assert_eq!(b.greedy(), 2);
    }

    #[test]
    fn uniform_logits_break_ties_low() {
        let a = ActionDistribution::from_logits(vec![0.0f64; 512]);
        assert_eq!(a.greedy(), 0);
        assert!((a.entropy() - (512f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_always_sampled() {
        let mut l = vec![0.0f64; 64];
        l[9] = 1000.0;
        let a = ActionDistribution::from_logits(l);
        let mut rng = stream(1, Purpose::Eval, 0);
        assert!((0..1000).all(|_| a.sample(&mut rng) == 9));
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let a = ActionDistribution::from_logits(vec![0.0f64, 1.0, -0.5, 2.0]);
        let mut rng = stream(5, Purpose::Eval, 1);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[a.sample(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&a.probs) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?} {:?}", a.probs);
        }
    }

    #[test]
    fn encoding_pools_channels_and_mask() {
        let arch = small();
        let d = Dims::cube(4);
        let x = Volume::from_fn(d, 2, |ch, v| if ch == 0 { v.a as f64 } else { 1.0 }).unwrap();
        let m = Mask::from_fn(d, |v| v.a < 2 && v.b < 2 && v.c < 2);
        let obs = encode(&arch, &x, &m).unwrap();
        assert_eq!(obs.global.len(), arch.n_global());
        // channel 0 averages a over a 2-voxel slab: 0.5 in the low half, 2.5 in the high half
        assert_eq!(obs.global[0], 0.5);
        assert_eq!(obs.global[7], 2.5);
        assert_eq!(obs.global[16], 1.0);
        assert_eq!(obs.global[17], 0.0);
        assert_eq!(obs.cells.len(), 8 * arch.n_cell_features());
        // cell 0: pooled (0.5, 1, 1), centre (1,1,1) in the mask and near it
        assert_eq!(&obs.cells[..5], &[0.5, 1.0, 1.0, 1.0, 1.0]);
        // cell 7: centre (3,3,3) is two voxels from the mask, beyond the near radius
        assert_eq!(&obs.cells[7 * 5..8 * 5], &[2.5, 1.0, 0.0, 0.0, 0.0]);
        let wide = encode(&PolicyArch { near_radius: 2, ..arch }, &x, &m).unwrap();
        assert_eq!(wide.cells[8 * 5 - 1], 1.0);
        assert!(encode(&PolicyArch { channels: 3, ..arch }, &x, &m).is_err());
    }

    #[test]
    fn act_reports_log_prob_of_choice() {
        let arch = small();
        let d = Dims::cube(4);
        let x = Volume::from_fn(d, 2, |ch, v| (ch + v.a + 2 * v.c) as f64 / 10.0).unwrap();
        let p = PolicyParams::<f64>::init(arch, 3).unwrap();
        let state = EnvState {
            volume: Arc::new(x),
            mask: Mask::empty(d),
            step_index: 0,
            terminal: false,
        };
        let mut rng = stream(0, Purpose::Eval, 0);
        let g = p.act(&state, &mut rng, ActMode::Greedy).unwrap();
        let dist = p.distribution(&state).unwrap();
        assert_eq!(g.cell, dist.greedy());
        assert!((g.log_prob - dist.probs[g.cell].ln()).abs() < 1e-12);
        assert_eq!(g.voxel, arch.action_voxel(d, g.cell));
    }

    #[test]
    fn ppm_round_trip() {
        let arch = small();
        let mut p = PolicyParams::<f64>::init(arch, 9).unwrap();
        p.adam.step = 4;
        p.adam.m[3] = 0.25;
        p.meta.beta = Some(0.8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ppm");
        write_policy(&path, &p).unwrap();
        let q: PolicyParams<f64> = read_policy(&path).unwrap();
        assert_eq!(p, q);
        std::fs::write(&path, b"{\"magic\":\"PPM1\"}\n").unwrap();
        assert!(read_policy::<f64>(&path).is_err());
    }
}
