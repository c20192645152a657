use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{featurize, FeatureSet, FeatureStack};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::volume::{entropy_map, EntropyField, Mask, ProbabilityField, Volume, DICE_EPS};

const CHUNK: usize = 4096;
const SPM_MAGIC: &str = "SPM1";

/// Shape of the surrogate. `hidden == 0` is plain logistic regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateArch {
    pub feature_set: FeatureSet,
    pub channels: usize,
    pub hidden: usize,
}

impl SurrogateArch {
    pub fn n_features(&self) -> usize {
        self.feature_set.count(self.channels)
    }

    pub fn n_params(&self) -> usize {
        let f = self.n_features();
        if self.hidden == 0 {
            f + 1
        } else {
            self.hidden * f + 2 * self.hidden + 1
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// Mean minibatch loss per epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams<T> {
    pub arch: SurrogateArch,
    pub theta: Vec<T>,
    pub meta: TrainingMeta,
}

impl<T: Real> SurrogateParams<T> {
    pub fn new(arch: SurrogateArch, theta: Vec<T>) -> Result<Self> {
        if theta.len() != arch.n_params() {
            return Err(Error::invalid(
                "theta",
                format!("{} parameters, architecture needs {}", theta.len(), arch.n_params()),
            ));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("theta", "non-finite parameter"));
        }
        Ok(SurrogateParams {
            arch,
            theta,
            meta: TrainingMeta::default(),
        })
    }

    pub fn zeros(arch: SurrogateArch) -> Self {
        SurrogateParams {
            arch,
            theta: vec![T::zero(); arch.n_params()],
            meta: TrainingMeta::default(),
        }
    }

    /// Zero biases, weights ~ N(0, 1/fan_in) from the fixed PRNG.
    pub fn init(arch: SurrogateArch, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Purpose::SurrogateInit, 0);
        let mut p = Self::zeros(arch);
        let f = arch.n_features();
        let mut normal = |fan_in: usize| -> T {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z / (fan_in as f64).sqrt())
        };
        if arch.hidden == 0 {
            for w in &mut p.theta[..f] {
                *w = normal(f);
            }
        } else {
            let h = arch.hidden;
            for w in &mut p.theta[..h * f] {
                *w = normal(f);
            }
            for w in &mut p.theta[h * f + h..h * f + 2 * h] {
                *w = normal(h);
            }
        }
        p
    }

    /// Rounds parameters through `f32` so persisted and in-memory models agree.
    pub fn freeze(mut self) -> Self {
        for t in &mut self.theta {
            *t = T::lit(t.to_f32().unwrap_or(f32::NAN) as f64);
        }
        self
    }

    #[inline]
    fn logit(&self, f: &[T], hidden: &mut [T]) -> T {
        let n = f.len();
        let th = &self.theta;
        if self.arch.hidden == 0 {
            return dot(&th[..n], f) + th[n];
        }
        let h = self.arch.hidden;
        let (w1, rest) = th.split_at(h * n);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut z = b2[0];
        for j in 0..h {
            let a = (dot(&w1[j * n..(j + 1) * n], f) + b1[j]).tanh();
            hidden[j] = a;
            z = z + w2[j] * a;
        }
        z
    }

    fn check_features(&self, f: &FeatureStack<T>) -> Result<()> {
        if f.n_features != self.arch.n_features() {
            return Err(Error::invalid(
                "surrogate",
                format!("model expects {} features, got {}", self.arch.n_features(), f.n_features),
            ));
        }
        Ok(())
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Sigmoid clamped to `[eps, 1 - eps]`; the flag reports whether it clamped.
#[inline]
fn sigmoid<T: Real>(z: T) -> (T, bool) {
    let p = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

pub fn predict_features<T: Real>(params: &SurrogateParams<T>, f: &FeatureStack<T>) -> Result<ProbabilityField<T>> {
    params.check_features(f)?;
    let h = params.arch.hidden;
    let data: Vec<T> = (0..f.n_voxels())
        .into_par_iter()
        .with_min_len(CHUNK)
        .map_init(
            || vec![T::zero(); h],
            |buf, lin| sigmoid(params.logit(f.voxel(lin), buf)).0,
        )
        .collect();
    ProbabilityField::new(f.dims, data)
}

/// Voxel-wise probabilities for `x`. Pure: identical inputs give identical bits.
pub fn predict<T: Real>(x: &Volume<T>, params: &SurrogateParams<T>) -> Result<ProbabilityField<T>> {
    if x.channels() != params.arch.channels {
        return Err(Error::invalid(
            "channels",
            format!("surrogate expects {} channels, volume has {}", params.arch.channels, x.channels()),
        ));
    }
    predict_features(params, &featurize(x, params.arch.feature_set))
}

pub fn entropy_of<T: Real>(x: &Volume<T>, params: &SurrogateParams<T>) -> Result<EntropyField<T>> {
    Ok(entropy_map(&predict(x, params)?))
}

/// Soft-Dice loss of one sample and its gradient w.r.t. theta.
fn sample_loss_and_gradient<T: Real>(params: &SurrogateParams<T>, f: &FeatureStack<T>, truth: &Mask) -> Result<(T, Vec<T>)> {
    params.check_features(f)?;
    if f.dims != truth.dims() {
        return Err(Error::DimMismatch {
            expected: f.dims,
            actual: truth.dims(),
        });
    }
    let n = f.n_voxels();
    let h = params.arch.hidden;
    let nf = f.n_features;
    let probs: Vec<(T, bool)> = (0..n)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map_init(|| vec![T::zero(); h], |buf, lin| sigmoid(params.logit(f.voxel(lin), buf)))
        .collect();

    let mut sum_p = T::zero();
    let mut inter = T::zero();
    let mut sum_t = T::zero();
    for (lin, &(p, _)) in probs.iter().enumerate() {
        sum_p = sum_p + p;
        if truth.get_linear(lin) {
            inter = inter + p;
            sum_t = sum_t + T::one();
        }
    }
    let eps = T::lit(DICE_EPS);
    let two = T::lit(2.0);
    let denom = sum_p + sum_t + eps;
    let numer = two * inter + eps;
    let loss = T::one() - numer / denom;
    // dL/dp_v = (numer - 2 t_v denom) / denom^2
    let d_off = numer / (denom * denom);
    let d_on = (numer - two * denom) / (denom * denom);

    let n_params = params.arch.n_params();
    let chunks: Vec<Vec<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let mut g = vec![T::zero(); n_params];
            let mut hid = vec![T::zero(); h];
            for lin in ci * CHUNK..((ci + 1) * CHUNK).min(n) {
                let (p, clamped) = probs[lin];
                if clamped {
                    continue;
                }
                let dl_dp = if truth.get_linear(lin) { d_on } else { d_off };
                let dz = dl_dp * p * (T::one() - p);
                let fv = f.voxel(lin);
                if h == 0 {
                    for k in 0..nf {
                        g[k] = g[k] + dz * fv[k];
                    }
                    g[nf] = g[nf] + dz;
                    continue;
                }
                params.logit(fv, &mut hid);
                let w2_off = h * nf + h;
                for j in 0..h {
                    let w2 = params.theta[w2_off + j];
                    g[w2_off + j] = g[w2_off + j] + dz * hid[j];
                    let da = dz * w2 * (T::one() - hid[j] * hid[j]);
                    let row = j * nf;
                    for k in 0..nf {
                        g[row + k] = g[row + k] + da * fv[k];
                    }
                    g[h * nf + j] = g[h * nf + j] + da;
                }
                g[w2_off + h] = g[w2_off + h] + dz;
            }
            g
        })
        .collect();
    let mut grad = vec![T::zero(); n_params];
    for g in chunks {
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc = *acc + x;
        }
    }
    Ok((loss, grad))
}

/// Mean soft-Dice loss over a featurised batch and its analytic gradient.
pub fn loss_and_gradient<T: Real>(params: &SurrogateParams<T>, batch: &[(&FeatureStack<T>, &Mask)]) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "empty"));
    }
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); params.arch.n_params()];
    for (f, truth) in batch {
        let (l, g) = sample_loss_and_gradient(params, f, truth)?;
        loss = loss + l;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc = *acc + x;
        }
    }
    let scale = T::one() / T::from_usize_lossy(batch.len());
    Ok((loss * scale, grad.into_iter().map(|g| g * scale).collect()))
}

/// Analytic gradient of the mean soft-Dice loss over `(volume, truth)` pairs.
pub fn gradient<T: Real>(params: &SurrogateParams<T>, batch: &[(Volume<T>, Mask)]) -> Result<Vec<T>> {
    let feats: Vec<FeatureStack<T>> = batch.iter().map(|(x, _)| featurize(x, params.arch.feature_set)).collect();
    let pairs: Vec<(&FeatureStack<T>, &Mask)> = feats.iter().zip(batch.iter().map(|(_, m)| m)).collect();
    Ok(loss_and_gradient(params, &pairs)?.1)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpmHeader {
    magic: String,
    arch: SurrogateArch,
    meta: TrainingMeta,
    n_params: usize,
    dtype: String,
}

pub fn write_params<T: Real>(path: impl AsRef<Path>, params: &SurrogateParams<T>) -> Result<()> {
    let header = SpmHeader {
        magic: SPM_MAGIC.into(),
        arch: params.arch,
        meta: params.meta.clone(),
        n_params: params.theta.len(),
        dtype: "f32le".into(),
    };
    io::write_bytes(path.as_ref(), &io::join_header(&header, &io::f32_payload(&params.theta)))
}

pub fn read_params<T: Real>(path: impl AsRef<Path>) -> Result<SurrogateParams<T>> {
    let path = path.as_ref();
    let (h, payload): (SpmHeader, _) = io::split_header(&io::read_bytes(path)?, path)?;
    let bad = |field, message: String| Error::Format {
        path: path.to_path_buf(),
        field,
        message,
    };
    if h.magic != SPM_MAGIC {
        return Err(bad("magic", format!("expected {SPM_MAGIC}, got {}", h.magic)));
    }
    if h.dtype != "f32le" {
        return Err(bad("dtype", format!("unsupported {}", h.dtype)));
    }
    if h.n_params != h.arch.n_params() {
        return Err(bad("n_params", format!("{} does not match architecture ({})", h.n_params, h.arch.n_params())));
    }
    let theta = io::parse_f32_payload(&payload, h.n_params, path, "n_params")?;
    let mut p = SurrogateParams::new(h.arch, theta).map_err(|e| bad("payload", e.to_string()))?;
    p.meta = h.meta;
    Ok(p)
}
