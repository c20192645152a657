//! Seeded synthetic multi-channel volumes with lesion ground truth.
//!
//! A phantom is a large ellipsoidal "gland" on a dim background, holding
//! zero or more lesions. Each lesion is the union of a main lobe and a
//! satellite lobe, both ellipsoids with per-axis radius jitter and a
//! low-frequency radial perturbation. Lesion intensity is the gland level
//! plus a per-channel multiple of `lesion_contrast`, modulated by a smooth
//! random field of standard deviation `heterogeneity`. Gaussian noise is
//! added everywhere, then intensities are clamped to `[0, 1]` and rounded
//! to `f32` so files and in-memory samples agree exactly.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, Rng};
use crate::scalar::Real;
use crate::volume::{Dims, Mask, Volume, VoxelIndex};

const PLACEMENT_ATTEMPTS: usize = 500;

/// Per-channel intensity profile: (background, gland, lesion contrast multiplier).
const CHANNEL_PROFILES: [(f64, f64, f64); 3] = [(0.25, 0.30, 1.0), (0.20, 0.25, 1.3), (0.70, 0.65, -1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub channels: usize,
    pub spacing_mm: [f64; 3],
    pub lesion_count: usize,
    pub lesion_radius_range: (f64, f64),
    pub lesion_contrast: f64,
    pub heterogeneity: f64,
    pub noise_std: f64,
    /// Gaussian blur (voxels) applied to the lesion occupancy before
    /// intensities are assigned; 0 gives hard lesion edges.
    pub partial_volume: f64,
    /// Benign nodules inside the gland that resemble lesions at lower
    /// contrast and are not part of the ground truth.
    pub mimic_count: usize,
    /// Mimic intensity offset, applied like the lesion contrast.
    pub mimic_contrast: f64,
    /// Peak-to-peak speckle inside mimics. Fine enough to pass the
    /// homogeneity gate, visible to local texture features.
    pub mimic_texture: f64,
    /// Peak-to-peak amplitude of the binary speckle of normal tissue.
    pub tissue_texture: f64,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: Dims::cube(32),
            channels: 3,
            spacing_mm: [1.0; 3],
            lesion_count: 1,
            lesion_radius_range: (3.0, 5.5),
            lesion_contrast: 0.55,
            heterogeneity: 0.08,
            noise_std: 0.03,
            partial_volume: 1.5,
            mimic_count: 2,
            mimic_contrast: 0.55,
            mimic_texture: 0.4,
            tissue_texture: 0.8,
            rng_seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lesion_radius_range;
        if self.dims.is_empty() {
            return Err(Error::invalid("dims", "zero extent"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("channels", "must be positive"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo >= 1.0 && lo <= hi) {
            return Err(Error::invalid("lesion_radius_range", format!("need 1 <= min <= max, got ({lo}, {hi})")));
        }
        let smallest = *self.dims.as_array().iter().min().unwrap_or(&0) as f64;
        if 2.0 * hi * 1.6 + 1.0 > smallest {
            return Err(Error::invalid(
                "lesion_radius_range",
                format!("max radius {hi} does not fit in {:?}", self.dims),
            ));
        }
        for (name, v) in [
            ("lesion_contrast", self.lesion_contrast),
            ("heterogeneity", self.heterogeneity),
            ("noise_std", self.noise_std),
            ("partial_volume", self.partial_volume),
            ("mimic_contrast", self.mimic_contrast),
            ("mimic_texture", self.mimic_texture),
            ("tissue_texture", self.tissue_texture),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if self.tissue_texture < 0.0 {
            return Err(Error::invalid("tissue_texture", "must be >= 0"));
        }
        if self.mimic_texture < 0.0 {
            return Err(Error::invalid("mimic_texture", "must be >= 0"));
        }
        if self.heterogeneity < 0.0 || self.noise_std < 0.0 || self.partial_volume < 0.0 {
            return Err(Error::invalid("noise_std", "standard deviations must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample<T> {
    pub volume: Volume<T>,
    pub truth: Mask,
    pub lesion_centres: Vec<VoxelIndex>,
    pub gland: Mask,
}

#[derive(Debug, Clone)]
struct Lobe {
    centre: [f64; 3],
    radii: [f64; 3],
    amp: f64,
    phase: [f64; 2],
}

impl Lobe {
    fn random(rng: &mut Rng, centre: [f64; 3], radius: f64) -> Self {
        let radii = [0, 1, 2].map(|_| radius * rng.random_range(0.8..1.2));
        Lobe {
            centre,
            radii,
            amp: rng.random_range(0.0..0.2),
            phase: [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)],
        }
    }

    fn contains(&self, v: VoxelIndex) -> bool {
        let d = [
            v.a as f64 - self.centre[0],
            v.b as f64 - self.centre[1],
            v.c as f64 - self.centre[2],
        ];
        let q2: f64 = (0..3).map(|i| (d[i] / self.radii[i]).powi(2)).sum();
        if q2 == 0.0 {
            return true;
        }
        let r = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let theta = (d[2] / r).clamp(-1.0, 1.0).acos();
        let phi = d[1].atan2(d[0]);
        let bound = 1.0 + self.amp * (2.0 * theta + self.phase[0]).sin() * (phi + self.phase[1]).cos();
        q2.sqrt() < bound
    }

    fn reach(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max) * (1.0 + self.amp)
    }
}

/// Smooth zero-mean field with unit variance: a sum of three random plane waves.
struct SmoothField {
    waves: Vec<([f64; 3], f64)>,
}

impl SmoothField {
    fn random(rng: &mut Rng) -> Self {
        let waves = (0..3)
            .map(|_| {
                let k = [0, 1, 2].map(|_| rng.random_range(-0.9..0.9));
                (k, rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        SmoothField { waves }
    }

    fn at(&self, v: VoxelIndex) -> f64 {
        let p = [v.a as f64, v.b as f64, v.c as f64];
        let s: f64 = self
            .waves
            .iter()
            .map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).cos())
            .sum();
        s * (2.0 / self.waves.len() as f64).sqrt()
    }
}

fn channel_profile(ch: usize) -> (f64, f64, f64) {
    CHANNEL_PROFILES[ch % CHANNEL_PROFILES.len()]
}

/// A main lobe plus a satellite lobe inside the gland, at least one voxel
/// away from `occupied`; returns the blob and its rounded centre.
fn place_blob(rng: &mut Rng, spec: &PhantomSpec, gland: &Mask, occupied: &Mask) -> Option<(Mask, VoxelIndex)> {
    let dims = spec.dims;
    let dimf = dims.as_array().map(|n| n as f64);
    let (rmin, rmax) = spec.lesion_radius_range;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let radius = rng.random_range(rmin..=rmax);
        let centre = [0, 1, 2].map(|i| rng.random_range(0.0..dimf[i] - 1.0));
        let main = Lobe::random(rng, centre, radius);
        let dir = {
            let g: [f64; 3] = [0, 1, 2].map(|_| StandardNormal.sample(rng));
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            g.map(|x| x / n)
        };
        let offset = radius * rng.random_range(0.6..0.9);
        let sat_centre = [0, 1, 2].map(|i| centre[i] + dir[i] * offset);
        let sat_radius = radius * rng.random_range(0.5..0.75);
        let satellite = Lobe::random(rng, sat_centre, sat_radius);

        let reach = main.reach().max(offset + satellite.reach()) + 1.0;
        if (0..3).any(|i| centre[i] - reach < 0.0 || centre[i] + reach > dimf[i] - 1.0) {
            continue;
        }
        let blob = Mask::from_fn(dims, |v| main.contains(v) || satellite.contains(v));
        if blob.count() < 8 || !blob.is_subset_of(gland) {
            continue;
        }
        if blob.dilate().linear_indices().any(|i| occupied.get_linear(i)) {
            continue;
        }
        let c = centre.map(|x| x.round().max(0.0) as usize);
        return Some((blob, VoxelIndex::new(c[0], c[1], c[2])));
    }
    None
}

pub fn generate<T: Real>(spec: &PhantomSpec) -> Result<PhantomSample<T>> {
    spec.validate()?;
    let dims = spec.dims;
    let dimf = dims.as_array().map(|n| n as f64);
    let mut rng = rng::stream(spec.rng_seed, Purpose::Phantom, 0);

    let gland_lobe = Lobe {
        centre: dimf.map(|n| (n - 1.0) / 2.0 + rng.random_range(-1.0..1.0)),
        radii: dimf.map(|n| n * rng.random_range(0.36..0.42)),
        amp: rng.random_range(0.0..0.08),
        phase: [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)],
    };
    let gland = Mask::from_fn(dims, |v| gland_lobe.contains(v));

    let mut truth = Mask::empty(dims);
    let mut lesion_centres = Vec::with_capacity(spec.lesion_count);
    for lesion in 0..spec.lesion_count {
        let (blob, centre) = place_blob(&mut rng, spec, &gland, &truth).ok_or(Error::Placement {
            lesion,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        for i in blob.linear_indices() {
            truth.set_linear(i, true);
        }
        lesion_centres.push(centre);
    }
    let mut mimics = Mask::empty(dims);
    for _ in 0..spec.mimic_count {
        let occupied = Mask::from_fn(dims, |v| truth.get(v) || mimics.get(v));
        // a crowded gland just gets fewer mimics
        if let Some((blob, _)) = place_blob(&mut rng, spec, &gland, &occupied) {
            for i in blob.linear_indices() {
                mimics.set_linear(i, true);
            }
        }
    }

    let texture = SmoothField::random(&mut rng);
    let occupancy = blur(&truth, spec.partial_volume);
    let mimic_occ = blur(&mimics, spec.partial_volume);
    let speckle: Vec<f64> = (0..dims.len())
        .map(|lin| {
            let sign = if rng.random_bool(0.5) { 0.5 } else { -0.5 };
            let (occ, mocc) = (occupancy[lin], mimic_occ[lin]);
            sign * (spec.tissue_texture * (1.0 - occ - mocc).max(0.0) + spec.mimic_texture * mocc)
        })
        .collect();
    let mut data = Vec::with_capacity(spec.channels * dims.len());
    for ch in 0..spec.channels {
        let (bg, gl, mult) = channel_profile(ch);
        for lin in 0..dims.len() {
            let v = dims.voxel(lin);
            let mimic = mimic_occ[lin] * mult * spec.mimic_contrast;
            let tissue = if gland.get_linear(lin) { gl } else { bg } + speckle[lin] + mimic;
            let occ = occupancy[lin];
            let base = if occ > 0.0 {
                tissue + occ * mult * (spec.lesion_contrast + spec.heterogeneity * texture.at(v))
            } else {
                tissue
            };
            let noise: f64 = if spec.noise_std > 0.0 {
                spec.noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            } else {
                0.0
            };
            let value = (base + noise).clamp(0.0, 1.0) as f32;
            data.push(T::lit(value as f64));
        }
    }
    let volume = Volume::new(dims, spec.channels, spec.spacing_mm, data)?;
    Ok(PhantomSample {
        volume,
        truth,
        lesion_centres,
        gland,
    })
}

/// Separable Gaussian blur of a mask, kernel truncated at 3 sigma and
/// renormalised at the grid border.
fn blur(mask: &Mask, sigma: f64) -> Vec<f64> {
    let dims = mask.dims();
    let mut field: Vec<f64> = mask.as_bytes().iter().map(|&b| b as f64).collect();
    if sigma <= 0.0 {
        return field;
    }
    let half = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let ext = dims.as_array();
    for axis in 0..3 {
        let mut out = vec![0.0; field.len()];
        for (lin, slot) in out.iter_mut().enumerate() {
            let v = dims.voxel(lin);
            let pos = [v.a, v.b, v.c];
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (ki, k) in (-half..=half).enumerate() {
                let q = pos[axis] as isize + k;
                if q < 0 || q >= ext[axis] as isize {
                    continue;
                }
                let mut p = pos;
                p[axis] = q as usize;
                acc += kernel[ki] * field[dims.linear(VoxelIndex::new(p[0], p[1], p[2]))];
                wsum += kernel[ki];
            }
            *slot = acc / wsum;
        }
        field = out;
    }
    field
}

fn pick_uniform(mask: &Mask, rng: &mut Rng) -> Option<VoxelIndex> {
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let k = rng.random_range(0..n);
    mask.linear_indices().nth(k).map(|i| mask.dims().voxel(i))
}

/// Uniform random lesion voxel.
pub fn sample_seed_in_lesion<T>(sample: &PhantomSample<T>, rng_seed: u64) -> Result<VoxelIndex> {
    let mut rng = rng::stream(rng_seed, Purpose::Prompt, 0);
    pick_uniform(&sample.truth, &mut rng).ok_or(Error::EmptyTruth)
}

/// Voxels outside the lesion within Chebyshev distance `1..=max_offset` of it.
pub fn perturbation_shell(truth: &Mask, max_offset_vox: usize) -> Mask {
    let mut grown = truth.clone();
    for _ in 0..max_offset_vox {
        grown = grown.dilate();
    }
    Mask::from_fn(truth.dims(), |v| grown.get(v) && !truth.get(v))
}

/// Uniform random voxel outside the lesion, at Chebyshev distance in
/// `[1, max_offset_vox]` from it.
pub fn sample_perturbed_seed<T>(sample: &PhantomSample<T>, max_offset_vox: usize, rng_seed: u64) -> Result<VoxelIndex> {
    if sample.truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if max_offset_vox == 0 {
        return Err(Error::invalid("max_offset_vox", "must be at least 1"));
    }
    let shell = perturbation_shell(&sample.truth, max_offset_vox);
    let mut rng = rng::stream(rng_seed, Purpose::Prompt, 1);
    pick_uniform(&shell, &mut rng).ok_or_else(|| Error::invalid("max_offset_vox", "lesion fills the grid"))
}

/// Uniform random gland voxel.
pub fn sample_seed_in_gland<T>(sample: &PhantomSample<T>, rng_seed: u64) -> Result<VoxelIndex> {
    let mut rng = rng::stream(rng_seed, Purpose::Prompt, 2);
    pick_uniform(&sample.gland, &mut rng).ok_or_else(|| Error::invalid("gland", "gland mask is empty"))
}

/// Gland voxel nearest the gland centroid; the prompt-free starting seed.
pub fn gland_centre_seed(gland: &Mask) -> Result<VoxelIndex> {
    let n = gland.count();
    if n == 0 {
        return Err(Error::invalid("gland", "gland mask is empty"));
    }
    let mut sum = [0.0f64; 3];
    for v in gland.voxels() {
        sum[0] += v.a as f64;
        sum[1] += v.b as f64;
        sum[2] += v.c as f64;
    }
    let c = sum.map(|s| s / n as f64);
    let dist = |v: VoxelIndex| (v.a as f64 - c[0]).powi(2) + (v.b as f64 - c[1]).powi(2) + (v.c as f64 - c[2]).powi(2);
    gland
        .voxels()
        .min_by(|x, y| dist(*x).total_cmp(&dist(*y)))
        .ok_or_else(|| Error::invalid("gland", "gland mask is empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            rng_seed: seed,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn no_lesions_means_empty_truth() {
        let s: PhantomSample<f32> = generate(&PhantomSpec {
            lesion_count: 0,
            ..spec(3)
        })
        .unwrap();
        assert!(s.truth.is_empty());
        assert!(s.lesion_centres.is_empty());
        assert!(!s.gland.is_empty());
        assert!(matches!(sample_seed_in_lesion(&s, 1), Err(Error::EmptyTruth)));
    }

    #[test]
    fn deterministic() {
        let a: PhantomSample<f64> = generate(&spec(11)).unwrap();
        let b: PhantomSample<f64> = generate(&spec(11)).unwrap();
        let c: PhantomSample<f64> = generate(&spec(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn lesions_inside_gland() {
        for seed in 0..20 {
            let s: PhantomSample<f32> = generate(&PhantomSpec {
                lesion_count: 2,
                ..spec(seed)
            })
            .unwrap();
            assert!(!s.truth.is_empty());
            assert!(s.truth.is_subset_of(&s.gland));
            assert_eq!(s.lesion_centres.len(), 2);
        }
    }

    #[test]
    fn noiseless_contrast_separates_lesion() {
        let s: PhantomSample<f64> = generate(&PhantomSpec {
            noise_std: 0.0,
            heterogeneity: 0.0,
            lesion_contrast: 0.5,
            partial_volume: 0.0,
            tissue_texture: 0.0,
            mimic_count: 0,
            ..spec(5)
        })
        .unwrap();
        let ch0 = s.volume.channel(0);
        let min_in = s.truth.linear_indices().map(|i| ch0[i]).fold(f64::INFINITY, f64::min);
        let max_out = (0..ch0.len())
            .filter(|&i| !s.truth.get_linear(i))
            .map(|i| ch0[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_in - max_out >= 0.4, "{min_in} vs {max_out}");
    }

    #[test]
    fn oversize_lesions_rejected() {
        let err = generate::<f32>(&PhantomSpec {
            lesion_radius_range: (3.0, 14.0),
            ..spec(0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Invalid { field: "lesion_radius_range", .. }));

        // fits the grid but not the gland: placement fails
        let err = generate::<f32>(&PhantomSpec {
            lesion_count: 60,
            lesion_radius_range: (3.0, 3.0),
            ..spec(0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Placement { .. }));
    }

    #[test]
    fn seed_samplers_respect_their_regions() {
        let s: PhantomSample<f32> = generate(&spec(8)).unwrap();
        for k in 0..1000 {
            let v = sample_seed_in_lesion(&s, k).unwrap();
            assert!(s.truth.get(v));
            let g = sample_seed_in_gland(&s, k).unwrap();
            assert!(s.gland.get(g));
            let p = sample_perturbed_seed(&s, 4, k).unwrap();
            assert!(!s.truth.get(p));
            let d = s.truth.voxels().map(|t| t.chebyshev(p)).min().unwrap();
            assert!((1..=4).contains(&d), "distance {d}");
        }
        assert!(s.gland.get(gland_centre_seed(&s.gland).unwrap()));
    }
}
