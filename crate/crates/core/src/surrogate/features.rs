use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::volume::{Dims, Volume, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    /// Raw channel intensities only.
    Raw,
    /// Raw intensities, local mean/std at radius 1 and 2, gradient
    /// magnitude (all per channel), plus normalised position.
    LocalStats,
}

impl FeatureSet {
    pub fn count(&self, channels: usize) -> usize {
        match self {
            FeatureSet::Raw => channels,
            FeatureSet::LocalStats => 6 * channels + 3,
        }
    }
}

/// Per-voxel feature vectors, voxel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack<T> {
    pub dims: Dims,
    pub n_features: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureStack<T> {
    #[inline]
    pub fn voxel(&self, lin: usize) -> &[T] {
        &self.data[lin * self.n_features..(lin + 1) * self.n_features]
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.len()
    }
}

fn window_mean_std<T: Real>(values: &[T], dims: Dims, v: VoxelIndex, r: usize) -> (T, T) {
    let radius = VoxelIndex::splat(r);
    let shift = values[dims.linear(v)];
    let mut sum = T::zero();
    let mut n = 0usize;
    dims.for_each_in_window(v, radius, |i| {
        sum = sum + (values[i] - shift);
        n += 1;
    });
    let offset = sum / T::from_usize_lossy(n);
    let mut ss = T::zero();
    dims.for_each_in_window(v, radius, |i| {
        let d = values[i] - shift - offset;
        ss = ss + d * d;
    });
    (shift + offset, (ss / T::from_usize_lossy(n)).sqrt())
}

fn gradient_magnitude<T: Real>(values: &[T], dims: Dims, v: VoxelIndex) -> T {
    let ext = dims.as_array();
    let pos = [v.a, v.b, v.c];
    let mut g2 = T::zero();
    for axis in 0..3 {
        let lo = pos[axis].saturating_sub(1);
        let hi = (pos[axis] + 1).min(ext[axis] - 1);
        if hi == lo {
            continue;
        }
        let mut pl = pos;
        let mut ph = pos;
        pl[axis] = lo;
        ph[axis] = hi;
        let il = dims.linear(VoxelIndex::new(pl[0], pl[1], pl[2]));
        let ih = dims.linear(VoxelIndex::new(ph[0], ph[1], ph[2]));
        let g = (values[ih] - values[il]) / T::from_usize_lossy(hi - lo);
        g2 = g2 + g * g;
    }
    g2.sqrt()
}

fn normalised(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

pub fn featurize<T: Real>(x: &Volume<T>, set: FeatureSet) -> FeatureStack<T> {
    let dims = x.dims();
    let channels = x.channels();
    let n_features = set.count(channels);
    let per_voxel: Vec<Vec<T>> = (0..dims.len())
        .into_par_iter()
        .map(|lin| {
            let v = dims.voxel(lin);
            let mut f = Vec::with_capacity(n_features);
            for ch in 0..channels {
                f.push(x.channel(ch)[lin]);
            }
            if set == FeatureSet::LocalStats {
                for ch in 0..channels {
                    let values = x.channel(ch);
                    let (m1, s1) = window_mean_std(values, dims, v, 1);
                    let (m2, s2) = window_mean_std(values, dims, v, 2);
                    f.extend_from_slice(&[m1, s1, m2, s2, gradient_magnitude(values, dims, v)]);
                }
                f.push(T::lit(normalised(v.a, dims.0)));
                f.push(T::lit(normalised(v.b, dims.1)));
                f.push(T::lit(normalised(v.c, dims.2)));
            }
            f
        })
        .collect();
    FeatureStack {
        dims,
        n_features,
        data: per_voxel.into_iter().flatten().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_counts_and_values() {
        let d = Dims(3, 4, 5);
        let x = Volume::from_fn(d, 2, |ch, v| (ch + v.c) as f64).unwrap();
        let f = featurize(&x, FeatureSet::LocalStats);
        assert_eq!(f.n_features, 15);
        assert_eq!(f.data.len(), 15 * d.len());
        assert!(f.data.iter().all(|v| v.is_finite()));
        let v = f.voxel(d.linear(VoxelIndex::new(1, 1, 2)));
        assert_eq!(v[0], 2.0);
        assert_eq!(v[1], 3.0);
        // channel 0: mean over c in 1..=3 is 2, gradient along c is 1
        assert_eq!(v[2], 2.0);
        assert_eq!(v[6], 1.0);
        // position: a=1 of 3 -> 0, b=1 of 4 -> -1/3, c=2 of 5 -> 0
        assert_eq!(v[12], 0.0);
        assert!((v[13] + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(v[14], 0.0);

        let raw = featurize(&x, FeatureSet::Raw);
        assert_eq!(raw.n_features, 2);
    }
}
