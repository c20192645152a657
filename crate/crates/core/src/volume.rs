//! Voxel grids: multi-channel volumes, binary masks and per-voxel fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smoothing added to numerator and denominator of the Dice ratio.
pub const DICE_EPS: f64 = 1e-6;

/// Grid extent `(H, W, D)`, serialised as `[H, W, D]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims(pub usize, pub usize, pub usize);

impl Dims {
    pub fn cube(n: usize) -> Self {
        Dims(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.0 * self.1 * self.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.0, self.1, self.2]
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        v.a < self.0 && v.b < self.1 && v.c < self.2
    }

    pub fn check(&self, v: VoxelIndex) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::OutOfBounds { index: v, dims: *self })
        }
    }

    /// Linear offset in a-major, then b, then c order.
    #[inline]
    pub fn linear(&self, v: VoxelIndex) -> usize {
        (v.a * self.1 + v.b) * self.2 + v.c
    }

    #[inline]
    pub fn voxel(&self, lin: usize) -> VoxelIndex {
        let c = lin % self.2;
        let rest = lin / self.2;
        VoxelIndex {
            a: rest / self.1,
            b: rest % self.1,
            c,
        }
    }

    /// Inclusive per-axis bounds of the window `v ± radius`, clipped to the grid.
    #[inline]
    pub fn window(&self, v: VoxelIndex, radius: VoxelIndex) -> [(usize, usize); 3] {
        let clip = |x: usize, r: usize, n: usize| (x.saturating_sub(r), (x + r).min(n - 1));
        [
            clip(v.a, radius.a, self.0),
            clip(v.b, radius.b, self.1),
            clip(v.c, radius.c, self.2),
        ]
    }

    /// Calls `f` with the linear index of every voxel in the clipped window.
    #[inline]
    pub fn for_each_in_window(&self, v: VoxelIndex, radius: VoxelIndex, mut f: impl FnMut(usize)) {
        let [(a0, a1), (b0, b1), (c0, c1)] = self.window(v, radius);
        for a in a0..=a1 {
            for b in b0..=b1 {
                let row = (a * self.1 + b) * self.2;
                for c in c0..=c1 {
                    f(row + c);
                }
            }
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.0, self.1, self.2)
    }
}

/// Integer grid coordinate. Also used for symmetric window radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl VoxelIndex {
    pub const fn new(a: usize, b: usize, c: usize) -> Self {
        VoxelIndex { a, b, c }
    }

    pub const fn splat(r: usize) -> Self {
        VoxelIndex { a: r, b: r, c: r }
    }

    /// Number of voxels in the unclipped window `±self`.
    pub fn window_volume(&self) -> usize {
        (2 * self.a + 1) * (2 * self.b + 1) * (2 * self.c + 1)
    }

    pub fn chebyshev(&self, other: VoxelIndex) -> usize {
        self.a
            .abs_diff(other.a)
            .max(self.b.abs_diff(other.b))
            .max(self.c.abs_diff(other.c))
    }
}

impl std::fmt::Display for VoxelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.a, self.b, self.c)
    }
}

impl std::str::FromStr for VoxelIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::invalid("voxel", format!("expected a,b,c, got `{s}`")));
        }
        let mut out = [0usize; 3];
        for (slot, p) in out.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::invalid("voxel", format!("`{p}` is not a non-negative integer")))?;
        }
        Ok(VoxelIndex::new(out[0], out[1], out[2]))
    }
}

/// Multi-channel scalar volume stored channel-major, then a/b/c.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing_mm: [f64; 3],
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(dims: Dims, channels: usize, spacing_mm: [f64; 3], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("dims", format!("{dims:?} has a zero extent")));
        }
        if channels == 0 {
            return Err(Error::invalid("channels", "must be positive"));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("spacing_mm", format!("{spacing_mm:?} must be positive")));
        }
        if data.len() != channels * dims.len() {
            return Err(Error::invalid(
                "data",
                format!("length {} != C*H*W*D = {}", data.len(), channels * dims.len()),
            ));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid("data", format!("non-finite intensity at offset {i}")));
        }
        Ok(Volume {
            dims,
            spacing_mm,
            channels,
            data,
        })
    }

    pub fn filled(dims: Dims, channels: usize, value: T) -> Self {
        Volume::new(dims, channels, [1.0; 3], vec![value; channels * dims.len()])
            .expect("filled volume is valid")
    }

    pub fn from_fn(dims: Dims, channels: usize, mut f: impl FnMut(usize, VoxelIndex) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * dims.len());
        for ch in 0..channels {
            for lin in 0..dims.len() {
                data.push(f(ch, dims.voxel(lin)));
            }
        }
        Volume::new(dims, channels, [1.0; 3], data)
    }

    pub fn with_spacing(mut self, spacing_mm: [f64; 3]) -> Result<Self> {
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("spacing_mm", format!("{spacing_mm:?} must be positive")));
        }
        self.spacing_mm = spacing_mm;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.dims.len();
        &self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn get(&self, ch: usize, v: VoxelIndex) -> T {
        self.data[ch * self.dims.len() + self.dims.linear(v)]
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("channels", "selection is empty"));
        }
        let mut data = Vec::with_capacity(keep.len() * self.dims.len());
        for &ch in keep {
            if ch >= self.channels {
                return Err(Error::invalid(
                    "channels",
                    format!("channel {ch} out of range for {} channels", self.channels),
                ));
            }
            data.extend_from_slice(self.channel(ch));
        }
        Volume::new(self.dims, keep.len(), self.spacing_mm, data)
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            channels: self.channels,
            data: self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

/// Binary occupancy grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    dims: Dims,
    data: Vec<u8>,
}

impl Mask {
    pub fn empty(dims: Dims) -> Self {
        Mask {
            dims,
            data: vec![0; dims.len()],
        }
    }

    pub fn full(dims: Dims) -> Self {
        Mask {
            dims,
            data: vec![1; dims.len()],
        }
    }

    pub fn from_bytes(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(
                "data",
                format!("length {} != H*W*D = {}", data.len(), dims.len()),
            ));
        }
        if let Some(i) = data.iter().position(|&x| x > 1) {
            return Err(Error::invalid("data", format!("mask value {} at offset {i} is not 0/1", data[i])));
        }
        Ok(Mask { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(VoxelIndex) -> bool) -> Self {
        Mask {
            dims,
            data: (0..dims.len()).map(|i| f(dims.voxel(i)) as u8).collect(),
        }
    }

    pub fn from_voxels(dims: Dims, voxels: impl IntoIterator<Item = VoxelIndex>) -> Result<Self> {
        let mut m = Mask::empty(dims);
        for v in voxels {
            dims.check(v)?;
            m.set(v, true);
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, v: VoxelIndex) -> bool {
        self.data[self.dims.linear(v)] != 0
    }

    #[inline]
    pub fn get_linear(&self, lin: usize) -> bool {
        self.data[lin] != 0
    }

    #[inline]
    pub fn set(&mut self, v: VoxelIndex, on: bool) {
        let i = self.dims.linear(v);
        self.data[i] = on as u8;
    }

    #[inline]
    pub fn set_linear(&mut self, lin: usize, on: bool) {
        self.data[lin] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&x| x as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    pub fn linear_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter(|(_, &x)| x != 0).map(|(i, _)| i)
    }

    pub fn voxels(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        self.linear_indices().map(|i| self.dims.voxel(i))
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Chebyshev dilation by one voxel (3×3×3 max filter, clipped).
    pub fn dilate(&self) -> Mask {
        let mut out = Mask::empty(self.dims);
        for lin in self.linear_indices() {
            self.dims
                .for_each_in_window(self.dims.voxel(lin), VoxelIndex::splat(1), |n| out.data[n] = 1);
        }
        out
    }

    /// Chebyshev dilation by `r` voxels as three separable max filters.
    pub fn dilate_by(&self, r: usize) -> Mask {
        let d = self.dims;
        let ext = d.as_array();
        let mut cur = self.data.clone();
        for axis in 0..3 {
            let mut next = vec![0u8; cur.len()];
            for (lin, slot) in next.iter_mut().enumerate() {
                let v = d.voxel(lin);
                let p = [v.a, v.b, v.c];
                let lo = p[axis].saturating_sub(r);
                let hi = (p[axis] + r).min(ext[axis] - 1);
                let mut q = p;
                *slot = (lo..=hi).any(|x| {
                    q[axis] = x;
                    cur[d.linear(VoxelIndex::new(q[0], q[1], q[2]))] != 0
                }) as u8;
            }
            cur = next;
        }
        Mask { dims: d, data: cur }
    }
}

/// Anything with a per-voxel occupancy in `[0, 1]`.
pub trait Occupancy<T> {
    fn dims(&self) -> Dims;
    fn occupancy(&self, lin: usize) -> T;
}

impl<T: Real> Occupancy<T> for Mask {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn occupancy(&self, lin: usize) -> T {
        if self.data[lin] != 0 {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// Voxel-wise probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> ProbabilityField<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid("data", format!("length {} != {}", data.len(), dims.len())));
        }
        if let Some(i) = data.iter().position(|p| !(*p >= T::zero() && *p <= T::one())) {
            return Err(Error::invalid("data", format!("probability {} at offset {i} outside [0,1]", data[i])));
        }
        Ok(ProbabilityField { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, v: VoxelIndex) -> T {
        self.data[self.dims.linear(v)]
    }
}

impl<T: Real> Occupancy<T> for ProbabilityField<T> {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn occupancy(&self, lin: usize) -> T {
        self.data[lin]
    }
}

/// Voxel-wise binary entropy in nats, `[0, ln 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> EntropyField<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid("data", format!("length {} != {}", data.len(), dims.len())));
        }
        let max = T::LN_2();
        if let Some(i) = data.iter().position(|e| !(*e >= T::zero() && *e <= max)) {
            return Err(Error::invalid("data", format!("entropy {} at offset {i} outside [0, ln 2]", data[i])));
        }
        Ok(EntropyField { dims, data })
    }

    pub fn constant(dims: Dims, value: T) -> Result<Self> {
        EntropyField::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, v: VoxelIndex) -> T {
        self.data[self.dims.linear(v)]
    }

    /// Arithmetic mean over the voxels of `mask`; zero for an empty mask.
    pub fn mean_over(&self, mask: &Mask) -> T {
        let mut sum = T::zero();
        let mut n = 0usize;
        for lin in mask.linear_indices() {
            sum = sum + self.data[lin];
            n += 1;
        }
        if n == 0 {
            T::zero()
        } else {
            sum / T::from_usize_lossy(n)
        }
    }
}

fn check_dims(expected: Dims, actual: Dims) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}

/// Smoothed Dice loss `1 - (2Σpt + ε) / (Σp + Σt + ε)`; `pred` may be soft.
pub fn dice_loss<T: Real, P: Occupancy<T> + ?Sized>(pred: &P, truth: &Mask) -> Result<T> {
    check_dims(truth.dims(), pred.dims())?;
    let mut inter = T::zero();
    let mut sum_p = T::zero();
    let mut sum_t = T::zero();
    for lin in 0..truth.dims().len() {
        let p = pred.occupancy(lin);
        sum_p = sum_p + p;
        if truth.get_linear(lin) {
            inter = inter + p;
            sum_t = sum_t + T::one();
        }
    }
    let eps = T::lit(DICE_EPS);
    let two = T::lit(2.0);
    Ok(T::one() - (two * inter + eps) / (sum_p + sum_t + eps))
}

/// Binary entropy of a single probability in nats, with `0 log 0 = 0`.
#[inline]
pub fn binary_entropy<T: Real>(p: T) -> T {
    let term = |q: T| if q > T::zero() { q * q.ln() } else { T::zero() };
    let h = -(term(p) + term(T::one() - p));
    // rounding can push the sum a hair outside [0, ln 2]
    h.max(T::zero()).min(T::LN_2())
}

pub fn entropy_map<T: Real>(p: &ProbabilityField<T>) -> EntropyField<T> {
    EntropyField {
        dims: p.dims,
        data: p.data.iter().map(|&q| binary_entropy(q)).collect(),
    }
}

fn channel_window_std<T: Real>(values: &[T], dims: Dims, v: VoxelIndex, radius: VoxelIndex) -> T {
    // shifted by the centre value so constant windows give exactly zero
    let shift = values[dims.linear(v)];
    let mut sum = T::zero();
    let mut n = 0usize;
    dims.for_each_in_window(v, radius, |i| {
        sum = sum + (values[i] - shift);
        n += 1;
    });
    let mean = sum / T::from_usize_lossy(n);
    let mut ss = T::zero();
    dims.for_each_in_window(v, radius, |i| {
        let d = values[i] - shift - mean;
        ss = ss + d * d;
    });
    (ss / T::from_usize_lossy(n)).sqrt()
}

/// Population standard deviation over the clipped window `v ± radius`,
/// maximised over channels.
///
/// Panics if `v` is outside the grid.
pub fn neighbourhood_std<T: Real>(x: &Volume<T>, v: VoxelIndex, radius: VoxelIndex) -> T {
    assert!(x.dims().contains(v), "voxel {v:?} outside {:?}", x.dims());
    (0..x.channels())
        .map(|ch| channel_window_std(x.channel(ch), x.dims(), v, radius))
        .fold(T::zero(), T::max)
}

/// [`neighbourhood_std`] evaluated at every voxel, in linear order.
pub fn std_field<T: Real>(x: &Volume<T>, radius: VoxelIndex) -> Vec<T> {
    let dims = x.dims();
    (0..dims.len())
        .into_par_iter()
        .map(|lin| neighbourhood_std(x, dims.voxel(lin), radius))
        .collect()
}

/// Number of voxels where the two masks differ.
pub fn mask_l1_diff(a: &Mask, b: &Mask) -> Result<usize> {
    check_dims(a.dims(), b.dims())?;
    Ok(a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn block(dims: Dims, lo: VoxelIndex, size: usize) -> Mask {
        Mask::from_fn(dims, |v| {
            (lo.a..lo.a + size).contains(&v.a)
                && (lo.b..lo.b + size).contains(&v.b)
                && (lo.c..lo.c + size).contains(&v.c)
        })
    }

    #[test]
    fn linear_roundtrip() {
        let d = Dims(3, 4, 5);
        for i in 0..d.len() {
            assert_eq!(d.linear(d.voxel(i)), i);
        }
        assert_eq!(d.linear(VoxelIndex::new(1, 2, 3)), (4 + 2) * 5 + 3);
    }

    #[test]
    fn dice_identity_and_disjoint() {
        let d = Dims::cube(6);
        let m = block(d, VoxelIndex::splat(1), 2);
        assert!(dice_loss::<f64, _>(&m, &m).unwrap() < 1e-6);

        let other = block(d, VoxelIndex::splat(4), 2);
        let loss: f64 = dice_loss(&m, &other).unwrap();
        assert_abs_diff_eq!(loss, 1.0 - DICE_EPS / (16.0 + DICE_EPS), epsilon = 1e-15);
    }

    #[test]
    fn dice_half_overlap() {
        let d = Dims::cube(6);
        let pred = block(d, VoxelIndex::new(1, 1, 1), 2);
        let truth = block(d, VoxelIndex::new(1, 1, 2), 2);
        // 2x2x1 overlap = 4 voxels out of 8 + 8
        assert_eq!(
            pred.linear_indices().filter(|&i| truth.get_linear(i)).count(),
            4
        );
        let loss: f64 = dice_loss(&pred, &truth).unwrap();
        assert_abs_diff_eq!(loss, 0.5, epsilon = 1e-7);
    }

    #[test]
    fn dice_empty_vs_empty_is_zero() {
        let d = Dims::cube(3);
        let loss: f64 = dice_loss(&Mask::empty(d), &Mask::empty(d)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn dice_dim_mismatch() {
        let err = dice_loss::<f64, _>(&Mask::empty(Dims::cube(3)), &Mask::empty(Dims::cube(4))).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
    }

    #[test]
    fn dice_soft_prediction() {
        let d = Dims(1, 1, 2);
        let p = ProbabilityField::new(d, vec![0.5f64, 0.5]).unwrap();
        let t = Mask::from_bytes(d, vec![1, 0]).unwrap();
        // 1 - (1 + eps) / (1 + 1 + eps)
        let loss: f64 = dice_loss(&p, &t).unwrap();
        assert_abs_diff_eq!(loss, 1.0 - (1.0 + DICE_EPS) / (2.0 + DICE_EPS), epsilon = 1e-15);
    }

    #[test]
    fn entropy_anchor_values() {
        assert_abs_diff_eq!(binary_entropy(0.5f64), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(binary_entropy(0.0f64), 0.0);
        assert_eq!(binary_entropy(1.0f64), 0.0);
        assert_abs_diff_eq!(binary_entropy(0.9f64), 0.325_082_973_391_448_2, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_entropy(0.5f32), std::f32::consts::LN_2, epsilon = 1e-7);
    }

    #[test]
    fn std_examples() {
        let d = Dims::cube(4);
        let flat = Volume::filled(d, 2, 0.7f64);
        assert_eq!(neighbourhood_std(&flat, VoxelIndex::new(1, 2, 3), VoxelIndex::splat(3)), 0.0);

        // corner window of radius (1,1,0) is 2x2x1 = {0,0,1,1}
        let x = Volume::from_fn(Dims(2, 2, 2), 1, |_, v| if v.b == 1 { 1.0f64 } else { 0.0 }).unwrap();
        let s = neighbourhood_std(&x, VoxelIndex::new(0, 0, 0), VoxelIndex::new(1, 1, 0));
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-15);

        let noisy = Volume::from_fn(d, 1, |_, v| (v.a * 7 + v.b * 3 + v.c) as f64 * 0.1).unwrap();
        assert_eq!(neighbourhood_std(&noisy, VoxelIndex::new(2, 1, 3), VoxelIndex::splat(0)), 0.0);
    }

    #[test]
    fn std_takes_channel_maximum() {
        let d = Dims(1, 1, 2);
        let x = Volume::new(d, 2, [1.0; 3], vec![0.0f64, 0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(neighbourhood_std(&x, VoxelIndex::new(0, 0, 0), VoxelIndex::splat(1)), 0.5);
    }

    #[test]
    fn l1_examples() {
        let d = Dims::cube(3);
        let a = Mask::from_voxels(d, [VoxelIndex::new(0, 0, 0)]).unwrap();
        let b = Mask::from_voxels(d, [VoxelIndex::new(0, 0, 1)]).unwrap();
        assert_eq!(mask_l1_diff(&a, &a).unwrap(), 0);
        assert_eq!(mask_l1_diff(&a, &b).unwrap(), 2);
        let k = block(d, VoxelIndex::splat(0), 2);
        assert_eq!(mask_l1_diff(&Mask::empty(d), &k).unwrap(), 8);
    }

    #[test]
    fn field_invariants_rejected() {
        assert!(ProbabilityField::new(Dims(1, 1, 1), vec![1.5f64]).is_err());
        assert!(EntropyField::new(Dims(1, 1, 1), vec![0.8f64]).is_err());
        assert!(Mask::from_bytes(Dims(1, 1, 1), vec![2]).is_err());
        assert!(Volume::new(Dims(1, 1, 1), 1, [1.0; 3], vec![f64::NAN]).is_err());
        assert!(Volume::new(Dims(1, 1, 1), 1, [0.0, 1.0, 1.0], vec![0.0f64]).is_err());
    }

    #[test]
    fn voxel_parse() {
        let v: VoxelIndex = "3, 4,5".parse().unwrap();
        assert_eq!(v, VoxelIndex::new(3, 4, 5));
        assert!("1,2".parse::<VoxelIndex>().is_err());
        assert!("1,-2,3".parse::<VoxelIndex>().is_err());
    }

    #[test]
    fn dilate_by_is_chebyshev_ball() {
        let d = Dims(9, 7, 5);
        let seed = VoxelIndex::new(4, 1, 2);
        let m = Mask::from_voxels(d, [seed]).unwrap();
        let big = m.dilate_by(2);
        for v in (0..d.len()).map(|i| d.voxel(i)) {
            assert_eq!(big.get(v), v.chebyshev(seed) <= 2);
        }
        assert_eq!(m.dilate_by(1), m.dilate());
        assert_eq!(m.dilate_by(0), m);
    }
}
