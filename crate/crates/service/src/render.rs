//! Slice extraction, 8-bit rendering and run-length overlays.
//!
//! A slice fixes one axis. Rows and columns run over the two remaining axes
//! in a/b/c order: axis `a` gives rows = b and columns = c, axis `b` gives
//! rows = a and columns = c, axis `c` gives rows = a and columns = b.

use serde::{Deserialize, Serialize};

use seedgrow::{Dims, Mask, Volume, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    A,
    B,
    C,
}

impl Axis {
    pub fn extent(self, d: Dims) -> usize {
        match self {
            Axis::A => d.0,
            Axis::B => d.1,
            Axis::C => d.2,
        }
    }

    /// `(height, width)` of a slice.
    pub fn plane(self, d: Dims) -> (usize, usize) {
        match self {
            Axis::A => (d.1, d.2),
            Axis::B => (d.0, d.2),
            Axis::C => (d.0, d.1),
        }
    }

    /// Voxel at `(row, col)` of slice `index`.
    pub fn voxel(self, index: usize, row: usize, col: usize) -> VoxelIndex {
        match self {
            Axis::A => VoxelIndex::new(index, row, col),
            Axis::B => VoxelIndex::new(row, index, col),
            Axis::C => VoxelIndex::new(row, col, index),
        }
    }
}

/// Intensities mapped from the window `[lo, hi]` to 0..=255, row-major.
pub fn slice_gray(x: &Volume, axis: Axis, index: usize, channel: usize, window: (f64, f64)) -> Vec<u8> {
    let (h, w) = axis.plane(x.dims());
    let (lo, hi) = window;
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let v = x.get(channel, axis.voxel(index, r, c));
            out.push(((v - lo) * scale).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn encode_png(gray: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory png header");
        w.write_image_data(gray).expect("in-memory png data");
    }
    buf
}

/// Runs of set pixels per row as `[start, length]` pairs.
pub fn overlay_rle(mask: &Mask, axis: Axis, index: usize) -> Vec<Vec<[usize; 2]>> {
    let (h, w) = axis.plane(mask.dims());
    (0..h)
        .map(|r| {
            let mut runs = Vec::new();
            let mut start = None;
            for c in 0..=w {
                let on = c < w && mask.get(axis.voxel(index, r, c));
                match (on, start) {
                    (true, None) => start = Some(c),
                    (false, Some(s)) => {
                        runs.push([s, c - s]);
                        start = None;
                    }
                    _ => {}
                }
            }
            runs
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_matches_pixels() {
        let d = Dims(3, 4, 6);
        let m = Mask::from_fn(d, |v| v.a == 1 && (v.c < 2 || v.c == 4 || v.c == 5));
        let rows = overlay_rle(&m, Axis::A, 1);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r == &vec![[0, 2], [4, 2]]));
        assert!(overlay_rle(&m, Axis::A, 0).iter().all(Vec::is_empty));
        let rows = overlay_rle(&m, Axis::C, 4);
        assert_eq!(rows[1], vec![[0, 4]]);
        assert!(rows[0].is_empty());
    }

    #[test]
    fn gray_window() {
        let d = Dims(1, 1, 3);
        let x = Volume::new(d, 1, [1.0; 3], vec![-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(slice_gray(&x, Axis::A, 0, 0, (0.0, 1.0)), vec![0, 128, 255]);
    }
}
