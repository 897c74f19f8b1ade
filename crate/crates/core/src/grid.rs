//! Raster containers and resampling shared by every stage.

use crate::error::{Error, Result};

/// Digital elevation model: a row-major grid of heights in meters.
///
/// Heights are stored as `f32` so that the on-disk float payload round-trips
/// bit-exactly; all geometry is evaluated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dem {
    width: usize,
    height: usize,
    pitch_m: f64,
    heights: Vec<f32>,
}

impl Dem {
    pub fn new(width: usize, height: usize, pitch_m: f64, heights: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "DEM dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(pitch_m.is_finite() && pitch_m > 0.0) {
            return Err(Error::invalid(format!("DEM pitch must be > 0, got {pitch_m}")));
        }
        if heights.len() != width * height {
            return Err(Error::invalid(format!(
                "DEM of {width}x{height} needs {} heights, got {}",
                width * height,
                heights.len()
            )));
        }
        if let Some(i) = heights.iter().position(|h| !h.is_finite()) {
            return Err(Error::invalid(format!("non-finite height at index {i}")));
        }
        Ok(Self {
            width,
            height,
            pitch_m,
            heights,
        })
    }

    /// A DEM with every height set to `value`.
    pub fn flat(width: usize, height: usize, pitch_m: f64, value: f32) -> Result<Self> {
        Self::new(width, height, pitch_m, vec![value; width * height])
    }

    /// Builds a DEM by evaluating `f(x_m, y_m)` at every grid node.
    pub fn from_fn(
        width: usize,
        height: usize,
        pitch_m: f64,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut heights = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                heights.push(f(col as f64 * pitch_m, row as f64 * pitch_m) as f32);
            }
        }
        Self::new(width, height, pitch_m, heights)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pitch_m(&self) -> f64 {
        self.pitch_m
    }

    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    pub fn into_heights(self) -> Vec<f32> {
        self.heights
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        f64::from(self.heights[row * self.width + col])
    }

    /// Extent of the node lattice in meters along x (columns) and y (rows).
    pub fn extent_m(&self) -> (f64, f64) {
        (
            (self.width - 1) as f64 * self.pitch_m,
            (self.height - 1) as f64 * self.pitch_m,
        )
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.heights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| {
            (lo.min(f64::from(h)), hi.max(f64::from(h)))
        })
    }
}

/// Maps an output index onto source coordinates so that the first and last
/// samples of both grids coincide.
#[inline]
fn align_corners(dst: usize, dst_len: usize, src_len: usize) -> f64 {
    if dst_len <= 1 || src_len <= 1 {
        0.0
    } else {
        dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Bilinear resampling of a row-major grid with corner-aligned sampling.
pub fn resize_bilinear(
    src: &[f64],
    width: usize,
    height: usize,
    out_width: usize,
    out_height: usize,
) -> Vec<f64> {
    debug_assert_eq!(src.len(), width * height);
    let mut out = Vec::with_capacity(out_width * out_height);
    for r in 0..out_height {
        let y = align_corners(r, out_height, height);
        let y0 = (y.floor() as usize).min(height - 1);
        let y1 = (y0 + 1).min(height - 1);
        let ty = y - y0 as f64;
        for c in 0..out_width {
            let x = align_corners(c, out_width, width);
            let x0 = (x.floor() as usize).min(width - 1);
            let x1 = (x0 + 1).min(width - 1);
            let tx = x - x0 as f64;
            let top = src[y0 * width + x0] * (1.0 - tx) + src[y0 * width + x1] * tx;
            let bottom = src[y1 * width + x0] * (1.0 - tx) + src[y1 * width + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Nearest-neighbour resampling, used for categorical rasters.
pub fn resize_nearest<T: Copy>(
    src: &[T],
    width: usize,
    height: usize,
    out_width: usize,
    out_height: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(out_width * out_height);
    for r in 0..out_height {
        let y = (align_corners(r, out_height, height).round() as usize).min(height - 1);
        for c in 0..out_width {
            let x = (align_corners(c, out_width, width).round() as usize).min(width - 1);
            out.push(src[y * width + x]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_dems() {
        assert!(Dem::new(0, 3, 1.0, vec![]).is_err());
        assert!(Dem::new(1, 1, 0.0, vec![0.0]).is_err());
        assert!(Dem::new(2, 1, 1.0, vec![0.0]).is_err());
        assert!(Dem::new(1, 1, 1.0, vec![f32::NAN]).is_err());
    }

    #[test]
    fn resize_identity_when_shapes_match() {
        let src: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(resize_bilinear(&src, 4, 3, 4, 3), src);
        assert_eq!(resize_nearest(&src, 4, 3, 4, 3), src);
    }

    #[test]
    fn bilinear_upsample_of_ramp() {
        // {0,1;1,2} -> 4x4: value is (x + y) / 3 on the corner-aligned lattice.
        let out = resize_bilinear(&[0.0, 1.0, 1.0, 2.0], 2, 2, 4, 4);
        for r in 0..4 {
            for c in 0..4 {
                let expected = (r + c) as f64 / 3.0;
                assert!((out[r * 4 + c] - expected).abs() < 1e-12);
            }
        }
    }
}
