//! Landing-site selection by exact Euclidean distance transform.

use crate::error::{Error, Result};
use crate::maps::{check_shapes, Label, SafetyMap};

/// Binary candidate mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::invalid("mask size does not match its shape"));
        }
        Ok(Self { width, height, cells })
    }
}

/// Squared Euclidean distance (in pixels) from each candidate pixel to the
/// nearest non-candidate; everything outside the map counts as a
/// non-candidate. Values are exact integers stored as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub squared: Vec<f64>,
}

impl DistanceMap {
    #[inline]
    pub fn distance(&self, row: usize, col: usize) -> f64 {
        self.squared[row * self.width + col].sqrt()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.squared.iter().map(|d| d.sqrt()).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingSite {
    pub row: usize,
    pub col: usize,
    pub clearance_px: f64,
}

impl LandingSite {
    /// `row,col,clearance_px`, or `none` when no site exists.
    pub fn record(site: Option<&LandingSite>) -> String {
        match site {
            Some(s) => format!("{},{},{}", s.row, s.col, s.clearance_px),
            None => "none".to_string(),
        }
    }

    pub fn parse_record(text: &str) -> Result<Option<LandingSite>> {
        let text = text.trim();
        if text == "none" {
            return Ok(None);
        }
        let bad = || Error::invalid(format!("bad site record `{text}`"));
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let [row, col, clearance] = parts.as_slice() else {
            return Err(bad());
        };
        Ok(Some(LandingSite {
            row: row.parse().map_err(|_| bad())?,
            col: col.parse().map_err(|_| bad())?,
            clearance_px: clearance.parse().map_err(|_| bad())?,
        }))
    }
}

pub fn safe_mask(map: &SafetyMap) -> Mask {
    Mask {
        width: map.width,
        height: map.height,
        cells: map.labels.iter().map(|&l| l == Label::Safe).collect(),
    }
}

/// One-dimensional squared distance transform of sampled function `f`
/// (lower envelope of parabolas rooted at finite samples).
fn transform_1d(f: &[f64], out: &mut [f64], roots: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    roots.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        while let Some(&v) = roots.last() {
            let vf = v as f64;
            let s = ((fq + qf * qf) - (f[v] + vf * vf)) / (2.0 * qf - 2.0 * vf);
            if s <= *bounds.last().expect("bounds track roots") {
                roots.pop();
                bounds.pop();
            } else {
                roots.push(q);
                bounds.push(s);
                break;
            }
        }
        if roots.is_empty() {
            roots.push(q);
            bounds.push(f64::NEG_INFINITY);
        }
    }
    if roots.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < roots.len() && bounds[k + 1] < qf {
            k += 1;
        }
        let d = qf - roots[k] as f64;
        *o = d * d + f[roots[k]];
    }
}

/// Exact Euclidean distance transform via two separable lower-envelope passes
/// over a grid padded with one ring of obstacles.
pub fn distance_transform(mask: &Mask) -> DistanceMap {
    let (w, h) = (mask.width, mask.height);
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for r in 0..h {
        for c in 0..w {
            if mask.cells[r * w + c] {
                grid[(r + 1) * pw + c + 1] = f64::INFINITY;
            }
        }
    }

    let mut roots = Vec::new();
    let mut bounds = Vec::new();
    let mut column = vec![0.0; ph];
    let mut column_out = vec![0.0; ph];
    for c in 0..pw {
        for r in 0..ph {
            column[r] = grid[r * pw + c];
        }
        transform_1d(&column, &mut column_out, &mut roots, &mut bounds);
        for r in 0..ph {
            grid[r * pw + c] = column_out[r];
        }
    }
    let mut row_out = vec![0.0; pw];
    let mut squared = Vec::with_capacity(w * h);
    for r in 1..=h {
        transform_1d(&grid[r * pw..(r + 1) * pw], &mut row_out, &mut roots, &mut bounds);
        squared.extend_from_slice(&row_out[1..=w]);
    }
    DistanceMap {
        width: w,
        height: h,
        squared,
    }
}

/// Safe pixel with the greatest clearance; ties go to the smallest row, then
/// the smallest column. `None` when the map has no Safe pixel.
pub fn select_site(dmap: &DistanceMap, map: &SafetyMap) -> Result<Option<LandingSite>> {
    check_shapes(dmap.shape(), map.shape())?;
    let mut best: Option<(usize, f64)> = None;
    for (i, (&label, &d)) in map.labels.iter().zip(&dmap.squared).enumerate() {
        if label == Label::Safe && best.is_none_or(|(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    Ok(best.map(|(i, d)| LandingSite {
        row: i / map.width,
        col: i % map.width,
        clearance_px: d.sqrt(),
    }))
}

/// Mask, transform, and select in one step.
pub fn propose_site(map: &SafetyMap) -> Option<LandingSite> {
    let dmap = distance_transform(&safe_mask(map));
    select_site(&dmap, map).expect("distance map shares the safety map shape")
}
