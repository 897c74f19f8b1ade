//! Binary PGM/PPM rendering of grid files.
//!
//! DEMs are gray-scaled between their own minimum and maximum, probability
//! maps over [0, 1], uncertainty maps over [0, ln 2]. Safety maps use blue
//! for Safe, yellow for Unsafe, and gray for Invalid. A site marker forces
//! colour output and is drawn as a red cross.

use std::f64::consts::LN_2;

use safesite::format::{GridFile, GridKind, Payload};
use safesite::maps::Label;

pub const SAFE_RGB: [u8; 3] = [0, 70, 255];
pub const UNSAFE_RGB: [u8; 3] = [255, 215, 0];
pub const INVALID_RGB: [u8; 3] = [128, 128, 128];
pub const MARKER_RGB: [u8; 3] = [255, 0, 0];
const MARKER_ARM: isize = 2;

/// A rendered image; `channels` is 1 (PGM) or 3 (PPM).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels: self.pixels.iter().flat_map(|&g| [g, g, g]).collect(),
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.pixels[i..i + self.channels]
    }
}

fn gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
            (t * 255.0).round() as u8
        })
        .collect()
}

/// Renders a grid file, optionally marking a `(row, col)` site.
pub fn render(grid: &GridFile, site: Option<(usize, usize)>) -> Image {
    let (width, height) = (grid.header.width, grid.header.height);
    let mut img = match &grid.payload {
        Payload::Labels(labels) => Image {
            width,
            height,
            channels: 3,
            pixels: labels
                .iter()
                .flat_map(|l| match l {
                    Label::Safe => SAFE_RGB,
                    Label::Unsafe => UNSAFE_RGB,
                    Label::Invalid => INVALID_RGB,
                })
                .collect(),
        },
        Payload::Float(_) => {
            let values = grid.values().unwrap_or_default();
            let (lo, hi) = match grid.header.kind {
                GridKind::Probability => (0.0, 1.0),
                GridKind::Uncertainty => (0.0, LN_2),
                _ => values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
            };
            Image {
                width,
                height,
                channels: 1,
                pixels: gray(&values, lo, hi),
            }
        }
    };
    if let Some((row, col)) = site {
        img = img.to_rgb();
        for d in -MARKER_ARM..=MARKER_ARM {
            for (r, c) in [(row as isize + d, col as isize), (row as isize, col as isize + d)] {
                if (0..height as isize).contains(&r) && (0..width as isize).contains(&c) {
                    let i = (r as usize * width + c as usize) * 3;
                    img.pixels[i..i + 3].copy_from_slice(&MARKER_RGB);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use safesite::maps::SafetyMap;

    #[test]
    fn all_safe_map_is_uniform_blue() {
        let map = SafetyMap::filled(3, 2, Label::Safe);
        let img = render(&GridFile::from_safety_map(&map, 1.0), None);
        assert_eq!(img.channels, 3);
        assert!(img.pixels.chunks(3).all(|p| p == SAFE_RGB));
        assert!(img.encode().starts_with(b"P6\n3 2\n255\n"));
    }

    #[test]
    fn zero_uncertainty_is_black() {
        let grid = GridFile::from_values(GridKind::Uncertainty, 4, 4, 1.0, &[0.0; 16]);
        let img = render(&grid, None);
        assert_eq!(img.channels, 1);
        assert!(img.pixels.iter().all(|&p| p == 0));
        let full = render(&GridFile::from_values(GridKind::Uncertainty, 1, 1, 1.0, &[LN_2]), None);
        assert_eq!(full.pixels, vec![255]);
    }

    #[test]
    fn marker_is_drawn_and_clipped() {
        let map = SafetyMap::filled(5, 5, Label::Unsafe);
        let img = render(&GridFile::from_safety_map(&map, 1.0), Some((0, 4)));
        assert_eq!(img.pixel(0, 4), MARKER_RGB);
        assert_eq!(img.pixel(2, 4), MARKER_RGB);
        assert_eq!(img.pixel(0, 2), MARKER_RGB);
        assert_eq!(img.pixel(1, 3), UNSAFE_RGB);
    }
}
