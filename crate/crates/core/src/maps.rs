//! Per-pixel label and probability rasters aligned with a DEM.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Unsafe = 0,
    Safe = 1,
    Invalid = 2,
}

impl Label {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Unsafe),
            1 => Some(Label::Safe),
            2 => Some(Label::Invalid),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }

    pub fn is_valid(self) -> bool {
        self != Label::Invalid
    }
}

/// Tri-state safety labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl SafetyMap {
    pub fn new(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "safety map of {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: Label) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Label {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: Label) {
        self.labels[row * self.width + col] = label;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Marks every pixel within `margin` of any edge as Invalid.
    pub fn invalidate_border(&mut self, margin: usize) {
        for row in 0..self.height {
            for col in 0..self.width {
                if in_border(row, col, self.width, self.height, margin) {
                    self.set(row, col, Label::Invalid);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn in_border(row: usize, col: usize, width: usize, height: usize, margin: usize) -> bool {
    row < margin || col < margin || row + margin >= height || col + margin >= width
}

/// Pixel-wise probability of a safe touchdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub width: usize,
    pub height: usize,
    pub p_safe: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, p_safe: Vec<f64>) -> Result<Self> {
        if p_safe.len() != width * height {
            return Err(Error::invalid("probability map size does not match its shape"));
        }
        if let Some(i) = p_safe.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!(
                "probability {} at index {i} outside [0, 1]",
                p_safe[i]
            )));
        }
        Ok(Self {
            width,
            height,
            p_safe,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.p_safe[row * self.width + col]
    }
}

pub(crate) fn check_shapes(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}
