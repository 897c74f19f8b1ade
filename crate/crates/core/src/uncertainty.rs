//! Predictive entropy and uncertainty-based invalidation.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::maps::{check_shapes, Label, SafetyMap};
use crate::segmenter::MeanSoftmaxMap;

/// Per-pixel predictive entropy in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub width: usize,
    pub height: usize,
    pub entropy: Vec<f64>,
}

impl UncertaintyMap {
    pub fn new(width: usize, height: usize, entropy: Vec<f64>) -> Result<Self> {
        if entropy.len() != width * height {
            return Err(Error::invalid("uncertainty map size does not match its shape"));
        }
        if let Some(v) = entropy.iter().find(|v| !(0.0..=LN_2 + 1e-9).contains(*v)) {
            return Err(Error::invalid(format!("entropy {v} outside [0, ln 2]")));
        }
        Ok(Self {
            width,
            height,
            entropy,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Global entropy cutoff calibrated on a validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyThreshold {
    pub value: f64,
    pub provenance: String,
}

impl UncertaintyThreshold {
    pub fn new(value: f64, provenance: impl Into<String>) -> Result<Self> {
        if !(0.0..=LN_2).contains(&value) {
            return Err(Error::invalid(format!("threshold {value} outside [0, ln 2]")));
        }
        Ok(Self {
            value,
            provenance: provenance.into(),
        })
    }

    /// `threshold_nats=<v>` and `validation_set=<id>` lines.
    pub fn to_text(&self) -> String {
        format!("threshold_nats={}\nvalidation_set={}\n", self.value, self.provenance)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut value = None;
        let mut provenance = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            match line.split_once('=') {
                Some(("threshold_nats", v)) => {
                    value = Some(v.parse::<f64>().map_err(|_| Error::invalid(format!("bad threshold `{v}`")))?)
                }
                Some(("validation_set", v)) => provenance = Some(v.to_string()),
                _ => return Err(Error::invalid(format!("unexpected threshold line `{line}`"))),
            }
        }
        Self::new(
            value.ok_or_else(|| Error::invalid("missing threshold_nats"))?,
            provenance.unwrap_or_default(),
        )
    }
}

/// Entropy of a binary distribution with `0 ln 0 = 0`.
pub fn binary_entropy(p_safe: f64, p_unsafe: f64) -> f64 {
    let term = |p: f64| if p <= 0.0 || p >= 1.0 { 0.0 } else { -p * p.ln() };
    (term(p_safe) + term(p_unsafe)).clamp(0.0, LN_2)
}

/// Entropy of the MC-mean class distribution at every pixel.
pub fn predictive_entropy(msm: &MeanSoftmaxMap) -> UncertaintyMap {
    let entropy = msm
        .p_safe
        .iter()
        .zip(&msm.p_unsafe)
        .map(|(&s, &u)| binary_entropy(s, u))
        .collect();
    UncertaintyMap {
        width: msm.width,
        height: msm.height,
        entropy,
    }
}

/// Mean entropy pooled over every pixel of every validation map. When
/// `labels` is given, pixels labelled Invalid there are left out.
pub fn calibrate_threshold(
    maps: &[UncertaintyMap],
    labels: Option<&[SafetyMap]>,
    provenance: &str,
) -> Result<UncertaintyThreshold> {
    if let Some(l) = labels {
        if l.len() != maps.len() {
            return Err(Error::Calibration(format!(
                "{} uncertainty maps but {} label maps",
                maps.len(),
                l.len()
            )));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, map) in maps.iter().enumerate() {
        let mask = labels.map(|l| &l[i]);
        if let Some(m) = mask {
            check_shapes(map.shape(), m.shape())?;
        }
        for (j, &h) in map.entropy.iter().enumerate() {
            if mask.is_some_and(|m| m.labels[j] == Label::Invalid) {
                continue;
            }
            sum += h;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Calibration("no valid pixels in the validation pool".into()));
    }
    UncertaintyThreshold::new((sum / count as f64).clamp(0.0, LN_2), provenance)
}

/// Pixels whose entropy exceeds the threshold become Invalid; the rest keep
/// their prediction.
pub fn apply_threshold(pred: &SafetyMap, unc: &UncertaintyMap, t: &UncertaintyThreshold) -> Result<SafetyMap> {
    check_shapes(pred.shape(), unc.shape())?;
    let labels = pred
        .labels
        .iter()
        .zip(&unc.entropy)
        .map(|(&l, &h)| if h > t.value { Label::Invalid } else { l })
        .collect();
    SafetyMap::new(pred.width, pred.height, labels)
}
