//! Flat `key = value` run configuration.
//!
//! Every pipeline parameter lives under one key. Files may omit keys (the
//! defaults apply) and may contain `#` comments. The canonical rendering
//! produced by [`RunConfig::to_text`] lists every key in a fixed order; its
//! SHA-256 is the config digest stamped on every artifact.

use std::fmt::Display;
use std::str::FromStr;

use safesite::oracle::{LanderGeometry, OracleConfig};
use safesite::rng::{derive_seed, named_seed};
use safesite::segmenter::{ModelConfig, TrainConfig};
use safesite::terrain::{NoiseSpec, Range, TerrainParams};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub terrain: TerrainParams,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    pub train_sigma_m: f64,
    pub test_sigmas_m: Vec<f64>,
    pub geometry: LanderGeometry,
    pub oracle: OracleConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub mc_samples: usize,
    /// Fixed entropy cutoff; `None` calibrates on the validation split.
    pub threshold_nats: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            terrain: TerrainParams::default(),
            train_count: 160,
            validation_count: 20,
            test_count: 20,
            train_sigma_m: 0.0167,
            test_sigmas_m: vec![0.0167, 0.03, 0.07],
            geometry: LanderGeometry::default(),
            oracle: OracleConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            mc_samples: 8,
            threshold_nats: None,
        }
    }
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Validation(format!("invalid value `{value}` for `{key}`"))
}

fn num<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn range(key: &str, value: &str) -> CliResult<Range> {
    match list::<f64>(key, value)?.as_slice() {
        &[min, max] => Ok(Range::new(min, max)),
        _ => Err(bad(key, value)),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> CliResult<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show_optional<T: Display>(value: &Option<T>) -> String {
    value.as_ref().map_or_else(|| "auto".to_string(), ToString::to_string)
}

impl RunConfig {
    /// Defaults overlaid with the entries of a config document.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn is_key(key: &str) -> bool {
        Self::default().entries().iter().any(|(k, _)| *k == key)
    }

    /// Assigns one key; unknown keys and unparsable values are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let t = &mut self.terrain;
        let g = &mut self.geometry;
        let o = &mut self.oracle;
        match key {
            "seed" => self.seed = num(key, value)?,
            "terrain.size" => t.size = num(key, value)?,
            "terrain.pitch_m" => t.pitch_m = num(key, value)?,
            "terrain.base_amplitude_m" => t.base_amplitude_m = num(key, value)?,
            "terrain.base_roughness_exponent" => t.base_roughness_exponent = num(key, value)?,
            "terrain.base_wavelength_m" => t.base_wavelength_m = num(key, value)?,
            "terrain.crater_count" => t.crater_count = num(key, value)?,
            "terrain.crater_radius_m" => t.crater_radius_range_m = range(key, value)?,
            "terrain.crater_depth_fraction" => t.crater_depth_fraction = num(key, value)?,
            "terrain.rock_count" => t.rock_count = num(key, value)?,
            "terrain.rock_height_m" => t.rock_height_range_m = range(key, value)?,
            "terrain.rock_radius_m" => t.rock_radius_range_m = range(key, value)?,
            "dataset.train" => self.train_count = num(key, value)?,
            "dataset.validation" => self.validation_count = num(key, value)?,
            "dataset.test" => self.test_count = num(key, value)?,
            "noise.train_sigma_m" => self.train_sigma_m = num(key, value)?,
            "noise.test_sigmas_m" => self.test_sigmas_m = list(key, value)?,
            "oracle.pad_count" => g.pad_count = num(key, value)?,
            "oracle.pad_circle_radius_m" => g.pad_circle_radius_m = num(key, value)?,
            "oracle.body_clearance_radius_m" => g.body_clearance_radius_m = num(key, value)?,
            "oracle.slope_limit_deg" => g.slope_limit_deg = num(key, value)?,
            "oracle.roughness_limit_m" => g.roughness_limit_m = num(key, value)?,
            "oracle.orientation_samples" => o.orientation_samples = num(key, value)?,
            "oracle.offset_samples" => o.offset_samples = num(key, value)?,
            "oracle.offset_sigma_m" => o.offset_sigma_m = num(key, value)?,
            "oracle.safety_threshold" => o.safety_threshold = num(key, value)?,
            "oracle.border_margin_px" => o.border_margin_px = optional(key, value)?,
            "model.input_size" => self.model.input_size = num(key, value)?,
            "model.encoder_blocks" => self.model.encoder_blocks = num(key, value)?,
            "model.channels" => self.model.channels_per_block = list(key, value)?,
            "model.dropout_rate" => self.model.dropout_rate = num(key, value)?,
            "train.batch_size" => self.training.batch_size = num(key, value)?,
            "train.learning_rate" => self.training.learning_rate = num(key, value)?,
            "train.momentum" => self.training.momentum = num(key, value)?,
            "train.epochs" => self.training.epochs = num(key, value)?,
            "predict.mc_samples" => self.mc_samples = num(key, value)?,
            "uncertainty.threshold_nats" => self.threshold_nats = optional(key, value)?,
            other => return Err(CliError::Validation(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.terrain;
        let g = &self.geometry;
        let o = &self.oracle;
        let r = |r: &Range| format!("{},{}", r.min, r.max);
        vec![
            ("seed", self.seed.to_string()),
            ("terrain.size", t.size.to_string()),
            ("terrain.pitch_m", t.pitch_m.to_string()),
            ("terrain.base_amplitude_m", t.base_amplitude_m.to_string()),
            ("terrain.base_roughness_exponent", t.base_roughness_exponent.to_string()),
            ("terrain.base_wavelength_m", t.base_wavelength_m.to_string()),
            ("terrain.crater_count", t.crater_count.to_string()),
            ("terrain.crater_radius_m", r(&t.crater_radius_range_m)),
            ("terrain.crater_depth_fraction", t.crater_depth_fraction.to_string()),
            ("terrain.rock_count", t.rock_count.to_string()),
            ("terrain.rock_height_m", r(&t.rock_height_range_m)),
            ("terrain.rock_radius_m", r(&t.rock_radius_range_m)),
            ("dataset.train", self.train_count.to_string()),
            ("dataset.validation", self.validation_count.to_string()),
            ("dataset.test", self.test_count.to_string()),
            ("noise.train_sigma_m", self.train_sigma_m.to_string()),
            ("noise.test_sigmas_m", join(&self.test_sigmas_m)),
            ("oracle.pad_count", g.pad_count.to_string()),
            ("oracle.pad_circle_radius_m", g.pad_circle_radius_m.to_string()),
            ("oracle.body_clearance_radius_m", g.body_clearance_radius_m.to_string()),
            ("oracle.slope_limit_deg", g.slope_limit_deg.to_string()),
            ("oracle.roughness_limit_m", g.roughness_limit_m.to_string()),
            ("oracle.orientation_samples", o.orientation_samples.to_string()),
            ("oracle.offset_samples", o.offset_samples.to_string()),
            ("oracle.offset_sigma_m", o.offset_sigma_m.to_string()),
            ("oracle.safety_threshold", o.safety_threshold.to_string()),
            ("oracle.border_margin_px", show_optional(&o.border_margin_px)),
            ("model.input_size", self.model.input_size.to_string()),
            ("model.encoder_blocks", self.model.encoder_blocks.to_string()),
            ("model.channels", join(&self.model.channels_per_block)),
            ("model.dropout_rate", self.model.dropout_rate.to_string()),
            ("train.batch_size", self.training.batch_size.to_string()),
            ("train.learning_rate", self.training.learning_rate.to_string()),
            ("train.momentum", self.training.momentum.to_string()),
            ("train.epochs", self.training.epochs.to_string()),
            ("predict.mc_samples", self.mc_samples.to_string()),
            ("uncertainty.threshold_nats", show_optional(&self.threshold_nats)),
        ]
    }

    /// Canonical rendering: every key, fixed order, one per line.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical rendering.
    pub fn digest(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_text().as_bytes()))
    }

    /// Checks every key against the invariants of the module that owns it.
    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::Validation(m));
        self.terrain_params(0).validate()?;
        if self.terrain.size == 0 {
            return fail("terrain.size must be >= 1".into());
        }
        if self.train_count == 0 || self.validation_count == 0 || self.test_count == 0 {
            return fail("every dataset split needs at least one DEM".into());
        }
        if self.test_sigmas_m.is_empty() {
            return fail("noise.test_sigmas_m must list at least one level".into());
        }
        for &s in self.sigmas().iter() {
            NoiseSpec::new(s, 0)?;
        }
        self.geometry.validate()?;
        self.oracle.validate()?;
        let margin = self.oracle.margin_px(&self.geometry, self.terrain.pitch_m);
        if 2 * margin >= self.terrain.size {
            return fail(format!(
                "a {margin}-pixel border leaves no interior on a {0}x{0} DEM",
                self.terrain.size
            ));
        }
        self.model.validate()?;
        self.training.validate()?;
        if self.mc_samples == 0 {
            return fail("predict.mc_samples must be >= 1".into());
        }
        if let Some(t) = self.threshold_nats {
            if !(0.0..=std::f64::consts::LN_2).contains(&t) {
                return fail(format!("uncertainty.threshold_nats must lie in [0, ln 2], got {t}"));
            }
        }
        Ok(())
    }

    pub fn total_dems(&self) -> usize {
        self.train_count + self.validation_count + self.test_count
    }

    /// Every noise level that gets a noisy DEM variant: the training level
    /// first, then the test levels in order, without repeats.
    pub fn sigmas(&self) -> Vec<f64> {
        let mut out = vec![self.train_sigma_m];
        for &s in &self.test_sigmas_m {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn terrain_params(&self, index: usize) -> TerrainParams {
        TerrainParams {
            rng_seed: named_seed(self.seed, "terrain", index as u64),
            ..self.terrain.clone()
        }
    }

    /// Noise for DEM `index` at position `level` of [`sigmas`](Self::sigmas).
    pub fn noise_spec(&self, index: usize, level: usize) -> CliResult<NoiseSpec> {
        let sigma = self.sigmas()[level];
        Ok(NoiseSpec::new(
            sigma,
            derive_seed(named_seed(self.seed, "noise", index as u64), level as u64),
        )?)
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            rng_seed: named_seed(self.seed, "oracle", 0),
            ..self.oracle.clone()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            rng_seed: named_seed(self.seed, "model", 0),
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: named_seed(self.seed, "train", 0),
            ..self.training.clone()
        }
    }

    /// Base seed of the Monte-Carlo dropout samples for DEM `index`.
    pub fn mc_seed(&self, index: usize) -> u64 {
        named_seed(self.seed, "mc", index as u64)
    }
}
