//! Stochastic per-pixel safety classifier.
//!
//! A small SegNet-style encoder/decoder trained with cross-entropy. Dropout
//! stays active at inference, so repeated forward passes with different
//! seeds sample from an approximate posterior; [`mc_predict`] averages their
//! softmax outputs.

mod io;
mod layers;
mod network;
mod tensor;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, resize_nearest, Dem};
use crate::maps::{check_shapes, Label, SafetyMap};
use crate::rng::{named_seed, stream_rng};
use network::{Architecture, Mode};
use tensor::Tensor;

pub use io::{decode_model, encode_model, read_model, write_model, MODEL_FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Side of the square network input; must be divisible by `2^encoder_blocks`.
    pub input_size: usize,
    pub encoder_blocks: usize,
    pub channels_per_block: Vec<usize>,
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            encoder_blocks: 3,
            channels_per_block: vec![16, 32, 64],
            dropout_rate: 0.5,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_blocks == 0 {
            return Err(Error::invalid("encoder_blocks must be >= 1"));
        }
        if self.channels_per_block.len() != self.encoder_blocks {
            return Err(Error::invalid(format!(
                "channels_per_block has {} entries for {} encoder blocks",
                self.channels_per_block.len(),
                self.encoder_blocks
            )));
        }
        if self.channels_per_block.contains(&0) {
            return Err(Error::invalid("channel counts must be >= 1"));
        }
        let stride = 1usize
            .checked_shl(self.encoder_blocks as u32)
            .ok_or_else(|| Error::invalid("too many encoder blocks"))?;
        if self.input_size == 0 || self.input_size % stride != 0 {
            return Err(Error::invalid(format!(
                "input_size {} is not divisible by 2^{}",
                self.input_size, self.encoder_blocks
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(Architecture::new(self).param_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-4,
            momentum: 0.9,
            epochs: 300,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: f64,
    /// Height range of the training inputs, used for normalization.
    pub norm_min: f64,
    pub norm_max: f64,
    /// Mean loss of each epoch; not persisted in model files.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    /// Batch-norm running means and variances.
    pub buffers: Vec<f64>,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    /// An untrained network with freshly initialised parameters.
    pub fn initialize(config: ModelConfig, norm_min: f64, norm_max: f64) -> Result<Self> {
        config.validate()?;
        if !(norm_min < norm_max) {
            return Err(Error::invalid("normalization range must satisfy min < max"));
        }
        let (params, buffers) = Architecture::new(&config).init(config.rng_seed);
        Ok(Self {
            config,
            params,
            buffers,
            meta: TrainingMeta {
                epochs: 0,
                final_loss: f64::NAN,
                norm_min,
                norm_max,
                loss_history: Vec::new(),
            },
        })
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.config.validate()?;
        let arch = Architecture::new(&self.config);
        if self.params.len() != arch.param_count || self.buffers.len() != arch.buffer_count {
            return Err(Error::invalid("parameter count does not match the model configuration"));
        }
        if self.params.iter().chain(&self.buffers).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model contains non-finite parameters"));
        }
        if !(self.meta.norm_min < self.meta.norm_max) {
            return Err(Error::invalid("normalization range must satisfy min < max"));
        }
        Ok(())
    }
}

/// Per-pixel class probabilities `(p_safe, p_unsafe)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSoftmaxMap {
    pub width: usize,
    pub height: usize,
    pub p_safe: Vec<f64>,
    pub p_unsafe: Vec<f64>,
}

impl MeanSoftmaxMap {
    pub fn new(width: usize, height: usize, p_safe: Vec<f64>, p_unsafe: Vec<f64>) -> Result<Self> {
        if p_safe.len() != width * height || p_unsafe.len() != width * height {
            return Err(Error::invalid("softmax map size does not match its shape"));
        }
        for (i, (s, u)) in p_safe.iter().zip(&p_unsafe).enumerate() {
            if !((0.0..=1.0).contains(s) && (0.0..=1.0).contains(u) && (s + u - 1.0).abs() <= 1e-6) {
                return Err(Error::invalid(format!("invalid probability pair ({s}, {u}) at index {i}")));
            }
        }
        Ok(Self {
            width,
            height,
            p_safe,
            p_unsafe,
        })
    }

    /// Builds a map from `p_safe` alone, with `p_unsafe = 1 - p_safe`.
    pub fn from_p_safe(width: usize, height: usize, p_safe: Vec<f64>) -> Result<Self> {
        let p_unsafe = p_safe.iter().map(|p| 1.0 - p).collect();
        Self::new(width, height, p_safe, p_unsafe)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Corner-aligned bilinear resampling of both probability planes.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if (width, height) == self.shape() {
            return self.clone();
        }
        let clamp = |v: Vec<f64>| v.into_iter().map(|p| p.clamp(0.0, 1.0)).collect::<Vec<_>>();
        Self {
            width,
            height,
            p_safe: clamp(resize_bilinear(&self.p_safe, self.width, self.height, width, height)),
            p_unsafe: clamp(resize_bilinear(&self.p_unsafe, self.width, self.height, width, height)),
        }
    }
}

/// Bilinear resize to `target_size` squared, then min-max normalization
/// clamped to `[0, 1]`.
pub fn preprocess(dem: &Dem, train_min: f64, train_max: f64, target_size: usize) -> Result<Vec<f64>> {
    if !(train_min < train_max) {
        return Err(Error::invalid(format!(
            "degenerate normalization range [{train_min}, {train_max}]"
        )));
    }
    if target_size == 0 {
        return Err(Error::invalid("target_size must be >= 1"));
    }
    let heights: Vec<f64> = dem.heights().iter().map(|&h| f64::from(h)).collect();
    let resized = resize_bilinear(&heights, dem.width(), dem.height(), target_size, target_size);
    let span = train_max - train_min;
    Ok(resized.into_iter().map(|h| ((h - train_min) / span).clamp(0.0, 1.0)).collect())
}

fn probabilities(logits: &Tensor) -> MeanSoftmaxMap {
    let probs = layers::softmax2(logits);
    MeanSoftmaxMap {
        width: logits.w,
        height: logits.h,
        p_safe: probs.plane(0, 0).to_vec(),
        p_unsafe: probs.plane(0, 1).to_vec(),
    }
}

fn input_tensor(model: &TrainedModel, input: &[f64]) -> Result<Tensor> {
    let s = model.config.input_size;
    if input.len() != s * s {
        return Err(Error::ShapeMismatch {
            expected: (s, s),
            actual: (input.len(), 1),
        });
    }
    Ok(Tensor::from_vec(1, 1, s, s, input.to_vec()))
}

/// One inference pass with dropout masks drawn from `sample_seed` and
/// batch norm on its frozen running statistics.
pub fn stochastic_forward(model: &TrainedModel, input: &[f64], sample_seed: u64) -> Result<MeanSoftmaxMap> {
    let x = input_tensor(model, input)?;
    let arch = Architecture::new(&model.config);
    let mut buffers = model.buffers.clone();
    let trace = arch.forward(&model.params, &mut buffers, x, Mode::Inference, sample_seed);
    Ok(probabilities(&trace.logits))
}

/// Inference with dropout disabled.
pub fn deterministic_forward(model: &TrainedModel, input: &[f64]) -> Result<MeanSoftmaxMap> {
    let x = input_tensor(model, input)?;
    let mut arch = Architecture::new(&model.config);
    arch.dropout_rate = 0.0;
    let mut buffers = model.buffers.clone();
    let trace = arch.forward(&model.params, &mut buffers, x, Mode::Inference, 0);
    Ok(probabilities(&trace.logits))
}

/// Running mean update kept inside the interval spanned by the old mean and
/// the new sample, so identical samples reproduce themselves bit-exactly.
#[inline]
fn mean_update(mean: f64, sample: f64, k: usize) -> f64 {
    let next = mean + (sample - mean) / k as f64;
    next.clamp(mean.min(sample), mean.max(sample))
}

/// Mean of per-sample softmax maps (the MC-dropout predictive distribution).
pub fn mean_of_samples(samples: &[MeanSoftmaxMap]) -> Result<MeanSoftmaxMap> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("at least one sample is required"))?;
    let mut acc = first.clone();
    for (m, s) in samples.iter().enumerate().skip(1) {
        check_shapes(acc.shape(), s.shape())?;
        for i in 0..acc.p_safe.len() {
            acc.p_safe[i] = mean_update(acc.p_safe[i], s.p_safe[i], m + 1);
            acc.p_unsafe[i] = mean_update(acc.p_unsafe[i], s.p_unsafe[i], m + 1);
        }
    }
    Ok(acc)
}

/// Averages `samples` stochastic passes seeded `base_seed, base_seed + 1, ...`.
pub fn mc_predict(model: &TrainedModel, input: &[f64], samples: usize, base_seed: u64) -> Result<MeanSoftmaxMap> {
    if samples == 0 {
        return Err(Error::invalid("MC sample count must be >= 1"));
    }
    let mut acc = stochastic_forward(model, input, base_seed)?;
    for m in 1..samples {
        let s = stochastic_forward(model, input, base_seed.wrapping_add(m as u64))?;
        for i in 0..acc.p_safe.len() {
            acc.p_safe[i] = mean_update(acc.p_safe[i], s.p_safe[i], m + 1);
            acc.p_unsafe[i] = mean_update(acc.p_unsafe[i], s.p_unsafe[i], m + 1);
        }
    }
    Ok(acc)
}

/// Preprocesses `dem` with the model's normalization, runs [`mc_predict`],
/// and resamples the result back onto the DEM grid.
pub fn predict_dem(model: &TrainedModel, dem: &Dem, samples: usize, base_seed: u64) -> Result<MeanSoftmaxMap> {
    let input = preprocess(dem, model.meta.norm_min, model.meta.norm_max, model.config.input_size)?;
    Ok(mc_predict(model, &input, samples, base_seed)?.resize(dem.width(), dem.height()))
}

/// Safe where `p_safe > p_unsafe`; ties resolve to Unsafe.
pub fn argmax_labels(msm: &MeanSoftmaxMap) -> SafetyMap {
    let labels = msm
        .p_safe
        .iter()
        .zip(&msm.p_unsafe)
        .map(|(s, u)| if s > u { Label::Safe } else { Label::Unsafe })
        .collect();
    SafetyMap {
        width: msm.width,
        height: msm.height,
        labels,
    }
}

fn class_target(label: Label) -> Option<u8> {
    match label {
        Label::Safe => Some(0),
        Label::Unsafe => Some(1),
        Label::Invalid => None,
    }
}

/// A batch of preprocessed inputs and class targets (`0` safe, `1` unsafe,
/// `None` ignored).
#[derive(Debug, Clone)]
pub struct Batch {
    /// Side length of each square input.
    pub side: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<Option<u8>>>,
}

impl Batch {
    fn tensors(&self) -> (Tensor, Vec<Option<u8>>) {
        let n = self.inputs.len();
        let data = self.inputs.concat();
        (Tensor::from_vec(n, 1, self.side, self.side, data), self.targets.concat())
    }
}

/// Training-mode loss and analytic gradient for `params` with dropout masks
/// fixed by `dropout_seed`.
pub fn training_loss(config: &ModelConfig, params: &[f64], batch: &Batch, dropout_seed: u64) -> Result<(f64, Vec<f64>)> {
    config.validate()?;
    let arch = Architecture::new(config);
    if params.len() != arch.param_count {
        return Err(Error::invalid("parameter vector length does not match the architecture"));
    }
    let (x, targets) = batch.tensors();
    let mut buffers = arch.init(config.rng_seed).1;
    let trace = arch.forward(params, &mut buffers, x, Mode::Train, dropout_seed);
    let (loss, grad_logits, _) = layers::cross_entropy(&trace.logits, &targets);
    let grads = arch.backward(params, &trace, grad_logits);
    Ok((loss, grads))
}

/// Training-mode loss only, with the same fixed dropout masks.
pub fn training_loss_value(config: &ModelConfig, params: &[f64], batch: &Batch, dropout_seed: u64) -> Result<f64> {
    config.validate()?;
    let arch = Architecture::new(config);
    let (x, targets) = batch.tensors();
    let mut buffers = arch.init(config.rng_seed).1;
    let trace = arch.forward(params, &mut buffers, x, Mode::Train, dropout_seed);
    Ok(layers::cross_entropy(&trace.logits, &targets).0)
}

/// Fits a model with SGD + momentum on per-pixel cross-entropy. Invalid
/// pixels do not contribute to the loss.
pub fn train(dataset: &[(Dem, SafetyMap)], cfg: &TrainConfig, mcfg: &ModelConfig) -> Result<TrainedModel> {
    train_with_progress(dataset, cfg, mcfg, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean_loss)` after each epoch.
pub fn train_with_progress(
    dataset: &[(Dem, SafetyMap)],
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel> {
    cfg.validate()?;
    mcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Training("dataset is empty".into()));
    }
    for (dem, labels) in dataset {
        check_shapes(dem.shape(), labels.shape())?;
    }
    if dataset.iter().all(|(_, l)| l.labels.iter().all(|&x| x == Label::Invalid)) {
        return Err(Error::Training("every training pixel is Invalid".into()));
    }

    let (norm_min, norm_max) = dataset.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (d, _)| {
        let (a, b) = d.min_max();
        (lo.min(a), hi.max(b))
    });
    // A perfectly flat training set still needs a non-empty range.
    let (norm_min, norm_max) = if norm_min < norm_max { (norm_min, norm_max) } else { (norm_min - 0.5, norm_min + 0.5) };

    let size = mcfg.input_size;
    let inputs: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(d, _)| preprocess(d, norm_min, norm_max, size))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<Option<u8>>> = dataset
        .iter()
        .map(|(_, l)| {
            resize_nearest(&l.labels, l.width, l.height, size, size)
                .into_iter()
                .map(class_target)
                .collect()
        })
        .collect();

    let mut model = TrainedModel::initialize(mcfg.clone(), norm_min, norm_max)?;
    let arch = Architecture::new(mcfg);
    let mut velocity = vec![0.0; arch.param_count];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = stream_rng(named_seed(cfg.rng_seed, "shuffle", 0), 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                side: size,
                inputs: chunk.iter().map(|&i| inputs[i].clone()).collect(),
                targets: chunk.iter().map(|&i| targets[i].clone()).collect(),
            };
            let (x, t) = batch.tensors();
            let trace = arch.forward(&model.params, &mut model.buffers, x, Mode::Train, named_seed(cfg.rng_seed, "dropout", step));
            step += 1;
            let (loss, grad_logits, count) = layers::cross_entropy(&trace.logits, &t);
            if count == 0 {
                continue;
            }
            let grads = arch.backward(&model.params, &trace, grad_logits);
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grads) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            loss_sum += loss;
            batches += 1;
        }
        let mean = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };
        if !mean.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {}", epoch + 1)));
        }
        history.push(mean);
        on_epoch(epoch + 1, mean);
    }

    model.meta.epochs = cfg.epochs;
    model.meta.final_loss = history.last().copied().unwrap_or(f64::NAN);
    model.meta.loss_history = history;
    model.check()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dropout_rate: f64) -> ModelConfig {
        ModelConfig {
            input_size: 8,
            encoder_blocks: 2,
            channels_per_block: vec![3, 4],
            dropout_rate,
            rng_seed: 5,
        }
    }

    fn ramp_input() -> Vec<f64> {
        (0..64).map(|i| ((i * 37) % 64) as f64 / 63.0).collect()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = tiny_config(0.5);
        c.input_size = 10;
        assert!(c.validate().is_err());
        let mut c = tiny_config(1.0);
        assert!(c.validate().is_err());
        c.dropout_rate = 0.2;
        c.channels_per_block = vec![3];
        assert!(c.validate().is_err());
        assert!(TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn preprocess_bounds_and_errors() {
        let dem = Dem::flat(3, 3, 1.0, 2.0).unwrap();
        assert!(preprocess(&dem, 2.0, 5.0, 4).unwrap().iter().all(|&v| v == 0.0));
        assert!(preprocess(&dem, -1.0, 2.0, 4).unwrap().iter().all(|&v| v == 1.0));
        assert!(preprocess(&dem, 1.0, 1.0, 4).is_err());
        let dem = Dem::new(2, 2, 1.0, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let out = preprocess(&dem, 0.0, 2.0, 4).unwrap();
        assert_eq!([out[0], out[3], out[12], out[15]], [0.0, 0.5, 0.5, 1.0]);
        // Interior node (1, 2) sits at source (1/3, 2/3): (1/3 + 2/3) / 2.
        assert!((out[6] - 0.5).abs() < 1e-12);
        assert!((out[5] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn forward_outputs_are_normalized_and_seeded() {
        let model = TrainedModel::initialize(tiny_config(0.5), 0.0, 1.0).unwrap();
        let input = ramp_input();
        let a = stochastic_forward(&model, &input, 1).unwrap();
        let b = stochastic_forward(&model, &input, 2).unwrap();
        assert_eq!(a, stochastic_forward(&model, &input, 1).unwrap());
        assert_ne!(a, b);
        for (s, u) in a.p_safe.iter().zip(&a.p_unsafe) {
            assert!((s + u - 1.0).abs() < 1e-6);
        }
        assert!(stochastic_forward(&model, &input[..10], 1).is_err());
    }

    #[test]
    fn mc_predict_contract() {
        let input = ramp_input();
        let model = TrainedModel::initialize(tiny_config(0.5), 0.0, 1.0).unwrap();
        assert!(mc_predict(&model, &input, 0, 0).is_err());
        assert_eq!(mc_predict(&model, &input, 1, 9).unwrap(), stochastic_forward(&model, &input, 9).unwrap());

        let det = TrainedModel::initialize(tiny_config(0.0), 0.0, 1.0).unwrap();
        let reference = deterministic_forward(&det, &input).unwrap();
        for m in [1, 2, 3, 7] {
            assert_eq!(mc_predict(&det, &input, m, 100).unwrap(), reference);
        }
    }

    #[test]
    fn mean_of_two_samples() {
        let a = MeanSoftmaxMap::new(2, 1, vec![0.8, 0.1], vec![0.2, 0.9]).unwrap();
        let b = MeanSoftmaxMap::new(2, 1, vec![0.6, 0.3], vec![0.4, 0.7]).unwrap();
        let m = mean_of_samples(&[a, b]).unwrap();
        assert!((m.p_safe[0] - 0.7).abs() < 1e-12 && (m.p_unsafe[0] - 0.3).abs() < 1e-12);
        assert!((m.p_safe[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_is_unsafe() {
        let m = MeanSoftmaxMap::new(3, 1, vec![0.7, 0.5, 0.49], vec![0.3, 0.5, 0.51]).unwrap();
        assert_eq!(argmax_labels(&m).labels, vec![Label::Safe, Label::Unsafe, Label::Unsafe]);
    }

    #[test]
    fn training_rejects_bad_datasets() {
        let cfg = TrainConfig::default();
        let mcfg = tiny_config(0.5);
        assert!(matches!(train(&[], &cfg, &mcfg), Err(Error::Training(_))));
        let dem = Dem::flat(8, 8, 1.0, 0.0).unwrap();
        let all_invalid = SafetyMap::filled(8, 8, Label::Invalid);
        assert!(matches!(train(&[(dem, all_invalid)], &cfg, &mcfg), Err(Error::Training(_))));
    }

    #[test]
    fn inference_ignores_batch_composition() {
        let model = TrainedModel::initialize(tiny_config(0.0), 0.0, 1.0).unwrap();
        let input = ramp_input();
        let a = stochastic_forward(&model, &input, 0).unwrap();
        let _other = stochastic_forward(&model, &vec![0.3; 64], 0).unwrap();
        assert_eq!(a, stochastic_forward(&model, &input, 0).unwrap());
    }
}
