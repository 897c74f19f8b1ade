//! Versioned model files: a text header followed by little-endian `f64`
//! parameters and then batch-norm buffers.

use std::fs;
use std::path::Path;

use super::{ModelConfig, TrainedModel, TrainingMeta};
use crate::error::{Error, ParseError, Result};
use crate::format::write_atomic;

const MAGIC: &str = "SAFESITE-MODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn encode_model(model: &TrainedModel, digest: Option<&str>) -> Vec<u8> {
    let c = &model.config;
    let channels: Vec<String> = c.channels_per_block.iter().map(|v| v.to_string()).collect();
    let mut header = format!(
        "{MAGIC} {MODEL_FORMAT_VERSION}\ninput_size {}\nencoder_blocks {}\nchannels {}\ndropout_rate {}\nrng_seed {}\n\
         epochs {}\nfinal_loss {}\nnorm_min {}\nnorm_max {}\nparams {}\nbuffers {}\n",
        c.input_size,
        c.encoder_blocks,
        channels.join(","),
        c.dropout_rate,
        c.rng_seed,
        model.meta.epochs,
        model.meta.final_loss,
        model.meta.norm_min,
        model.meta.norm_max,
        model.params.len(),
        model.buffers.len(),
    );
    if let Some(d) = digest {
        header.push_str(&format!("digest {d}\n"));
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    for v in model.params.iter().chain(&model.buffers) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_model(bytes: &[u8]) -> Result<(TrainedModel, Option<String>), ParseError> {
    let malformed = |m: &str| ParseError::MalformedHeader(m.to_string());
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| malformed("missing `end` line"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("header is not UTF-8"))?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| malformed("bad magic line"))?;
    if version != MODEL_FORMAT_VERSION.to_string() {
        return Err(ParseError::UnsupportedVersion(version.to_string()));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        let (k, v) = line.split_once(' ').ok_or_else(|| malformed("bad header line"))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| malformed(&format!("missing `{k}`")));
    fn num<T: std::str::FromStr>(s: &str, k: &str) -> Result<T, ParseError> {
        s.parse()
            .map_err(|_| ParseError::MalformedHeader(format!("bad value for `{k}`")))
    }
    let config = ModelConfig {
        input_size: num(get("input_size")?, "input_size")?,
        encoder_blocks: num(get("encoder_blocks")?, "encoder_blocks")?,
        channels_per_block: get("channels")?
            .split(',')
            .map(|v| num(v, "channels"))
            .collect::<Result<_, _>>()?,
        dropout_rate: num(get("dropout_rate")?, "dropout_rate")?,
        rng_seed: num(get("rng_seed")?, "rng_seed")?,
    };
    let n_params: usize = num(get("params")?, "params")?;
    let n_buffers: usize = num(get("buffers")?, "buffers")?;
    let body = &bytes[end + 5..];
    let expected = (n_params + n_buffers) * 8;
    if body.len() < expected {
        return Err(ParseError::Truncated {
            expected,
            found: body.len(),
        });
    }
    if body.len() > expected {
        return Err(ParseError::TrailingData {
            extra: body.len() - expected,
        });
    }
    let mut values = Vec::with_capacity(n_params + n_buffers);
    for (index, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(ParseError::NonFinite { index });
        }
        values.push(v);
    }
    let buffers = values.split_off(n_params);
    let model = TrainedModel {
        config,
        params: values,
        buffers,
        meta: TrainingMeta {
            epochs: num(get("epochs")?, "epochs")?,
            final_loss: num(get("final_loss")?, "final_loss")?,
            norm_min: num(get("norm_min")?, "norm_min")?,
            norm_max: num(get("norm_max")?, "norm_max")?,
            loss_history: Vec::new(),
        },
    };
    Ok((model, fields.get("digest").map(|d| d.to_string())))
}

pub fn write_model(model: &TrainedModel, path: &Path, digest: Option<&str>) -> Result<()> {
    model.check()?;
    write_atomic(path, &encode_model(model, digest))
}

/// Reads a model and its optional provenance digest.
pub fn read_model(path: &Path) -> Result<(TrainedModel, Option<String>)> {
    let bytes = fs::read(path)?;
    let (model, digest) = decode_model(&bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    model.check()?;
    Ok((model, digest))
}
