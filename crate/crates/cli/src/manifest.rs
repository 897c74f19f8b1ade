//! Dataset manifest: split membership and per-item file paths.
//!
//! ```text
//! SAFESITE-MANIFEST 1
//! seed <u64>
//! config_digest <hex>
//! splits <train> <validation> <test>
//! sigmas_m <s0,s1,...>
//! train_sigma_m <s>
//! item <id> <split> <clean> <label> <noisy at s0> <noisy at s1> ...
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout;

const MAGIC: &str = "SAFESITE-MANIFEST 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestItem {
    pub id: String,
    pub split: Split,
    pub clean: PathBuf,
    pub label: PathBuf,
    /// One noisy variant per entry of `DatasetManifest::sigmas_m`.
    pub noisy: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_digest: String,
    pub sigmas_m: Vec<f64>,
    pub train_sigma_m: f64,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    /// The manifest a `generate` run with `cfg` produces. Items are assigned
    /// to train, validation, and test in index order.
    pub fn plan(cfg: &RunConfig) -> Self {
        let sigmas = cfg.sigmas();
        let items = (0..cfg.total_dems())
            .map(|i| {
                let id = layout::item_id(i);
                let split = if i < cfg.train_count {
                    Split::Train
                } else if i < cfg.train_count + cfg.validation_count {
                    Split::Validation
                } else {
                    Split::Test
                };
                ManifestItem {
                    clean: layout::clean_dem(&id),
                    label: layout::label(&id),
                    noisy: sigmas.iter().map(|&s| layout::noisy_dem(&id, s)).collect(),
                    split,
                    id,
                }
            })
            .collect();
        Self {
            seed: cfg.seed,
            config_digest: cfg.digest(),
            sigmas_m: sigmas,
            train_sigma_m: cfg.train_sigma_m,
            items,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestItem)> {
        self.items.iter().enumerate().filter(move |(_, it)| it.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn sigma_level(&self, sigma_m: f64) -> CliResult<usize> {
        self.sigmas_m
            .iter()
            .position(|&s| s == sigma_m)
            .ok_or_else(|| CliError::Validation(format!("noise level {sigma_m} is not in the manifest")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "config_digest {}", self.config_digest);
        let _ = writeln!(
            out,
            "splits {} {} {}",
            self.split_len(Split::Train),
            self.split_len(Split::Validation),
            self.split_len(Split::Test)
        );
        let sigmas: Vec<String> = self.sigmas_m.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "sigmas_m {}", sigmas.join(","));
        let _ = writeln!(out, "train_sigma_m {}", self.train_sigma_m);
        for it in &self.items {
            let _ = write!(
                out,
                "item {} {} {} {}",
                it.id,
                it.split.as_str(),
                it.clean.display(),
                it.label.display()
            );
            for p in &it.noisy {
                let _ = write!(out, " {}", p.display());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let bad = |m: String| CliError::Validation(format!("manifest: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing `SAFESITE-MANIFEST 1` header".into()));
        }
        let mut seed = None;
        let mut digest = None;
        let mut splits = None;
        let mut sigmas = None;
        let mut train_sigma = None;
        let mut items = Vec::new();
        for line in lines {
            let mut f = line.split_whitespace();
            let key = f.next().unwrap_or_default();
            let rest: Vec<&str> = f.collect();
            let one = || rest.first().copied().ok_or_else(|| bad(format!("`{key}` needs a value")));
            match key {
                "seed" => seed = Some(one()?.parse::<u64>().map_err(|_| bad("bad seed".into()))?),
                "config_digest" => digest = Some(one()?.to_string()),
                "splits" => {
                    let n: Vec<usize> = rest
                        .iter()
                        .map(|v| v.parse().map_err(|_| bad(format!("bad split size `{v}`"))))
                        .collect::<CliResult<_>>()?;
                    if n.len() != 3 {
                        return Err(bad("`splits` needs three sizes".into()));
                    }
                    splits = Some(n);
                }
                "sigmas_m" => {
                    sigmas = Some(
                        one()?
                            .split(',')
                            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad sigma `{v}`"))))
                            .collect::<CliResult<Vec<_>>>()?,
                    )
                }
                "train_sigma_m" => {
                    train_sigma = Some(one()?.parse::<f64>().map_err(|_| bad("bad train sigma".into()))?)
                }
                "item" => {
                    if rest.len() < 4 {
                        return Err(bad(format!("short item line `{line}`")));
                    }
                    items.push(ManifestItem {
                        id: rest[0].to_string(),
                        split: Split::parse(rest[1]).ok_or_else(|| bad(format!("unknown split `{}`", rest[1])))?,
                        clean: PathBuf::from(rest[2]),
                        label: PathBuf::from(rest[3]),
                        noisy: rest[4..].iter().map(PathBuf::from).collect(),
                    });
                }
                "" => {}
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let m = Self {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            config_digest: digest.ok_or_else(|| bad("missing config_digest".into()))?,
            sigmas_m: sigmas.ok_or_else(|| bad("missing sigmas_m".into()))?,
            train_sigma_m: train_sigma.ok_or_else(|| bad("missing train_sigma_m".into()))?,
            items,
        };
        let splits = splits.ok_or_else(|| bad("missing splits".into()))?;
        let actual = [Split::Train, Split::Validation, Split::Test].map(|s| m.split_len(s));
        if splits != actual {
            return Err(bad(format!("split sizes {splits:?} do not match items {actual:?}")));
        }
        if m.items.iter().any(|it| it.noisy.len() != m.sigmas_m.len()) {
            return Err(bad("every item needs one noisy DEM per sigma".into()));
        }
        m.sigma_level(m.train_sigma_m)?;
        Ok(m)
    }

    /// Reads `manifest.txt` under `root`; a missing file points at `generate`.
    pub fn load(root: &Path) -> CliResult<Self> {
        let path = root.join(layout::MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingArtifact {
                stage: "generate",
                path: path.clone(),
            },
            _ => CliError::io(&path, e),
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_round_trips_and_splits_8_1_1() {
        let m = DatasetManifest::plan(&RunConfig::default());
        assert_eq!(m.split_len(Split::Train), 160);
        assert_eq!(m.split_len(Split::Validation), 20);
        assert_eq!(m.split_len(Split::Test), 20);
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn parse_rejects_inconsistent_documents() {
        let text = DatasetManifest::plan(&RunConfig::default()).to_text();
        assert!(DatasetManifest::parse(&text.replacen("splits 160", "splits 161", 1)).is_err());
        assert!(DatasetManifest::parse(&text.replacen("SAFESITE", "X", 1)).is_err());
        assert!(DatasetManifest::parse(&text.replacen("train_sigma_m 0.0167", "train_sigma_m 0.5", 1)).is_err());
    }
}
