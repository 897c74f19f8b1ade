//! Per-stage provenance records: which files went in, which came out, and
//! the seed and config digest that produced them.
//!
//! ```text
//! stage <name>
//! seed <u64>
//! config_digest <hex>
//! input <relative path> <sha256>
//! output <relative path> <sha256>
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::layout;

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub stage: String,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Provenance {
    pub fn new(stage: &str, seed: u64, config_digest: &str) -> Self {
        Self {
            stage: stage.to_string(),
            seed,
            config_digest: config_digest.to_string(),
            ..Self::default()
        }
    }

    /// Renders the record, hashing every listed file under `root`.
    pub fn render(&self, root: &Path) -> CliResult<String> {
        let mut out = String::new();
        let _ = writeln!(out, "stage {}", self.stage);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "config_digest {}", self.config_digest);
        for (tag, list) in [("input", &self.inputs), ("output", &self.outputs)] {
            for p in list {
                let _ = writeln!(out, "{tag} {} {}", p.display(), sha256_file(&root.join(p))?);
            }
        }
        Ok(out)
    }

    pub fn write(&self, root: &Path) -> CliResult<PathBuf> {
        let rel = layout::provenance(&self.stage);
        let text = self.render(root)?;
        let path = root.join(&rel);
        safesite::format::write_atomic(&path, text.as_bytes()).map_err(|e| crate::pipeline::core_at(&path, e))?;
        Ok(rel)
    }
}
