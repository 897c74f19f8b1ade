//! Fixed on-disk layout of a run directory. All paths recorded in manifests
//! and provenance files are relative to the run root.

use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.txt";
pub const MODEL: &str = "model/segmenter.model";
pub const TRAIN_LOG: &str = "model/train_log.csv";
pub const THRESHOLD: &str = "threshold.txt";
pub const METRICS_CSV: &str = "report/metrics.csv";
pub const SITES_CSV: &str = "report/sites.csv";
pub const REPORT_TXT: &str = "report/report.txt";

pub fn item_id(index: usize) -> String {
    format!("dem_{index:04}")
}

pub fn sigma_dir(sigma_m: f64) -> String {
    format!("sigma_{sigma_m}")
}

pub fn clean_dem(id: &str) -> PathBuf {
    Path::new("dems/clean").join(format!("{id}.dem"))
}

pub fn noisy_dem(id: &str, sigma_m: f64) -> PathBuf {
    Path::new("dems").join(sigma_dir(sigma_m)).join(format!("{id}.dem"))
}

pub fn label(id: &str) -> PathBuf {
    Path::new("labels").join(format!("{id}.sfm"))
}

pub fn label_probability(id: &str) -> PathBuf {
    Path::new("labels").join(format!("{id}.prob"))
}

pub fn baseline(id: &str, sigma_m: f64) -> PathBuf {
    Path::new("baseline").join(sigma_dir(sigma_m)).join(format!("{id}.sfm"))
}

pub fn prediction_probability(id: &str, sigma_m: f64) -> PathBuf {
    Path::new("predictions").join(sigma_dir(sigma_m)).join(format!("{id}.prob"))
}

pub fn prediction_uncertainty(id: &str, sigma_m: f64) -> PathBuf {
    Path::new("predictions").join(sigma_dir(sigma_m)).join(format!("{id}.unc"))
}

pub fn prediction_labels(id: &str, sigma_m: f64) -> PathBuf {
    Path::new("predictions").join(sigma_dir(sigma_m)).join(format!("{id}.sfm"))
}

pub fn aware_labels(id: &str, sigma_m: f64) -> PathBuf {
    Path::new("aware").join(sigma_dir(sigma_m)).join(format!("{id}.sfm"))
}

pub fn sites(sigma_m: f64) -> PathBuf {
    Path::new("sites").join(format!("{}.txt", sigma_dir(sigma_m)))
}

pub fn provenance(stage: &str) -> PathBuf {
    Path::new("provenance").join(format!("{stage}.prov"))
}
