//! Segmentation metrics over valid pixels and report assembly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::Dem;
use crate::maps::{check_shapes, Label, SafetyMap};
use crate::site::{propose_site, LandingSite};

/// Confusion counts with Safe as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
    /// Pixels valid in both maps (the sum of the four counts).
    pub evaluated_pixels: u64,
    /// Pixels valid in the ground truth.
    pub truth_valid_pixels: u64,
    pub total_pixels: u64,
}

impl ConfusionCounts {
    /// Sums two disjoint accumulations.
    pub fn merge(self, other: Self) -> Self {
        Self {
            true_positive: self.true_positive + other.true_positive,
            false_positive: self.false_positive + other.false_positive,
            true_negative: self.true_negative + other.true_negative,
            false_negative: self.false_negative + other.false_negative,
            evaluated_pixels: self.evaluated_pixels + other.evaluated_pixels,
            truth_valid_pixels: self.truth_valid_pixels + other.truth_valid_pixels,
            total_pixels: self.total_pixels + other.total_pixels,
        }
    }
}

/// Adds one prediction/truth pair. Pixels Invalid in either map only count
/// towards `total_pixels` (and `truth_valid_pixels` when the truth is valid).
pub fn accumulate(pred: &SafetyMap, truth: &SafetyMap, counts: ConfusionCounts) -> Result<ConfusionCounts> {
    check_shapes(truth.shape(), pred.shape())?;
    let mut c = counts;
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        c.total_pixels += 1;
        if t == Label::Invalid {
            continue;
        }
        c.truth_valid_pixels += 1;
        match (p, t) {
            (Label::Invalid, _) => continue,
            (Label::Safe, Label::Safe) => c.true_positive += 1,
            (Label::Safe, _) => c.false_positive += 1,
            (Label::Unsafe, Label::Unsafe) => c.true_negative += 1,
            (Label::Unsafe, _) => c.false_negative += 1,
        }
        c.evaluated_pixels += 1;
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// True/false positive/negative rates; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
}

pub fn rates(c: &ConfusionCounts) -> Rates {
    let pos = c.true_positive + c.false_negative;
    let neg = c.false_positive + c.true_negative;
    Rates {
        tpr: ratio(c.true_positive, pos),
        fpr: ratio(c.false_positive, neg),
        tnr: ratio(c.true_negative, neg),
        fnr: ratio(c.false_negative, pos),
    }
}

pub fn pixel_accuracy(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.true_positive + c.true_negative, c.evaluated_pixels)
}

/// Mean IoU over the classes present in prediction or truth.
pub fn mean_iou(c: &ConfusionCounts) -> Option<f64> {
    let ious: Vec<f64> = [
        ratio(c.true_positive, c.true_positive + c.false_positive + c.false_negative),
        ratio(c.true_negative, c.true_negative + c.false_negative + c.false_positive),
    ]
    .into_iter()
    .flatten()
    .collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub train_sigma_m: Option<f64>,
    pub test_sigma_m: f64,
    pub counts: ConfusionCounts,
    pub pixel_accuracy: Option<f64>,
    pub miou: Option<f64>,
    pub rates: Rates,
    /// Fraction of ground-truth-valid pixels the method left valid.
    pub valid_certain_fraction: Option<f64>,
}

impl MetricsRow {
    pub fn from_counts(method: &str, train_sigma_m: Option<f64>, test_sigma_m: f64, counts: ConfusionCounts) -> Self {
        Self {
            method: method.to_string(),
            train_sigma_m,
            test_sigma_m,
            counts,
            pixel_accuracy: pixel_accuracy(&counts),
            miou: mean_iou(&counts),
            rates: rates(&counts),
            valid_certain_fraction: ratio(counts.evaluated_pixels, counts.truth_valid_pixels),
        }
    }
}

/// Outcome of proposing one site per DEM.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteRow {
    pub method: String,
    pub train_sigma_m: Option<f64>,
    pub test_sigma_m: f64,
    pub dems: usize,
    pub dems_with_site: usize,
    pub safe_sites: usize,
}

impl SiteRow {
    pub fn safe_rate(&self) -> Option<f64> {
        ratio(self.safe_sites as u64, self.dems_with_site as u64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub site_rows: Vec<SiteRow>,
}

/// Predictions of one method at one test noise level, aligned with truths.
#[derive(Debug, Clone)]
pub struct EvalCase<'a> {
    pub method: &'a str,
    pub train_sigma_m: Option<f64>,
    pub test_sigma_m: f64,
    pub predictions: &'a [SafetyMap],
    pub truths: &'a [SafetyMap],
    pub sites: Option<&'a [Option<LandingSite>]>,
}

pub fn evaluate_cases(cases: &[EvalCase<'_>]) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for case in cases {
        if case.predictions.is_empty() {
            return Err(Error::Evaluation(format!("no predictions for `{}`", case.method)));
        }
        if case.predictions.len() != case.truths.len() {
            return Err(Error::Evaluation(format!(
                "`{}` has {} predictions for {} truths",
                case.method,
                case.predictions.len(),
                case.truths.len()
            )));
        }
        let counts = case
            .predictions
            .iter()
            .zip(case.truths)
            .try_fold(ConfusionCounts::default(), |acc, (p, t)| accumulate(p, t, acc))?;
        report
            .rows
            .push(MetricsRow::from_counts(case.method, case.train_sigma_m, case.test_sigma_m, counts));

        if let Some(sites) = case.sites {
            if sites.len() != case.truths.len() {
                return Err(Error::Evaluation("site list does not match the test set".into()));
            }
            let mut row = SiteRow {
                method: case.method.to_string(),
                train_sigma_m: case.train_sigma_m,
                test_sigma_m: case.test_sigma_m,
                dems: sites.len(),
                dems_with_site: 0,
                safe_sites: 0,
            };
            for (site, truth) in sites.iter().zip(case.truths) {
                if let Some(s) = site {
                    row.dems_with_site += 1;
                    if s.row >= truth.height || s.col >= truth.width {
                        return Err(Error::Evaluation(format!("site ({}, {}) outside the map", s.row, s.col)));
                    }
                    if truth.get(s.row, s.col) == Label::Safe {
                        row.safe_sites += 1;
                    }
                }
            }
            report.site_rows.push(row);
        }
    }
    Ok(report)
}

/// A method under evaluation: maps a noisy DEM to a tri-state safety map.
pub trait SafetyPredictor {
    fn name(&self) -> &str;
    fn train_sigma_m(&self) -> Option<f64> {
        None
    }
    fn predict(&self, noisy: &Dem) -> Result<SafetyMap>;
}

/// Noisy DEMs at one sigma paired with clean-terrain ground truth.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub test_sigma_m: f64,
    pub items: Vec<(Dem, SafetyMap)>,
}

/// Runs every method on every test set, then scores pixels and proposed
/// landing sites against the ground truth.
pub fn evaluate_suite(methods: &[&dyn SafetyPredictor], datasets: &[TestSet]) -> Result<MetricsReport> {
    if datasets.is_empty() || datasets.iter().any(|d| d.items.is_empty()) {
        return Err(Error::Evaluation("empty test dataset".into()));
    }
    let mut report = MetricsReport::default();
    for method in methods {
        for set in datasets {
            let predictions = set
                .items
                .iter()
                .map(|(dem, _)| method.predict(dem))
                .collect::<Result<Vec<_>>>()?;
            let truths: Vec<SafetyMap> = set.items.iter().map(|(_, t)| t.clone()).collect();
            let sites: Vec<Option<LandingSite>> = predictions.iter().map(propose_site).collect();
            let part = evaluate_cases(&[EvalCase {
                method: method.name(),
                train_sigma_m: method.train_sigma_m(),
                test_sigma_m: set.test_sigma_m,
                predictions: &predictions,
                truths: &truths,
                sites: Some(&sites),
            }])?;
            report.rows.extend(part.rows);
            report.site_rows.extend(part.site_rows);
        }
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn fmt_sigma(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x}"))
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,train_sigma,test_sigma,vc_frac,pa,miou,tpr,fpr,tnr,fnr";
    pub const SITES_CSV_HEADER: &'static str = "method,train_sigma,test_sigma,dems,dems_with_site,safe_sites,safe_rate";

    /// Machine-readable rows: `method,train_sigma,test_sigma,vc_frac,pa,miou,tpr,fpr,tnr,fnr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                fmt_sigma(r.train_sigma_m),
                r.test_sigma_m,
                fmt_opt(r.valid_certain_fraction),
                fmt_opt(r.pixel_accuracy),
                fmt_opt(r.miou),
                fmt_opt(r.rates.tpr),
                fmt_opt(r.rates.fpr),
                fmt_opt(r.rates.tnr),
                fmt_opt(r.rates.fnr),
            );
        }
        out
    }

    pub fn sites_to_csv(&self) -> String {
        let mut out = String::from(Self::SITES_CSV_HEADER);
        out.push('\n');
        for s in &self.site_rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.method,
                fmt_sigma(s.train_sigma_m),
                s.test_sigma_m,
                s.dems,
                s.dems_with_site,
                s.safe_sites,
                fmt_opt(s.safe_rate())
            );
        }
        out
    }

    /// Human-readable aligned tables.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>8} {:>8} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "method", "train_s", "test_s", "V/C%", "PA", "mIoU", "TPR", "FPR", "TNR", "FNR"
        );
        for r in &self.rows {
            let pct = r
                .valid_certain_fraction
                .map_or_else(|| "NA".to_string(), |v| format!("{:.1}", 100.0 * v));
            let _ = writeln!(
                out,
                "{:<18} {:>8} {:>8} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                r.method,
                fmt_sigma(r.train_sigma_m),
                r.test_sigma_m,
                pct,
                short(r.pixel_accuracy),
                short(r.miou),
                short(r.rates.tpr),
                short(r.rates.fpr),
                short(r.rates.tnr),
                short(r.rates.fnr),
            );
        }
        if !self.site_rows.is_empty() {
            out.push('\n');
            let _ = writeln!(
                out,
                "{:<18} {:>8} {:>8} {:>6} {:>10} {:>10} {:>9}",
                "method", "train_s", "test_s", "DEMs", "with_site", "safe_site", "safe_%"
            );
            for s in &self.site_rows {
                let _ = writeln!(
                    out,
                    "{:<18} {:>8} {:>8} {:>6} {:>10} {:>10} {:>9}",
                    s.method,
                    fmt_sigma(s.train_sigma_m),
                    s.test_sigma_m,
                    s.dems,
                    s.dems_with_site,
                    s.safe_sites,
                    s.safe_rate().map_or_else(|| "NA".to_string(), |v| format!("{:.1}", 100.0 * v))
                );
            }
        }
        out
    }
}

fn short(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Invalid as I, Safe as S, Unsafe as U};

    fn map(labels: &[Label]) -> SafetyMap {
        SafetyMap::new(labels.len(), 1, labels.to_vec()).unwrap()
    }

    #[test]
    fn accumulate_examples() {
        let c = accumulate(&map(&[S, S, U, U]), &map(&[S, U, U, S]), ConfusionCounts::default()).unwrap();
        assert_eq!(
            (c.true_positive, c.false_positive, c.true_negative, c.false_negative),
            (1, 1, 1, 1)
        );
        let truth = map(&[S, U, I]);
        let perfect = accumulate(&truth, &truth, ConfusionCounts::default()).unwrap();
        assert_eq!((perfect.false_positive, perfect.false_negative), (0, 0));
        assert_eq!((perfect.evaluated_pixels, perfect.total_pixels), (2, 3));
        let none = accumulate(&map(&[I, I, I]), &truth, ConfusionCounts::default()).unwrap();
        assert_eq!(none.evaluated_pixels, 0);
        assert_eq!(none.truth_valid_pixels, 2);
        assert!(accumulate(&map(&[S]), &truth, ConfusionCounts::default()).is_err());
    }

    #[test]
    fn rate_examples() {
        let c = ConfusionCounts {
            true_positive: 3,
            false_negative: 1,
            true_negative: 5,
            ..Default::default()
        };
        let r = rates(&c);
        assert_eq!(r.tpr, Some(0.75));
        assert_eq!(r.fnr, Some(0.25));
        assert_eq!(r.fpr, Some(0.0));
        assert_eq!(r.tnr, Some(1.0));
        assert_eq!(rates(&ConfusionCounts::default()).tpr, None);
    }

    #[test]
    fn accuracy_and_iou_examples() {
        let ones = ConfusionCounts {
            true_positive: 1,
            false_positive: 1,
            true_negative: 1,
            false_negative: 1,
            evaluated_pixels: 4,
            ..Default::default()
        };
        assert_eq!(pixel_accuracy(&ones), Some(0.5));
        assert!((mean_iou(&ones).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let perfect = ConfusionCounts {
            true_positive: 7,
            true_negative: 2,
            evaluated_pixels: 9,
            ..Default::default()
        };
        assert_eq!(pixel_accuracy(&perfect), Some(1.0));
        assert_eq!(mean_iou(&perfect), Some(1.0));
        let only_safe = ConfusionCounts {
            true_positive: 4,
            evaluated_pixels: 4,
            ..Default::default()
        };
        assert_eq!(mean_iou(&only_safe), Some(1.0));
        assert_eq!(pixel_accuracy(&ConfusionCounts::default()), None);
        assert_eq!(mean_iou(&ConfusionCounts::default()), None);
    }

    struct Constant(Label);

    impl SafetyPredictor for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn predict(&self, noisy: &Dem) -> Result<SafetyMap> {
            Ok(SafetyMap::filled(noisy.width(), noisy.height(), self.0))
        }
    }

    #[test]
    fn constant_unsafe_predictor() {
        let dem = Dem::flat(2, 2, 1.0, 0.0).unwrap();
        let truth = SafetyMap::new(2, 2, vec![S, U, S, I]).unwrap();
        let sets = [TestSet {
            test_sigma_m: 0.03,
            items: vec![(dem, truth)],
        }];
        let report = evaluate_suite(&[&Constant(U)], &sets).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.rates.tpr, Some(0.0));
        assert_eq!(row.rates.tnr, Some(1.0));
        assert_eq!(report.site_rows[0].dems_with_site, 0);
        assert_eq!(report.site_rows[0].safe_rate(), None);
        assert!(report.to_csv().starts_with(MetricsReport::CSV_HEADER));
        assert!(evaluate_suite(&[&Constant(U)], &[]).is_err());
    }
}
