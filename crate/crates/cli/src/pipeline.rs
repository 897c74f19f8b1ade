//! The pipeline stages. Each stage reads the artifacts of earlier stages from
//! the run directory, writes its own, and records provenance. Given the same
//! inputs and config every stage rewrites byte-identical files.

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use safesite::eval::{evaluate_cases, EvalCase, MetricsReport};
use safesite::format::{write_atomic, GridFile, GridKind};
use safesite::maps::SafetyMap;
use safesite::oracle::label_dem;
use safesite::segmenter::{argmax_labels, predict_dem, read_model, train_with_progress, write_model, TrainedModel};
use safesite::site::{propose_site, LandingSite};
use safesite::terrain::{add_noise, generate_terrain};
use safesite::uncertainty::{apply_threshold, calibrate_threshold, predictive_entropy, UncertaintyMap, UncertaintyThreshold};
use safesite::Dem;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout;
use crate::manifest::{DatasetManifest, Split};
use crate::provenance::Provenance;

pub const BASELINE: &str = "baseline";
pub const BASE_NET: &str = "base_net";
pub const UNCERTAINTY_AWARE: &str = "uncertainty_aware";

/// Attaches `path` to I/O failures raised by the core library.
pub fn core_at(path: &Path, err: safesite::Error) -> CliError {
    match err {
        safesite::Error::Io(e) => CliError::io(path, e),
        other => CliError::Core(other),
    }
}

/// Maps `f` over `items` on up to `workers` threads, keeping input order.
fn par_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> CliResult<R> + Sync,
) -> CliResult<Vec<R>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let f = &f;
    let mut slots: Vec<Option<CliResult<R>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..items.len())
                        .step_by(workers)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// One pipeline invocation against a run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub root: PathBuf,
    pub cfg: RunConfig,
    pub workers: usize,
    pub force: bool,
    pub verbose: bool,
}

impl Run {
    pub fn new(root: impl Into<PathBuf>, cfg: RunConfig) -> Self {
        Self {
            root: root.into(),
            cfg,
            workers: 1,
            force: false,
            verbose: false,
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    fn provenance(&self, stage: &str) -> Provenance {
        Provenance::new(stage, self.cfg.seed, &self.cfg.digest())
    }

    fn write_grid(&self, rel: &Path, grid: GridFile) -> CliResult<()> {
        let path = self.path(rel);
        grid.with_digest(self.cfg.digest()).write(&path).map_err(|e| core_at(&path, e))
    }

    fn write_text(&self, rel: &Path, text: &str) -> CliResult<()> {
        let path = self.path(rel);
        write_atomic(&path, text.as_bytes()).map_err(|e| core_at(&path, e))
    }

    /// Reads an artifact; absence names the stage that should have made it.
    fn read_grid(&self, rel: &Path, stage: &'static str) -> CliResult<GridFile> {
        let path = self.path(rel);
        if !path.is_file() {
            return Err(CliError::MissingArtifact { stage, path });
        }
        GridFile::read(&path).map_err(|e| core_at(&path, e))
    }

    fn read_text(&self, rel: &Path, stage: &'static str) -> CliResult<String> {
        let path = self.path(rel);
        if !path.is_file() {
            return Err(CliError::MissingArtifact { stage, path });
        }
        std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
    }

    fn read_dem(&self, rel: &Path) -> CliResult<Dem> {
        Ok(self.read_grid(rel, "generate")?.into_dem()?)
    }

    fn read_safety(&self, rel: &Path, stage: &'static str) -> CliResult<SafetyMap> {
        Ok(self.read_grid(rel, stage)?.into_safety_map()?)
    }

    fn read_uncertainty(&self, rel: &Path) -> CliResult<UncertaintyMap> {
        let grid = self.read_grid(rel, "predict")?;
        let (w, h) = (grid.header.width, grid.header.height);
        let values = grid
            .values()
            .ok_or_else(|| CliError::Validation(format!("{} is not a float grid", rel.display())))?;
        // Entropies were narrowed to f32 on write; ln 2 may round up slightly.
        let entropy = values.into_iter().map(|v| v.clamp(0.0, LN_2)).collect();
        Ok(UncertaintyMap::new(w, h, entropy)?)
    }

    fn manifest(&self) -> CliResult<DatasetManifest> {
        DatasetManifest::load(&self.root)
    }

    fn test_sigmas(&self) -> Vec<f64> {
        self.cfg.test_sigmas_m.clone()
    }

    /// Procedural terrain plus one noisy variant per noise level.
    pub fn generate(&self) -> CliResult<DatasetManifest> {
        self.cfg.validate()?;
        let manifest_path = self.path(Path::new(layout::MANIFEST));
        if manifest_path.exists() && !self.force {
            return Err(CliError::Exists(manifest_path));
        }
        let manifest = DatasetManifest::plan(&self.cfg);
        self.log(format!("generate: {} DEMs x {} noise levels", manifest.items.len(), manifest.sigmas_m.len()));
        let indices: Vec<usize> = (0..manifest.items.len()).collect();
        par_map(&indices, self.workers, |&i| {
            let item = &manifest.items[i];
            let clean = generate_terrain(&self.cfg.terrain_params(i))?;
            self.write_grid(&item.clean, GridFile::from_dem(&clean))?;
            for (level, rel) in item.noisy.iter().enumerate() {
                let noisy = add_noise(&clean, &self.cfg.noise_spec(i, level)?)?;
                self.write_grid(rel, GridFile::from_dem(&noisy))?;
            }
            Ok(())
        })?;
        self.write_text(Path::new(layout::MANIFEST), &manifest.to_text())?;

        let mut prov = self.provenance("generate");
        prov.outputs.push(PathBuf::from(layout::MANIFEST));
        for item in &manifest.items {
            prov.outputs.push(item.clean.clone());
            prov.outputs.extend(item.noisy.iter().cloned());
        }
        prov.write(&self.root)?;
        Ok(manifest)
    }

    /// Ground truth for every DEM from its clean terrain, plus the baseline
    /// (the same oracle run on noisy input) for every test DEM and level.
    pub fn label(&self) -> CliResult<()> {
        self.cfg.validate()?;
        let manifest = self.manifest()?;
        let geom = &self.cfg.geometry;
        let ocfg = self.cfg.oracle_config();
        let mut prov = self.provenance("label");
        prov.inputs.push(PathBuf::from(layout::MANIFEST));

        self.log(format!("label: ground truth for {} DEMs", manifest.items.len()));
        par_map(&manifest.items, self.workers, |item| {
            let dem = self.read_dem(&item.clean)?;
            let (prob, labels) = label_dem(&dem, geom, &ocfg)?;
            self.write_grid(&item.label, GridFile::from_safety_map(&labels, dem.pitch_m()))?;
            let prob_rel = layout::label_probability(&item.id);
            self.write_grid(
                &prob_rel,
                GridFile::from_values(GridKind::Probability, prob.width, prob.height, dem.pitch_m(), &prob.p_safe),
            )?;
            Ok(())
        })?;
        for item in &manifest.items {
            prov.inputs.push(item.clean.clone());
            prov.outputs.push(item.label.clone());
            prov.outputs.push(layout::label_probability(&item.id));
        }

        let jobs = self.test_jobs(&manifest)?;
        self.log(format!("label: baseline on {} noisy test DEMs", jobs.len()));
        par_map(&jobs, self.workers, |job| {
            let dem = self.read_dem(&job.noisy)?;
            let (_, labels) = label_dem(&dem, geom, &ocfg)?;
            self.write_grid(&layout::baseline(&job.id, job.sigma), GridFile::from_safety_map(&labels, dem.pitch_m()))
        })?;
        for job in &jobs {
            prov.inputs.push(job.noisy.clone());
            prov.outputs.push(layout::baseline(&job.id, job.sigma));
        }
        prov.write(&self.root)?;
        Ok(())
    }

    /// (test item, test level) pairs in report order.
    fn test_jobs(&self, manifest: &DatasetManifest) -> CliResult<Vec<Job>> {
        let mut jobs = Vec::new();
        for sigma in self.test_sigmas() {
            let level = manifest.sigma_level(sigma)?;
            for (index, item) in manifest.split(Split::Test) {
                jobs.push(Job {
                    index,
                    id: item.id.clone(),
                    sigma,
                    noisy: item.noisy[level].clone(),
                });
            }
        }
        Ok(jobs)
    }

    /// Validation items at the training noise level.
    fn validation_jobs(&self, manifest: &DatasetManifest) -> CliResult<Vec<Job>> {
        let level = manifest.sigma_level(manifest.train_sigma_m)?;
        Ok(manifest
            .split(Split::Validation)
            .map(|(index, item)| Job {
                index,
                id: item.id.clone(),
                sigma: manifest.train_sigma_m,
                noisy: item.noisy[level].clone(),
            })
            .collect())
    }

    /// Fits the segmenter on noisy training DEMs against clean-terrain labels.
    pub fn train(&self) -> CliResult<TrainedModel> {
        self.cfg.validate()?;
        let manifest = self.manifest()?;
        let level = manifest.sigma_level(manifest.train_sigma_m)?;
        let mut prov = self.provenance("train");
        prov.inputs.push(PathBuf::from(layout::MANIFEST));
        let mut dataset = Vec::new();
        for (_, item) in manifest.split(Split::Train) {
            let dem = self.read_dem(&item.noisy[level])?;
            let labels = self.read_safety(&item.label, "label")?;
            prov.inputs.push(item.noisy[level].clone());
            prov.inputs.push(item.label.clone());
            dataset.push((dem, labels));
        }
        let tcfg = self.cfg.train_config();
        self.log(format!("train: {} samples, {} epochs", dataset.len(), tcfg.epochs));
        let mut log = String::from("epoch,loss\n");
        let model = train_with_progress(&dataset, &tcfg, &self.cfg.model_config(), |epoch, loss| {
            let _ = writeln!(log, "{epoch},{loss}");
            if epoch == 1 || epoch % 10 == 0 || epoch == tcfg.epochs {
                self.log(format!("  epoch {epoch:>4}  loss {loss:.5}"));
            }
        })?;
        let model_path = self.path(Path::new(layout::MODEL));
        write_model(&model, &model_path, Some(&self.cfg.digest())).map_err(|e| core_at(&model_path, e))?;
        self.write_text(Path::new(layout::TRAIN_LOG), &log)?;
        prov.outputs.push(PathBuf::from(layout::MODEL));
        prov.outputs.push(PathBuf::from(layout::TRAIN_LOG));
        prov.write(&self.root)?;
        Ok(model)
    }

    fn load_model(&self) -> CliResult<TrainedModel> {
        let path = self.path(Path::new(layout::MODEL));
        if !path.is_file() {
            return Err(CliError::MissingArtifact { stage: "train", path });
        }
        Ok(read_model(&path).map_err(|e| core_at(&path, e))?.0)
    }

    /// MC-dropout predictions for validation DEMs (training noise level) and
    /// test DEMs (every test level): mean safe probability, predictive
    /// entropy, and base-net labels with the oracle's border ring Invalid.
    pub fn predict(&self) -> CliResult<()> {
        self.cfg.validate()?;
        let manifest = self.manifest()?;
        let model = self.load_model()?;
        let margin = self.cfg.oracle.margin_px(&self.cfg.geometry, self.cfg.terrain.pitch_m);
        let mut jobs = self.validation_jobs(&manifest)?;
        jobs.extend(self.test_jobs(&manifest)?);
        self.log(format!("predict: {} DEMs x {} samples", jobs.len(), self.cfg.mc_samples));
        par_map(&jobs, self.workers, |job| {
            let dem = self.read_dem(&job.noisy)?;
            let msm = predict_dem(&model, &dem, self.cfg.mc_samples, self.cfg.mc_seed(job.index))?;
            let mut labels = argmax_labels(&msm);
            labels.invalidate_border(margin);
            let unc = predictive_entropy(&msm);
            let pitch = dem.pitch_m();
            self.write_grid(
                &layout::prediction_probability(&job.id, job.sigma),
                GridFile::from_values(GridKind::Probability, msm.width, msm.height, pitch, &msm.p_safe),
            )?;
            self.write_grid(
                &layout::prediction_uncertainty(&job.id, job.sigma),
                GridFile::from_values(GridKind::Uncertainty, unc.width, unc.height, pitch, &unc.entropy),
            )?;
            self.write_grid(
                &layout::prediction_labels(&job.id, job.sigma),
                GridFile::from_safety_map(&labels, pitch),
            )
        })?;
        let mut prov = self.provenance("predict");
        prov.inputs.push(PathBuf::from(layout::MANIFEST));
        prov.inputs.push(PathBuf::from(layout::MODEL));
        for job in &jobs {
            prov.inputs.push(job.noisy.clone());
            prov.outputs.push(layout::prediction_probability(&job.id, job.sigma));
            prov.outputs.push(layout::prediction_uncertainty(&job.id, job.sigma));
            prov.outputs.push(layout::prediction_labels(&job.id, job.sigma));
        }
        prov.write(&self.root)?;
        Ok(())
    }

    /// The global entropy threshold: the configured value, or the pooled
    /// mean entropy over the validation split.
    pub fn calibrate(&self) -> CliResult<UncertaintyThreshold> {
        self.cfg.validate()?;
        let manifest = self.manifest()?;
        let mut prov = self.provenance("calibrate");
        prov.inputs.push(PathBuf::from(layout::MANIFEST));
        let threshold = match self.cfg.threshold_nats {
            Some(v) => UncertaintyThreshold::new(v, "fixed")?,
            None => {
                let jobs = self.validation_jobs(&manifest)?;
                let mut maps = Vec::new();
                let mut labels = Vec::new();
                for job in &jobs {
                    let unc_rel = layout::prediction_uncertainty(&job.id, job.sigma);
                    let label_rel = layout::label(&job.id);
                    maps.push(self.read_uncertainty(&unc_rel)?);
                    labels.push(self.read_safety(&label_rel, "label")?);
                    prov.inputs.push(unc_rel);
                    prov.inputs.push(label_rel);
                }
                let id = format!("validation:{}@sigma_{}", jobs.len(), manifest.train_sigma_m);
                calibrate_threshold(&maps, Some(&labels), &id)?
            }
        };
        self.log(format!("calibrate: threshold {:.6} nats ({})", threshold.value, threshold.provenance));
        let text = format!("# config_digest={}\n{}", self.cfg.digest(), threshold.to_text());
        self.write_text(Path::new(layout::THRESHOLD), &text)?;
        prov.outputs.push(PathBuf::from(layout::THRESHOLD));
        prov.write(&self.root)?;
        Ok(threshold)
    }

    fn load_threshold(&self) -> CliResult<UncertaintyThreshold> {
        Ok(UncertaintyThreshold::from_text(&self.read_text(Path::new(layout::THRESHOLD), "calibrate")?)?)
    }

    /// Uncertainty-aware maps for every test DEM and level, and one proposed
    /// landing site per map.
    pub fn select(&self) -> CliResult<()> {
        self.cfg.validate()?;
        let manifest = self.manifest()?;
        let threshold = self.load_threshold()?;
        let jobs = self.test_jobs(&manifest)?;
        let mut prov = self.provenance("select");
        prov.inputs.push(PathBuf::from(layout::MANIFEST));
        prov.inputs.push(PathBuf::from(layout::THRESHOLD));
        let sites = par_map(&jobs, self.workers, |job| {
            let pred = self.read_safety(&layout::prediction_labels(&job.id, job.sigma), "predict")?;
            let unc = self.read_uncertainty(&layout::prediction_uncertainty(&job.id, job.sigma))?;
            let aware = apply_threshold(&pred, &unc, &threshold)?;
            self.write_grid(&layout::aware_labels(&job.id, job.sigma), GridFile::from_safety_map(&aware, 1.0))?;
            Ok(propose_site(&aware))
        })?;
        for sigma in self.test_sigmas() {
            let mut text = format!("# config_digest={}\n", self.cfg.digest());
            for (job, site) in jobs.iter().zip(&sites).filter(|(j, _)| j.sigma == sigma) {
                let _ = writeln!(text, "{} {}", job.id, LandingSite::record(site.as_ref()));
            }
            self.write_text(&layout::sites(sigma), &text)?;
            prov.outputs.push(layout::sites(sigma));
        }
        for job in &jobs {
            prov.inputs.push(layout::prediction_labels(&job.id, job.sigma));
            prov.inputs.push(layout::prediction_uncertainty(&job.id, job.sigma));
            prov.outputs.push(layout::aware_labels(&job.id, job.sigma));
        }
        let with_site = sites.iter().filter(|s| s.is_some()).count();
        self.log(format!("select: {with_site}/{} maps have a landing site", sites.len()));
        prov.write(&self.root)?;
        Ok(())
    }

    fn load_sites(&self, sigma: f64, ids: &[String]) -> CliResult<Vec<Option<LandingSite>>> {
        let text = self.read_text(&layout::sites(sigma), "select")?;
        let mut out = Vec::new();
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let (id, record) = line
                .split_once(' ')
                .ok_or_else(|| CliError::Validation(format!("bad site line `{line}`")))?;
            if ids.get(out.len()).map(String::as_str) != Some(id) {
                return Err(CliError::Validation(format!("unexpected site entry `{id}`")));
            }
            out.push(LandingSite::parse_record(record)?);
        }
        if out.len() != ids.len() {
            return Err(CliError::Validation(format!(
                "{} lists {} sites for {} test DEMs",
                layout::sites(sigma).display(),
                out.len(),
                ids.len()
            )));
        }
        Ok(out)
    }

    /// Scores the three methods against clean-terrain ground truth.
    pub fn evaluate(&self) -> CliResult<MetricsReport> {
        self.cfg.validate()?;
        let manifest = self.manifest()?;
        let threshold = self.load_threshold()?;
        let mut prov = self.provenance("evaluate");
        prov.inputs.push(PathBuf::from(layout::MANIFEST));
        prov.inputs.push(PathBuf::from(layout::THRESHOLD));
        let test: Vec<_> = manifest.split(Split::Test).map(|(_, it)| it.clone()).collect();
        let ids: Vec<String> = test.iter().map(|it| it.id.clone()).collect();
        let truths = test
            .iter()
            .map(|it| {
                prov.inputs.push(it.label.clone());
                self.read_safety(&it.label, "label")
            })
            .collect::<CliResult<Vec<_>>>()?;

        struct Loaded {
            sigma: f64,
            baseline: Vec<SafetyMap>,
            base: Vec<SafetyMap>,
            aware: Vec<SafetyMap>,
            sites: Vec<Option<LandingSite>>,
        }
        let mut loaded = Vec::new();
        for sigma in self.test_sigmas() {
            let mut load = |rel: PathBuf, stage: &'static str| {
                let map = self.read_safety(&rel, stage);
                prov.inputs.push(rel);
                map
            };
            let baseline = ids.iter().map(|id| load(layout::baseline(id, sigma), "label")).collect::<CliResult<_>>()?;
            let base = ids
                .iter()
                .map(|id| load(layout::prediction_labels(id, sigma), "predict"))
                .collect::<CliResult<_>>()?;
            let aware = ids.iter().map(|id| load(layout::aware_labels(id, sigma), "select")).collect::<CliResult<_>>()?;
            let sites = self.load_sites(sigma, &ids)?;
            prov.inputs.push(layout::sites(sigma));
            loaded.push(Loaded {
                sigma,
                baseline,
                base,
                aware,
                sites,
            });
        }

        let train_sigma = Some(manifest.train_sigma_m);
        let mut cases = Vec::new();
        for l in &loaded {
            cases.push(EvalCase {
                method: BASELINE,
                train_sigma_m: None,
                test_sigma_m: l.sigma,
                predictions: &l.baseline,
                truths: &truths,
                sites: None,
            });
            cases.push(EvalCase {
                method: BASE_NET,
                train_sigma_m: train_sigma,
                test_sigma_m: l.sigma,
                predictions: &l.base,
                truths: &truths,
                sites: None,
            });
            cases.push(EvalCase {
                method: UNCERTAINTY_AWARE,
                train_sigma_m: train_sigma,
                test_sigma_m: l.sigma,
                predictions: &l.aware,
                truths: &truths,
                sites: Some(&l.sites),
            });
        }
        let report = evaluate_cases(&cases)?;

        let mut text = String::new();
        let _ = writeln!(text, "config_digest: {}", self.cfg.digest());
        let _ = writeln!(text, "seed: {}", self.cfg.seed);
        let _ = writeln!(
            text,
            "test DEMs: {}  threshold: {:.6} nats ({})\n",
            ids.len(),
            threshold.value,
            threshold.provenance
        );
        text.push_str(&report.to_table());
        self.write_text(Path::new(layout::METRICS_CSV), &report.to_csv())?;
        self.write_text(Path::new(layout::SITES_CSV), &report.sites_to_csv())?;
        self.write_text(Path::new(layout::REPORT_TXT), &text)?;
        self.log(text);
        for p in [layout::METRICS_CSV, layout::SITES_CSV, layout::REPORT_TXT] {
            prov.outputs.push(PathBuf::from(p));
        }
        prov.write(&self.root)?;
        Ok(report)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> CliResult<MetricsReport> {
        self.generate()?;
        self.label()?;
        self.train()?;
        self.predict()?;
        self.calibrate()?;
        self.select()?;
        self.evaluate()
    }
}

#[derive(Debug, Clone)]
struct Job {
    index: usize,
    id: String,
    sigma: f64,
    noisy: PathBuf,
}
