use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use serde::Serialize;

use super::config::RunConfig;
use super::manifest::{sha256_hex, RunManifest, StageKind, StageRecord, StageStatus, MANIFEST_FILE};
use super::render::{render_density, LATENT_PEAK};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowMeta, FlowModel};
use crate::io::{read_csv_expect, write_csv};
use crate::metrics::{b0_diagnostic, score_uncertainty, Bounds, Histogram2D, Method, Score, ScoreReport};
use crate::refiner::{train_refiner, RefinerGan, MONITOR_BOUNDS};
use crate::reweight::{pull_back, train_classifier, Classifier, WeightedLatentSet};
use crate::rng::{stage_rng, stage_seed, stream_rng, Stage};
use crate::sampler::{hmc_run, LatentTarget};

pub const POINT_HEADER: [&str; 2] = ["x0", "x1"];
pub const LATENT_HEADER: [&str; 2] = ["z0", "z1"];
pub const SAMPLE_HEADER: [&str; 4] = ["z0", "z1", "x0", "x1"];

/// File names inside the output directory.
pub mod files {
    pub const TRAIN: &str = "train.csv";
    pub const TRUTH: &str = "truth.csv";
    pub const REFERENCE: &str = "reference.csv";
    pub const FLOW: &str = "flow.ckpt";
    pub const FLOW_META: &str = "flow.json";
    pub const FLOW_FAILED: &str = "flow_failed.ckpt";
    pub const FLOW_HISTORY: &str = "flow_history.json";
    pub const CLASSIFIER: &str = "classifier.ckpt";
    pub const CLASSIFIER_HISTORY: &str = "classifier_history.json";
    pub const WEIGHTED: &str = "weighted.csv";
    pub const REFINER: &str = "refiner.ckpt";
    pub const REFINER_HISTORY: &str = "refiner_history.json";
    pub const HMC_LATENT: &str = "hmc_latent.csv";
    pub const HMC_DIAGNOSTICS: &str = "hmc_diagnostics.json";
    pub const BASELINE: &str = "baseline.csv";
    pub const DCTR: &str = "dctr.csv";
    pub const LASER: &str = "laser.csv";
    pub const HMC: &str = "hmc.csv";
    pub const SCORES_CSV: &str = "scores.csv";
    pub const SCORES_TXT: &str = "scores.txt";
    pub const CONFIG: &str = "config.txt";
}

type StageResult = Result<(Vec<String>, BTreeMap<String, f64>)>;

/// One experiment in one output directory. Stages whose inputs are unchanged
/// since an earlier run in the same directory are reused instead of rerun.
pub struct Experiment {
    config: RunConfig,
    dir: PathBuf,
    manifest: RunManifest,
    force: bool,
}

impl Experiment {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dir = config.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut manifest = RunManifest::new(
            config.dataset,
            config.seed,
            sha256_hex(&identity_text(&config, &super::config::SECTIONS)),
            config.to_text(),
        );
        let mut exp = Self {
            config,
            dir,
            manifest: manifest.clone(),
            force: false,
        };
        let previous = exp.dir.join(MANIFEST_FILE);
        if previous.exists() {
            match RunManifest::load(&previous) {
                Ok(old) => {
                    for rec in old.stages {
                        if rec.status != StageStatus::Failed && rec.input_hash == exp.stage_hash(rec.stage) {
                            if rec.stage == StageKind::Score {
                                manifest.scores = old.scores.clone();
                                manifest.b0 = old.b0.clone();
                            }
                            if rec.stage == StageKind::Hmc {
                                manifest.hmc = old.hmc.clone();
                            }
                            manifest.record(rec);
                        }
                    }
                }
                Err(e) => log::warn!("ignoring unreadable {}: {e}", previous.display()),
            }
        }
        exp.manifest = manifest;
        Ok(exp)
    }

    /// Rerun every stage even when earlier outputs could be reused.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Hash of every config section that `stage` or any upstream stage reads.
    pub fn stage_hash(&self, stage: StageKind) -> String {
        let mut sections: Vec<&str> = Vec::new();
        for s in stage.closure() {
            for sec in s.sections() {
                if !sections.contains(sec) {
                    sections.push(sec);
                }
            }
        }
        sha256_hex(&format!("{}\n{}", stage.name(), identity_text(&self.config, &sections)))
    }

    fn reusable(&self, stage: StageKind) -> bool {
        if self.force {
            return false;
        }
        self.manifest.stage(stage).is_some_and(|rec| {
            rec.status != StageStatus::Failed
                && rec.input_hash == self.stage_hash(stage)
                && rec.outputs.iter().all(|o| self.path(o).exists())
        })
    }

    /// Runs `target` and whatever it depends on, then saves the manifest.
    pub fn run_until(&mut self, target: StageKind) -> Result<&RunManifest> {
        self.config.save(&self.path(files::CONFIG))?;
        self.manifest.failed_stage = None;
        self.manifest.error = None;
        for stage in target.closure() {
            if self.reusable(stage) {
                log::info!("{stage}: reusing outputs of an earlier run");
                let rec = self.manifest.stage(stage).cloned().expect("checked above");
                self.manifest.record(StageRecord {
                    status: StageStatus::Reused,
                    ..rec
                });
                continue;
            }
            log::info!("{stage}: running");
            let start = Instant::now();
            let result = self.run_stage(stage);
            let seconds = start.elapsed().as_secs_f64();
            match result {
                Ok((outputs, summary)) => {
                    log::info!("{stage}: done in {seconds:.1}s");
                    self.manifest.record(StageRecord {
                        stage,
                        status: StageStatus::Done,
                        input_hash: self.stage_hash(stage),
                        seconds,
                        outputs,
                        summary,
                    });
                    self.save_manifest()?;
                }
                Err(e) => {
                    log::error!("{stage}: {e}");
                    self.manifest.record(StageRecord {
                        stage,
                        status: StageStatus::Failed,
                        input_hash: self.stage_hash(stage),
                        seconds,
                        outputs: Vec::new(),
                        summary: BTreeMap::new(),
                    });
                    self.manifest.failed_stage = Some(stage);
                    self.manifest.error = Some(e.to_string());
                    self.save_manifest()?;
                    return Err(Error::Stage {
                        stage: stage.name().to_string(),
                        source: Box::new(e),
                    });
                }
            }
        }
        self.save_manifest()?;
        Ok(&self.manifest)
    }

    fn save_manifest(&self) -> Result<()> {
        self.manifest.save(&self.path(MANIFEST_FILE))
    }

    fn run_stage(&mut self, stage: StageKind) -> StageResult {
        match stage {
            StageKind::Data => self.stage_data(),
            StageKind::Flow => self.stage_flow(),
            StageKind::Classifier => self.stage_classifier(),
            StageKind::Refiner => self.stage_refiner(),
            StageKind::Hmc => self.stage_hmc(),
            StageKind::Score => self.stage_score(),
            StageKind::Render => self.stage_render(),
        }
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let json = serde_json::to_string_pretty(value)?;
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(p, e))
    }

    fn load_flow(&self) -> Result<FlowModel> {
        Ok(FlowModel::load(&self.path(files::FLOW))?.0)
    }

    fn stage_data(&mut self) -> StageResult {
        let c = &self.config;
        let spec = DatasetSpec::new(c.dataset, c.n_train, c.scoring.samples, c.seed);
        write_csv(&self.path(files::TRAIN), &POINT_HEADER, &spec.train()?)?;
        write_csv(&self.path(files::TRUTH), &POINT_HEADER, &spec.test()?)?;
        write_csv(&self.path(files::REFERENCE), &POINT_HEADER, &spec.reference()?)?;
        Ok((outputs(&[files::TRAIN, files::TRUTH, files::REFERENCE]), BTreeMap::new()))
    }

    fn stage_flow(&mut self) -> StageResult {
        let c = &self.config;
        let train = read_csv_expect(&self.path(files::TRAIN), &POINT_HEADER)?;
        let mut model = FlowModel::new(c.flow_arch(), &mut stage_rng(c.seed, Stage::FlowInit))?;
        let meta = FlowMeta {
            arch: c.flow_arch(),
            seed: c.seed,
            epochs: c.flow.epochs,
        };
        let history = match train_flow(&mut model, &train, &c.flow_train(), &mut stage_rng(c.seed, Stage::FlowTraining)) {
            Ok(h) => h,
            Err(e) => {
                if matches!(e, Error::Diverged { .. }) {
                    model.save(&self.path(files::FLOW_FAILED), &meta)?;
                    log::error!("last finite flow parameters saved to {}", files::FLOW_FAILED);
                }
                return Err(e);
            }
        };
        model.save(&self.path(files::FLOW), &meta)?;
        self.write_json(files::FLOW_HISTORY, &history)?;
        let summary = BTreeMap::from([
            ("initial_holdout_nll".to_string(), history.initial_holdout_nll),
            ("final_holdout_nll".to_string(), history.final_holdout_nll()),
        ]);
        Ok((outputs(&[files::FLOW, files::FLOW_META, files::FLOW_HISTORY]), summary))
    }

    fn stage_classifier(&mut self) -> StageResult {
        let c = &self.config;
        let train = read_csv_expect(&self.path(files::TRAIN), &POINT_HEADER)?;
        let flow = self.load_flow()?;
        let (z, x) = flow.sample(c.n_train, &mut stage_rng(c.seed, Stage::ClassifierSamples))?;
        let (clf, history) = train_classifier(&x, &train, &c.classifier_train(), &mut stage_rng(c.seed, Stage::ClassifierTraining))?;
        clf.save(&self.path(files::CLASSIFIER))?;
        self.write_json(files::CLASSIFIER_HISTORY, &history)?;
        let set = pull_back(&clf, &flow, &z)?;
        set.save_csv(&self.path(files::WEIGHTED))?;
        let mut summary = BTreeMap::from([
            ("holdout_accuracy".to_string(), history.holdout_accuracy),
            ("mean_weight".to_string(), set.mean_weight()),
            ("max_weight".to_string(), set.max_weight()),
            ("clipped_weights".to_string(), set.n_clipped as f64),
        ]);
        if let Some(b) = history.final_holdout_bce() {
            summary.insert("final_holdout_bce".into(), b);
        }
        Ok((outputs(&[files::CLASSIFIER, files::CLASSIFIER_HISTORY, files::WEIGHTED]), summary))
    }

    fn stage_refiner(&mut self) -> StageResult {
        let c = &self.config;
        let set = WeightedLatentSet::load_csv(&self.path(files::WEIGHTED))?;
        let (gan, history) = train_refiner(&set, true, &c.refiner_train(), &mut stage_rng(c.seed, Stage::Refiner))?;
        gan.save(&self.path(files::REFINER))?;
        self.write_json(files::REFINER_HISTORY, &history)?;
        let mut summary = BTreeMap::new();
        for (k, v) in [("d_loss", &history.d_loss), ("g_loss", &history.g_loss), ("latent_jsd", &history.latent_jsd)] {
            if let Some(last) = v.last() {
                summary.insert(format!("final_{k}"), *last);
            }
        }
        Ok((outputs(&[files::REFINER, files::REFINER_HISTORY]), summary))
    }

    fn stage_hmc(&mut self) -> StageResult {
        let c = &self.config;
        let flow = self.load_flow()?;
        let clf = Classifier::load(&self.path(files::CLASSIFIER))?;
        let target = LatentTarget {
            flow: &flow,
            classifier: &clf,
        };
        let out = hmc_run(&target, &c.hmc_config(stage_seed(c.seed, Stage::Hmc)))?;
        write_csv(&self.path(files::HMC_LATENT), &LATENT_HEADER, &out.samples)?;
        self.write_json(files::HMC_DIAGNOSTICS, &out.diagnostics)?;
        let d = &out.diagnostics;
        let summary = BTreeMap::from([
            ("mean_acceptance".to_string(), d.mean_acceptance),
            ("divergent_fraction".to_string(), d.divergent_fraction),
            ("autocorrelation_time_z0".to_string(), d.autocorrelation_time[0]),
            ("autocorrelation_time_z1".to_string(), d.autocorrelation_time[1]),
            ("rhat_z0".to_string(), d.rhat[0]),
            ("rhat_z1".to_string(), d.rhat[1]),
        ]);
        self.manifest.hmc = Some(out.diagnostics);
        Ok((outputs(&[files::HMC_LATENT, files::HMC_DIAGNOSTICS]), summary))
    }

    fn stage_score(&mut self) -> StageResult {
        let c = self.config.clone();
        let kind = c.dataset;
        let bounds = kind.bounds();
        let n = c.scoring.samples;
        let seed = stage_seed(c.seed, Stage::Scoring);
        let flow = self.load_flow()?;
        let clf = Classifier::load(&self.path(files::CLASSIFIER))?;
        let gan = RefinerGan::load(&self.path(files::REFINER))?;

        let (zb, xb) = flow.sample(n, &mut stream_rng(seed, 0))?;
        write_csv(&self.path(files::BASELINE), &SAMPLE_HEADER, &join(&zb, &xb))?;
        let dctr = pull_back(&clf, &flow, &zb)?;
        dctr.save_csv(&self.path(files::DCTR))?;
        let zl = gan.sample_latent(n, &mut stream_rng(seed, 1))?;
        let (xl, _) = flow.forward(&zl)?;
        write_csv(&self.path(files::LASER), &SAMPLE_HEADER, &join(&zl, &xl))?;
        let zh = read_csv_expect(&self.path(files::HMC_LATENT), &LATENT_HEADER)?;
        let (xh, _) = flow.forward(&zh)?;
        write_csv(&self.path(files::HMC), &SAMPLE_HEADER, &join(&zh, &xh))?;

        let truth = read_csv_expect(&self.path(files::TRUTH), &POINT_HEADER)?;
        let reference = read_csv_expect(&self.path(files::REFERENCE), &POINT_HEADER)?;
        let w = dctr.w.as_slice().expect("contiguous weights");
        let bins = (c.scoring.bins, c.scoring.bins);
        let hist = |p: &Array2<f64>, w: Option<&[f64]>| Histogram2D::from_points(p, w, bounds, bins);
        let h_truth = hist(&truth, None)?;
        let uncertainty = score_uncertainty(&h_truth, &hist(&reference, None)?)?;
        let mut report = ScoreReport::new(kind, uncertainty);
        for (method, h) in [
            (Method::Baseline, hist(&xb, None)?),
            (Method::Hmc, hist(&xh, None)?),
            (Method::Laser, hist(&xl, None)?),
            (Method::Dctr, hist(&xb, Some(w))?),
        ] {
            let score = Score::between(&h, &h_truth)?;
            log::info!("{method}: emd {:.4} jsd {:.4}", score.emd, score.jsd);
            report.insert(method, score);
        }
        report.insert(Method::Truth, uncertainty);
        let scores_csv = self.path(files::SCORES_CSV);
        std::fs::write(&scores_csv, report.to_csv()).map_err(|e| Error::io(&scores_csv, e))?;
        let scores_txt = self.path(files::SCORES_TXT);
        std::fs::write(&scores_txt, report.to_table()).map_err(|e| Error::io(&scores_txt, e))?;

        let set = WeightedLatentSet::load_csv(&self.path(files::WEIGHTED))?;
        let q = c.scoring.b0_quantile;
        let b0_grid = (c.scoring.b0_bins, c.scoring.b0_bins);
        let b0 = |p: &Array2<f64>, w: Option<&[f64]>, bounds: Bounds| -> Result<usize> {
            b0_diagnostic(&Histogram2D::from_points(p, w, bounds, b0_grid)?, q)
        };
        let mut summary = BTreeMap::new();
        let mut b0_map = BTreeMap::new();
        for (name, value) in [
            ("truth", b0(&truth, None, bounds)?),
            ("baseline", b0(&xb, None, bounds)?),
            ("hmc", b0(&xh, None, bounds)?),
            ("laser", b0(&xl, None, bounds)?),
            ("dctr", b0(&xb, Some(w), bounds)?),
            ("weighted_latent", b0(&set.z, set.w.as_slice(), MONITOR_BOUNDS)?),
            ("hmc_latent", b0(&zh, None, MONITOR_BOUNDS)?),
            ("laser_latent", b0(&zl, None, MONITOR_BOUNDS)?),
        ] {
            log::info!("b0 {name}: {value}");
            b0_map.insert(name.to_string(), value);
            summary.insert(format!("b0_{name}"), value as f64);
        }
        self.manifest.scores = Some(report);
        self.manifest.b0 = b0_map;
        Ok((
            outputs(&[files::BASELINE, files::DCTR, files::LASER, files::HMC, files::SCORES_CSV, files::SCORES_TXT]),
            summary,
        ))
    }

    fn stage_render(&mut self) -> StageResult {
        let c = &self.config;
        let kind = c.dataset;
        let grid = (c.scoring.b0_bins, c.scoring.b0_bins);
        let peak = kind.peak_density();
        let truth = read_csv_expect(&self.path(files::TRUTH), &POINT_HEADER)?;
        let samples = |name: &str| read_csv_expect(&self.path(name), &SAMPLE_HEADER);
        let baseline = samples(files::BASELINE)?;
        let laser = samples(files::LASER)?;
        let hmc = samples(files::HMC)?;
        let dctr = WeightedLatentSet::load_csv(&self.path(files::DCTR))?;
        let weighted = WeightedLatentSet::load_csv(&self.path(files::WEIGHTED))?;
        let x = |a: &Array2<f64>| a.slice(s![.., 2..4]).to_owned();
        let z = |a: &Array2<f64>| a.slice(s![.., 0..2]).to_owned();

        let panels: Vec<(&str, Array2<f64>, Option<&[f64]>, Bounds, f64)> = vec![
            ("truth.png", truth, None, kind.bounds(), peak),
            ("baseline.png", x(&baseline), None, kind.bounds(), peak),
            ("dctr.png", dctr.x.clone(), dctr.w.as_slice(), kind.bounds(), peak),
            ("hmc.png", x(&hmc), None, kind.bounds(), peak),
            ("laser.png", x(&laser), None, kind.bounds(), peak),
            ("latent_baseline.png", z(&baseline), None, MONITOR_BOUNDS, LATENT_PEAK),
            ("latent_weighted.png", weighted.z.clone(), weighted.w.as_slice(), MONITOR_BOUNDS, LATENT_PEAK),
            ("latent_hmc.png", z(&hmc), None, MONITOR_BOUNDS, LATENT_PEAK),
            ("latent_laser.png", z(&laser), None, MONITOR_BOUNDS, LATENT_PEAK),
        ];
        let mut written = Vec::new();
        for (name, pts, w, bounds, peak) in panels {
            render_density(&pts, w, bounds, grid, peak, &self.path(name))?;
            written.push(name.to_string());
        }
        Ok((written, BTreeMap::new()))
    }
}

fn outputs(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn join(z: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    concatenate![Axis(1), z.view(), x.view()]
}

/// Config text of `sections` with the output directory left out, so moving
/// a run does not invalidate it.
fn identity_text(config: &RunConfig, sections: &[&str]) -> String {
    let mut out = String::new();
    for sec in sections {
        out.push_str(&format!("[{sec}]\n"));
        for (k, v) in config.section_entries(sec) {
            if *sec == "run" && k == "output_dir" {
                continue;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}

/// Runs every stage and returns the manifest. On failure the manifest in the
/// output directory names the failing stage.
pub fn run_experiment(config: RunConfig) -> Result<RunManifest> {
    let mut exp = Experiment::new(config)?;
    exp.run_until(StageKind::Render)?;
    Ok(exp.manifest().clone())
}
