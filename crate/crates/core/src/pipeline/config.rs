//! Run configuration in a line-oriented `[section]` / `key = value` format.
//!
//! Every field is always written, so `parse(to_text(c)) == c`. Parsing starts
//! from the paper preset of the named dataset and applies each key in turn.
//! `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::flow::{FlowArch, FlowTrainConfig};
use crate::nn::AdamConfig;
use crate::refiner::{RefinerArch, RefinerTrainConfig};
use crate::reweight::{ClassifierArch, ClassifierTrainConfig};
use crate::sampler::HmcConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSection {
    pub blocks: usize,
    pub units: usize,
    pub hidden_layers: usize,
    pub s_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub holdout_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSection {
    pub hidden_layers: usize,
    pub units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub holdout_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerSection {
    pub aux_dim: usize,
    pub hidden_layers: usize,
    pub units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub d_steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcSection {
    pub chains: usize,
    pub eps: f64,
    pub steps: usize,
    pub burn_in: usize,
    pub keep: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringSection {
    pub samples: usize,
    pub bins: usize,
    pub b0_bins: usize,
    pub b0_quantile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Master seed; every stage draws from its own stream of it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub n_train: usize,
    pub flow: FlowSection,
    pub classifier: ClassifierSection,
    pub refiner: RefinerSection,
    pub hmc: HmcSection,
    pub scoring: ScoringSection,
}

pub const SECTIONS: [&str; 7] = ["run", "data", "flow", "classifier", "refiner", "hmc", "scoring"];

impl RunConfig {
    /// Hyperparameters of the published experiments.
    pub fn paper(dataset: DatasetKind) -> Self {
        let (blocks, units) = match dataset {
            DatasetKind::Rings => (20, 60),
            _ => (12, 48),
        };
        Self {
            dataset,
            seed: 1,
            output_dir: PathBuf::from("runs").join(dataset.name()),
            n_train: 480_000,
            flow: FlowSection {
                blocks,
                units,
                hidden_layers: 3,
                s_max: 4.0,
                epochs: 100,
                batch_size: 2000,
                lr: 1e-3,
                gamma: 0.999,
                weight_decay: 1e-5,
                holdout_frac: 0.05,
            },
            classifier: ClassifierSection {
                hidden_layers: 8,
                units: 96,
                epochs: 50,
                batch_size: 2000,
                lr: 1e-3,
                gamma: 0.999,
                holdout_frac: 0.05,
            },
            refiner: RefinerSection {
                aux_dim: 4,
                hidden_layers: 7,
                units: 100,
                epochs: 200,
                batch_size: 2000,
                d_steps: 4,
                lr: 1e-4,
                beta1: 0.5,
                beta2: 0.9,
                gamma: 0.999,
            },
            hmc: HmcSection {
                chains: 100,
                eps: 0.004,
                steps: 50,
                burn_in: 3000,
                keep: 20_000,
                groups: 1,
            },
            scoring: ScoringSection {
                samples: 2_000_000,
                bins: 64,
                b0_bins: 64,
                b0_quantile: 0.95,
            },
        }
    }

    /// Reduced sizes that finish on one CPU core in minutes.
    pub fn desk(dataset: DatasetKind) -> Self {
        let mut c = Self::paper(dataset);
        c.output_dir = PathBuf::from("runs").join(format!("{}-desk", dataset.name()));
        c.n_train = 48_000;
        c.flow.epochs = 30;
        c.classifier.epochs = 20;
        c.refiner.epochs = 60;
        c.hmc.burn_in = 300;
        c.hmc.keep = 200;
        c.scoring.samples = 20_000;
        c.scoring.bins = 32;
        c.scoring.b0_bins = 32;
        c
    }

    pub fn preset(preset: Preset, dataset: DatasetKind) -> Self {
        match preset {
            Preset::Paper => Self::paper(dataset),
            Preset::Desk => Self::desk(dataset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("data.n_train", self.n_train),
            ("flow.blocks", self.flow.blocks),
            ("flow.units", self.flow.units),
            ("flow.hidden_layers", self.flow.hidden_layers),
            ("flow.batch_size", self.flow.batch_size),
            ("classifier.hidden_layers", self.classifier.hidden_layers),
            ("classifier.units", self.classifier.units),
            ("classifier.batch_size", self.classifier.batch_size),
            ("refiner.aux_dim", self.refiner.aux_dim),
            ("refiner.hidden_layers", self.refiner.hidden_layers),
            ("refiner.units", self.refiner.units),
            ("refiner.batch_size", self.refiner.batch_size),
            ("refiner.d_steps", self.refiner.d_steps),
            ("hmc.chains", self.hmc.chains),
            ("hmc.keep", self.hmc.keep),
            ("hmc.groups", self.hmc.groups),
            ("scoring.samples", self.scoring.samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.scoring.bins < 2 || self.scoring.b0_bins < 2 {
            return Err(Error::Config("scoring bins must be at least 2".into()));
        }
        if !(self.hmc.eps > 0.0) {
            return Err(Error::Config("hmc.eps must be positive".into()));
        }
        if !(self.scoring.b0_quantile > 0.0 && self.scoring.b0_quantile < 1.0) {
            return Err(Error::Config("scoring.b0_quantile must lie in (0,1)".into()));
        }
        for (name, f) in [("flow.holdout_frac", self.flow.holdout_frac), ("classifier.holdout_frac", self.classifier.holdout_frac)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must lie in [0,1)")));
            }
        }
        Ok(())
    }

    pub fn flow_arch(&self) -> FlowArch {
        FlowArch {
            blocks: self.flow.blocks,
            hidden_layers: self.flow.hidden_layers,
            units: self.flow.units,
            s_max: self.flow.s_max,
        }
    }

    pub fn flow_train(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            epochs: self.flow.epochs,
            batch_size: self.flow.batch_size,
            adam: AdamConfig {
                lr: self.flow.lr,
                gamma: self.flow.gamma,
                weight_decay: self.flow.weight_decay,
                ..AdamConfig::default()
            },
            holdout_frac: self.flow.holdout_frac,
        }
    }

    pub fn classifier_train(&self) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            arch: ClassifierArch {
                hidden_layers: self.classifier.hidden_layers,
                units: self.classifier.units,
            },
            epochs: self.classifier.epochs,
            batch_size: self.classifier.batch_size,
            adam: AdamConfig {
                lr: self.classifier.lr,
                gamma: self.classifier.gamma,
                ..AdamConfig::default()
            },
            holdout_frac: self.classifier.holdout_frac,
        }
    }

    pub fn refiner_train(&self) -> RefinerTrainConfig {
        RefinerTrainConfig {
            arch: RefinerArch {
                aux_dim: self.refiner.aux_dim,
                hidden_layers: self.refiner.hidden_layers,
                units: self.refiner.units,
            },
            epochs: self.refiner.epochs,
            batch_size: self.refiner.batch_size,
            d_steps: self.refiner.d_steps,
            updates_per_epoch: None,
            adam: AdamConfig {
                lr: self.refiner.lr,
                beta1: self.refiner.beta1,
                beta2: self.refiner.beta2,
                gamma: self.refiner.gamma,
                ..AdamConfig::default()
            },
            ..RefinerTrainConfig::default()
        }
    }

    pub fn hmc_config(&self, seed: u64) -> HmcConfig {
        HmcConfig {
            chains: self.hmc.chains,
            burn_in: self.hmc.burn_in,
            keep: self.hmc.keep,
            eps: self.hmc.eps,
            steps: self.hmc.steps,
            seed,
            groups: self.hmc.groups,
            ..HmcConfig::default()
        }
    }

    /// `key = value` lines of one section, in canonical order.
    pub fn section_entries(&self, section: &str) -> Vec<(&'static str, String)> {
        match section {
            "run" => vec![
                ("dataset", self.dataset.name().to_string()),
                ("seed", self.seed.to_string()),
                ("output_dir", self.output_dir.display().to_string()),
            ],
            "data" => vec![("n_train", self.n_train.to_string())],
            "flow" => {
                let f = &self.flow;
                vec![
                    ("blocks", f.blocks.to_string()),
                    ("units", f.units.to_string()),
                    ("hidden_layers", f.hidden_layers.to_string()),
                    ("s_max", f.s_max.to_string()),
                    ("epochs", f.epochs.to_string()),
                    ("batch_size", f.batch_size.to_string()),
                    ("lr", f.lr.to_string()),
                    ("gamma", f.gamma.to_string()),
                    ("weight_decay", f.weight_decay.to_string()),
                    ("holdout_frac", f.holdout_frac.to_string()),
                ]
            }
            "classifier" => {
                let c = &self.classifier;
                vec![
                    ("hidden_layers", c.hidden_layers.to_string()),
                    ("units", c.units.to_string()),
                    ("epochs", c.epochs.to_string()),
                    ("batch_size", c.batch_size.to_string()),
                    ("lr", c.lr.to_string()),
                    ("gamma", c.gamma.to_string()),
                    ("holdout_frac", c.holdout_frac.to_string()),
                ]
            }
            "refiner" => {
                let r = &self.refiner;
                vec![
                    ("aux_dim", r.aux_dim.to_string()),
                    ("hidden_layers", r.hidden_layers.to_string()),
                    ("units", r.units.to_string()),
                    ("epochs", r.epochs.to_string()),
                    ("batch_size", r.batch_size.to_string()),
                    ("d_steps", r.d_steps.to_string()),
                    ("lr", r.lr.to_string()),
                    ("beta1", r.beta1.to_string()),
                    ("beta2", r.beta2.to_string()),
                    ("gamma", r.gamma.to_string()),
                ]
            }
            "hmc" => {
                let h = &self.hmc;
                vec![
                    ("chains", h.chains.to_string()),
                    ("eps", h.eps.to_string()),
                    ("steps", h.steps.to_string()),
                    ("burn_in", h.burn_in.to_string()),
                    ("keep", h.keep.to_string()),
                    ("groups", h.groups.to_string()),
                ]
            }
            "scoring" => {
                let s = &self.scoring;
                vec![
                    ("samples", s.samples.to_string()),
                    ("bins", s.bins.to_string()),
                    ("b0_bins", s.b0_bins.to_string()),
                    ("b0_quantile", s.b0_quantile.to_string()),
                ]
            }
            _ => Vec::new(),
        }
    }

    pub fn section_text(&self, section: &str) -> String {
        let mut out = format!("[{section}]\n");
        for (k, v) in self.section_entries(section) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        SECTIONS
            .iter()
            .map(|s| self.section_text(s))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for {section}.{key}")))
        }
        macro_rules! set {
            ($field:expr) => {{
                $field = num(section, key, value)?;
            }};
        }
        match (section, key) {
            ("run", "dataset") => self.dataset = value.parse()?,
            ("run", "seed") => set!(self.seed),
            ("run", "output_dir") => self.output_dir = PathBuf::from(value),
            ("data", "n_train") => set!(self.n_train),
            ("flow", "blocks") => set!(self.flow.blocks),
            ("flow", "units") => set!(self.flow.units),
            ("flow", "hidden_layers") => set!(self.flow.hidden_layers),
            ("flow", "s_max") => set!(self.flow.s_max),
            ("flow", "epochs") => set!(self.flow.epochs),
            ("flow", "batch_size") => set!(self.flow.batch_size),
            ("flow", "lr") => set!(self.flow.lr),
            ("flow", "gamma") => set!(self.flow.gamma),
            ("flow", "weight_decay") => set!(self.flow.weight_decay),
            ("flow", "holdout_frac") => set!(self.flow.holdout_frac),
            ("classifier", "hidden_layers") => set!(self.classifier.hidden_layers),
            ("classifier", "units") => set!(self.classifier.units),
            ("classifier", "epochs") => set!(self.classifier.epochs),
            ("classifier", "batch_size") => set!(self.classifier.batch_size),
            ("classifier", "lr") => set!(self.classifier.lr),
            ("classifier", "gamma") => set!(self.classifier.gamma),
            ("classifier", "holdout_frac") => set!(self.classifier.holdout_frac),
            ("refiner", "aux_dim") => set!(self.refiner.aux_dim),
            ("refiner", "hidden_layers") => set!(self.refiner.hidden_layers),
            ("refiner", "units") => set!(self.refiner.units),
            ("refiner", "epochs") => set!(self.refiner.epochs),
            ("refiner", "batch_size") => set!(self.refiner.batch_size),
            ("refiner", "d_steps") => set!(self.refiner.d_steps),
            ("refiner", "lr") => set!(self.refiner.lr),
            ("refiner", "beta1") => set!(self.refiner.beta1),
            ("refiner", "beta2") => set!(self.refiner.beta2),
            ("refiner", "gamma") => set!(self.refiner.gamma),
            ("hmc", "chains") => set!(self.hmc.chains),
            ("hmc", "eps") => set!(self.hmc.eps),
            ("hmc", "steps") => set!(self.hmc.steps),
            ("hmc", "burn_in") => set!(self.hmc.burn_in),
            ("hmc", "keep") => set!(self.hmc.keep),
            ("hmc", "groups") => set!(self.hmc.groups),
            ("scoring", "samples") => set!(self.scoring.samples),
            ("scoring", "bins") => set!(self.scoring.bins),
            ("scoring", "b0_bins") => set!(self.scoring.b0_bins),
            ("scoring", "b0_quantile") => set!(self.scoring.b0_quantile),
            _ => return Err(Error::Config(format!("unknown configuration key {section}.{key}"))),
        }
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key '{path}' is not section.key")))?;
        self.set(section, key, value.trim())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                reason,
            };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            let s = section.clone().ok_or_else(|| err("key outside of a section".into()))?;
            entries.push((i + 1, s, k.trim().to_string(), v.trim().to_string()));
        }
        let dataset = entries
            .iter()
            .find(|(_, s, k, _)| s == "run" && k == "dataset")
            .map(|(_, _, _, v)| v.parse::<DatasetKind>())
            .transpose()?
            .unwrap_or(DatasetKind::Gaussians);
        let mut config = Self::paper(dataset);
        for (line, s, k, v) in entries {
            config.set(&s, &k, &v).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line,
                reason: e.to_string(),
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
