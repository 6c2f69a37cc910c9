use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::sampler::HmcDiagnostics;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Experiment stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Data,
    Flow,
    Classifier,
    Refiner,
    Hmc,
    Score,
    Render,
}

impl StageKind {
    pub const ALL: [StageKind; 7] = [
        StageKind::Data,
        StageKind::Flow,
        StageKind::Classifier,
        StageKind::Refiner,
        StageKind::Hmc,
        StageKind::Score,
        StageKind::Render,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Data => "data",
            StageKind::Flow => "flow",
            StageKind::Classifier => "classifier",
            StageKind::Refiner => "refiner",
            StageKind::Hmc => "hmc",
            StageKind::Score => "score",
            StageKind::Render => "render",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn inputs(self) -> &'static [StageKind] {
        match self {
            StageKind::Data => &[],
            StageKind::Flow => &[StageKind::Data],
            StageKind::Classifier => &[StageKind::Flow],
            StageKind::Refiner | StageKind::Hmc => &[StageKind::Classifier],
            StageKind::Score => &[StageKind::Refiner, StageKind::Hmc],
            StageKind::Render => &[StageKind::Score],
        }
    }

    /// Config sections read by this stage itself.
    pub fn sections(self) -> &'static [&'static str] {
        match self {
            StageKind::Data => &["run", "data", "scoring"],
            StageKind::Flow => &["flow"],
            StageKind::Classifier => &["classifier"],
            StageKind::Refiner => &["refiner"],
            StageKind::Hmc => &["hmc"],
            StageKind::Score => &["scoring"],
            StageKind::Render => &[],
        }
    }

    /// This stage and everything upstream of it.
    pub fn closure(self) -> Vec<StageKind> {
        let mut out = vec![self];
        let mut i = 0;
        while i < out.len() {
            for &s in out[i].inputs() {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
            i += 1;
        }
        out.sort();
        out
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StageKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    /// Ran in this invocation.
    Done,
    /// Outputs of an earlier run with the same inputs were reused.
    Reused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageKind,
    pub status: StageStatus,
    /// Hash of every config section the stage depends on, directly or upstream.
    pub input_hash: String,
    pub seconds: f64,
    /// Files written by the stage, relative to the output directory.
    pub outputs: Vec<String>,
    /// Stage-specific numbers worth keeping (final losses, acceptance, ...).
    #[serde(default)]
    pub summary: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub dataset: DatasetKind,
    pub seed: u64,
    /// Hash of the full configuration minus the output directory.
    pub config_hash: String,
    pub config_text: String,
    pub stages: Vec<StageRecord>,
    pub scores: Option<ScoreReport>,
    /// b0 diagnostic per sample set (truth, baseline, hmc, laser, dctr, weighted_latent).
    pub b0: BTreeMap<String, usize>,
    pub hmc: Option<HmcDiagnostics>,
    pub failed_stage: Option<StageKind>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(dataset: DatasetKind, seed: u64, config_hash: String, config_text: String) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            dataset,
            seed,
            config_hash,
            config_text,
            stages: Vec::new(),
            scores: None,
            b0: BTreeMap::new(),
            hmc: None,
            failed_stage: None,
            error: None,
        }
    }

    pub fn stage(&self, kind: StageKind) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == kind)
    }

    pub fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|s| s.stage);
    }

    pub fn is_complete(&self) -> bool {
        self.failed_stage.is_none()
            && StageKind::ALL
                .iter()
                .all(|k| self.stage(*k).is_some_and(|s| s.status != StageStatus::Failed))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closures_follow_dependencies() {
        assert_eq!(StageKind::Data.closure(), vec![StageKind::Data]);
        assert_eq!(
            StageKind::Hmc.closure(),
            vec![StageKind::Data, StageKind::Flow, StageKind::Classifier, StageKind::Hmc]
        );
        assert!(!StageKind::Refiner.closure().contains(&StageKind::Hmc));
        assert_eq!(StageKind::Render.closure().len(), StageKind::ALL.len());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = RunManifest::new(DatasetKind::Rings, 3, sha256_hex("abc"), "[run]\n".into());
        assert_eq!(m.config_hash, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        m.record(StageRecord {
            stage: StageKind::Flow,
            status: StageStatus::Done,
            input_hash: "x".into(),
            seconds: 1.5,
            outputs: vec!["flow.ckpt".into()],
            summary: BTreeMap::from([("holdout_nll".to_string(), 2.5)]),
        });
        m.record(StageRecord {
            stage: StageKind::Data,
            status: StageStatus::Reused,
            input_hash: "y".into(),
            seconds: 0.0,
            outputs: vec![],
            summary: BTreeMap::new(),
        });
        assert_eq!(m.stages[0].stage, StageKind::Data);
        m.b0.insert("truth".into(), 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        m.save(&p).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
        assert!(!m.is_complete());
    }
}
