use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::divergence::jsd;
use super::emd::emd;
use super::histogram::Histogram2D;
use crate::data::DatasetKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Hmc,
    Laser,
    Dctr,
    Truth,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Baseline, Method::Hmc, Method::Laser, Method::Dctr, Method::Truth];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Hmc => "hmc",
            Method::Laser => "laser",
            Method::Dctr => "dctr",
            Method::Truth => "truth",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::Hmc => "HMC",
            Method::Laser => "LaSeR",
            Method::Dctr => "DCTR",
            Method::Truth => "Truth",
        }
    }

    /// Whether the method yields samples without per-event weights.
    pub fn is_unweighted(self) -> bool {
        matches!(self, Method::Baseline | Method::Hmc | Method::Laser)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub emd: f64,
    pub jsd: f64,
}

impl Score {
    pub fn between(a: &Histogram2D, b: &Histogram2D) -> Result<Self> {
        Ok(Self {
            emd: emd(a, b)?,
            jsd: jsd(a, b)?,
        })
    }
}

/// Truth-vs-truth scores of two independent truth samples, used as the quoted
/// uncertainty of every other score at the same sample size.
pub fn score_uncertainty(truth_a: &Histogram2D, truth_b: &Histogram2D) -> Result<Score> {
    Score::between(truth_a, truth_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub dataset: DatasetKind,
    pub uncertainty: Score,
    pub rows: Vec<(Method, Score)>,
}

pub const SCORE_CSV_HEADER: &str = "method,emd,emd_err,jsd,jsd_err";

impl ScoreReport {
    pub fn new(dataset: DatasetKind, uncertainty: Score) -> Self {
        Self {
            dataset,
            uncertainty,
            rows: Vec::new(),
        }
    }

    pub fn insert(&mut self, method: Method, score: Score) {
        if let Some(slot) = self.rows.iter_mut().find(|(m, _)| *m == method) {
            slot.1 = score;
        } else {
            self.rows.push((method, score));
        }
    }

    pub fn get(&self, method: Method) -> Option<Score> {
        self.rows.iter().find(|(m, _)| *m == method).map(|(_, s)| *s)
    }

    /// `a` beats `b` on JSD by more than the truth-vs-truth uncertainty.
    pub fn jsd_significantly_below(&self, a: Method, b: Method) -> Option<bool> {
        Some(self.get(a)?.jsd + self.uncertainty.jsd < self.get(b)?.jsd)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SCORE_CSV_HEADER}\n");
        for (m, s) in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.name(),
                s.emd,
                self.uncertainty.emd,
                s.jsd,
                self.uncertainty.jsd
            ));
        }
        out.push_str(&format!(
            "truth,{},{},{},{}\n",
            self.uncertainty.emd, self.uncertainty.emd, self.uncertainty.jsd, self.uncertainty.jsd
        ));
        out
    }

    pub fn from_csv(text: &str, dataset: DatasetKind) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: "scores.csv".into(),
            line,
            reason,
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SCORE_CSV_HEADER) {
            return Err(err(1, "unexpected header".into()));
        }
        let mut rows = Vec::new();
        let mut uncertainty = None;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(i + 2, format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 2, format!("invalid number '{s}'")));
            let method: Method = f[0].parse()?;
            let score = Score {
                emd: num(f[1])?,
                jsd: num(f[3])?,
            };
            let unc = Score {
                emd: num(f[2])?,
                jsd: num(f[4])?,
            };
            if method == Method::Truth {
                uncertainty = Some(unc);
            } else {
                rows.push((method, score));
            }
        }
        let uncertainty = uncertainty.ok_or_else(|| err(0, "missing truth row".into()))?;
        Ok(Self {
            dataset,
            uncertainty,
            rows,
        })
    }

    /// Aligned text table with the uncertainty in parentheses.
    pub fn to_table(&self) -> String {
        let mut out = format!("{} (truth-vs-truth uncertainty in parentheses)\n", self.dataset);
        out.push_str(&format!("{:<10} {:>18} {:>18}\n", "Method", "EMD", "JSD"));
        for (m, s) in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>18} {:>18}\n",
                m.label(),
                format!("{:.4} ({:.4})", s.emd, self.uncertainty.emd),
                format!("{:.4} ({:.4})", s.jsd, self.uncertainty.jsd),
            ));
        }
        out
    }
}
