//! Aggregates the score reports of several runs into one table, one column
//! per label (by default the dataset name) and one row per method.

use std::fmt::Write as _;

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::metrics::{Method, Score};

use super::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub label: String,
    pub dataset: DatasetKind,
    /// Number of manifests averaged into this column.
    pub replicates: usize,
    pub uncertainty: Score,
    pub scores: Vec<(Method, Score)>,
    /// Unweighted methods with the lowest EMD; more than one means a tie
    /// within the truth-vs-truth uncertainty.
    pub best_emd: Vec<Method>,
    pub best_jsd: Vec<Method>,
}

impl Column {
    pub fn get(&self, method: Method) -> Option<Score> {
        self.scores.iter().find(|(m, _)| *m == method).map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub columns: Vec<Column>,
}

fn best(scores: &[(Method, Score)], err: f64, key: impl Fn(&Score) -> f64) -> Vec<Method> {
    let candidates: Vec<(Method, f64)> = scores
        .iter()
        .filter(|(m, _)| m.is_unweighted())
        .map(|(m, s)| (*m, key(s)))
        .collect();
    let Some(min) = candidates.iter().map(|c| c.1).min_by(f64::total_cmp) else {
        return Vec::new();
    };
    candidates.into_iter().filter(|c| c.1 <= min + err).map(|c| c.0).collect()
}

/// Merges labelled manifests. Manifests sharing a label are averaged and
/// must all come from the same dataset.
pub fn compare_report(manifests: &[(String, RunManifest)]) -> Result<Comparison> {
    if manifests.is_empty() {
        return Err(Error::Config("compare needs at least one manifest".into()));
    }
    let mut labels: Vec<&str> = Vec::new();
    for (l, _) in manifests {
        if !labels.contains(&l.as_str()) {
            labels.push(l);
        }
    }
    let mut columns = Vec::new();
    for label in labels {
        let members: Vec<&RunManifest> = manifests.iter().filter(|(l, _)| l == label).map(|(_, m)| m).collect();
        let dataset = members[0].dataset;
        if let Some(other) = members.iter().find(|m| m.dataset != dataset) {
            return Err(Error::Config(format!(
                "column '{label}' mixes datasets {dataset} and {}",
                other.dataset
            )));
        }
        let reports = members
            .iter()
            .map(|m| {
                m.scores
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("a manifest in column '{label}' has no scores")))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = reports.len() as f64;
        let mean = |f: &dyn Fn(&Score) -> f64, xs: &[Score]| xs.iter().map(f).sum::<f64>() / xs.len() as f64;
        let uncs: Vec<Score> = reports.iter().map(|r| r.uncertainty).collect();
        let uncertainty = Score {
            emd: mean(&|s| s.emd, &uncs),
            jsd: mean(&|s| s.jsd, &uncs),
        };
        let mut scores = Vec::new();
        for method in Method::ALL {
            let vals: Vec<Score> = reports.iter().filter_map(|r| r.get(method)).collect();
            if vals.is_empty() {
                continue;
            }
            if (vals.len() as f64) < k {
                log::warn!("column '{label}': {method} missing from some manifests");
            }
            scores.push((
                method,
                Score {
                    emd: mean(&|s| s.emd, &vals),
                    jsd: mean(&|s| s.jsd, &vals),
                },
            ));
        }
        columns.push(Column {
            label: label.to_string(),
            dataset,
            replicates: members.len(),
            best_emd: best(&scores, uncertainty.emd, |s| s.emd),
            best_jsd: best(&scores, uncertainty.jsd, |s| s.jsd),
            uncertainty,
            scores,
        });
    }
    Ok(Comparison { columns })
}

impl Comparison {
    /// Aligned text table; `*` marks the best unweighted method of a column.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "method");
        for c in &self.columns {
            let head = if c.replicates > 1 {
                format!("{} (n={})", c.label, c.replicates)
            } else {
                c.label.clone()
            };
            let _ = write!(out, " | {head:^29}");
        }
        out.push('\n');
        let _ = write!(out, "{:<10}", "");
        for _ in &self.columns {
            let _ = write!(out, " | {:^14} {:^14}", "EMD", "JSD");
        }
        out.push('\n');
        for method in Method::ALL {
            if self.columns.iter().all(|c| c.get(method).is_none()) {
                continue;
            }
            let _ = write!(out, "{:<10}", method.label());
            for c in &self.columns {
                match c.get(method) {
                    Some(s) => {
                        let mark = |b: &[Method]| if b.contains(&method) { "*" } else { " " };
                        let e = format!("{:.4}({:.4}){}", s.emd, c.uncertainty.emd, mark(&c.best_emd));
                        let j = format!("{:.4}({:.4}){}", s.jsd, c.uncertainty.jsd, mark(&c.best_jsd));
                        let _ = write!(out, " | {e:>14} {j:>14}");
                    }
                    None => {
                        let _ = write!(out, " | {:>14} {:>14}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
        for c in &self.columns {
            for (metric, b) in [("EMD", &c.best_emd), ("JSD", &c.best_jsd)] {
                if b.len() > 1 {
                    let names: Vec<&str> = b.iter().map(|m| m.label()).collect();
                    let _ = writeln!(out, "{}: {metric} tie within uncertainty: {}", c.label, names.join(", "));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ScoreReport;

    fn manifest(dataset: DatasetKind, base: f64) -> RunManifest {
        let mut r = ScoreReport::new(dataset, Score { emd: 0.01, jsd: 0.02 });
        r.insert(Method::Baseline, Score { emd: base, jsd: 2.0 * base });
        r.insert(Method::Hmc, Score { emd: 0.1, jsd: 0.2 });
        r.insert(Method::Laser, Score { emd: 0.2, jsd: 0.25 });
        r.insert(Method::Dctr, Score { emd: 0.05, jsd: 0.1 });
        r.insert(Method::Truth, Score { emd: 0.01, jsd: 0.02 });
        let mut m = RunManifest::new(dataset, 1, "h".into(), String::new());
        m.scores = Some(r);
        m
    }

    #[test]
    fn single_manifest_passes_through() {
        let m = manifest(DatasetKind::Gaussians, 0.3);
        let c = compare_report(&[("g".into(), m.clone())]).unwrap();
        let col = &c.columns[0];
        assert_eq!(col.scores, m.scores.as_ref().unwrap().rows);
        assert_eq!(col.best_emd, vec![Method::Hmc]);
        assert_eq!(col.best_jsd, vec![Method::Hmc]);
        assert!(c.to_table().contains("0.1000(0.0100)*"));
    }

    #[test]
    fn identical_manifests_give_identical_rows() {
        let m = manifest(DatasetKind::Rings, 0.3);
        let one = compare_report(&[("r".into(), m.clone())]).unwrap();
        let two = compare_report(&[("r".into(), m.clone()), ("r".into(), m.clone())]).unwrap();
        assert_eq!(one.columns[0].scores, two.columns[0].scores);
        assert_eq!(two.columns[0].replicates, 2);
        let side = compare_report(&[("a".into(), m.clone()), ("b".into(), m)]).unwrap();
        assert_eq!(side.columns[0].scores, side.columns[1].scores);
    }

    #[test]
    fn ties_within_uncertainty_are_noted() {
        let mut m = manifest(DatasetKind::Gaussians, 0.3);
        m.scores.as_mut().unwrap().insert(Method::Laser, Score { emd: 0.105, jsd: 0.5 });
        let c = compare_report(&[("g".into(), m)]).unwrap();
        assert_eq!(c.columns[0].best_emd, vec![Method::Hmc, Method::Laser]);
        assert!(c.to_table().contains("EMD tie within uncertainty: HMC, LaSeR"));
    }

    #[test]
    fn mixed_datasets_in_a_column_fail() {
        let a = manifest(DatasetKind::Gaussians, 0.3);
        let b = manifest(DatasetKind::Rings, 0.3);
        assert!(compare_report(&[("x".into(), a.clone()), ("x".into(), b.clone())]).is_err());
        let grid = compare_report(&[
            ("gaussians".into(), a),
            ("rings".into(), b),
            ("double_donut".into(), manifest(DatasetKind::DoubleDonut, 0.4)),
        ])
        .unwrap();
        assert_eq!(grid.columns.len(), 3);
        assert!(grid.columns.iter().all(|c| c.scores.iter().filter(|(m, _)| *m != Method::Truth).count() == 4));
        assert!(compare_report(&[]).is_err());
    }
}
