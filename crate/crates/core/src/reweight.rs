//! Post-hoc classifier between generated and real samples, turned into
//! likelihood-ratio weights `w = f / (1 − f)` and pulled back to the latent
//! points that produced each generated sample.
//!
//! Labels are 1 for data and 0 for generated samples, so `w > 1` marks regions
//! the generator underpopulates. `f` is clipped to `[F_FLOOR, 1 − F_FLOOR]`
//! and `w` is capped at `W_MAX`; every clipped event is counted.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, split_holdout};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::io::{read_csv_expect, write_csv};
use crate::nn::{
    log_sigmoid_scalar, sigmoid_scalar, Adam, AdamConfig, Checkpoint, Mlp, OutputActivation, ParamMode, Parameterized, Tape, Var,
    DEFAULT_LEAKY_SLOPE,
};

pub const F_FLOOR: f64 = 1e-6;
pub const W_MAX: f64 = 1e3;
pub const WEIGHTED_CSV_HEADER: [&str; 5] = ["z0", "z1", "x0", "x1", "w"];

/// Lower and upper bound on `log w` implied by the clipping rules.
pub fn log_weight_bounds() -> (f64, f64) {
    ((F_FLOOR / (1.0 - F_FLOOR)).ln(), W_MAX.ln())
}

/// Weight of one classifier output; the flag reports whether clipping applied.
pub fn dctr_weight(f: f64) -> (f64, bool) {
    let fc = f.clamp(F_FLOOR, 1.0 - F_FLOOR);
    let w = fc / (1.0 - fc);
    if w > W_MAX {
        (W_MAX, true)
    } else {
        (w, fc != f)
    }
}

/// Weight computed from the classifier logit, identical to [`dctr_weight`] of
/// `σ(logit)` up to rounding but without cancellation in `1 − f`.
pub fn weight_from_logit(logit: f64) -> (f64, bool) {
    let (lo, hi) = log_weight_bounds();
    if logit >= hi {
        return (W_MAX, logit > hi);
    }
    (logit.max(lo).exp(), logit < lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    net: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub hidden_layers: usize,
    pub units: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            units: 96,
        }
    }
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(arch: ClassifierArch, rng: &mut R) -> Result<Self> {
        let mut widths = vec![2];
        widths.extend(std::iter::repeat(arch.units).take(arch.hidden_layers));
        widths.push(1);
        Ok(Self {
            net: Mlp::new(&widths, DEFAULT_LEAKY_SLOPE, OutputActivation::Sigmoid, rng)?,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.input_dim() != 2 || net.output_dim() != 1 || net.output_activation() != OutputActivation::Sigmoid {
            return Err(Error::Config("classifier must map 2 inputs to one sigmoid output".into()));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn logits(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + 8192).min(x.nrows());
            let l = self.net.eval_logits(&x.slice(s![start..end, ..]).to_owned())?;
            out.slice_mut(s![start..end]).assign(&l.column(0));
            start = end;
        }
        Ok(out)
    }

    /// Classifier output `f(x)`, the probability of the data class.
    pub fn prob(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.logits(x)?.mapv(sigmoid_scalar))
    }

    /// Weights for each row and the number of clipped events.
    pub fn weights(&self, x: &Array2<f64>) -> Result<(Array1<f64>, usize)> {
        let mut clipped = 0;
        let w = self.logits(x)?.mapv(|l| {
            let (w, c) = weight_from_logit(l);
            clipped += c as usize;
            w
        });
        Ok((w, clipped))
    }

    /// Recorded clipped `log w(x)` as an `n × 1` column; parameters frozen.
    pub fn log_weight_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (logit, _) = self.net.forward_logits(tape, x, ParamMode::Frozen)?;
        let (lo, hi) = log_weight_bounds();
        Ok(tape.clamp(logit, lo, hi))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new();
        ckpt.push("classifier", self.net.clone());
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let net = ckpt
            .get("classifier")
            .cloned()
            .ok_or_else(|| Error::Config(format!("{} holds no classifier", path.display())))?;
        Self::from_net(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTrainConfig {
    pub arch: ClassifierArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub holdout_frac: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::default(),
            epochs: 50,
            batch_size: 2000,
            adam: AdamConfig {
                lr: 1e-3,
                gamma: 0.999,
                ..AdamConfig::default()
            },
            holdout_frac: 0.05,
        }
    }
}

/// Held-out calibration: per bin of predicted `f`, the mean prediction and
/// the observed fraction of data-class events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_prediction: f64,
    pub data_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassifierHistory {
    pub train_bce: Vec<f64>,
    pub holdout_bce: Vec<f64>,
    pub holdout_accuracy: f64,
    pub calibration: Vec<CalibrationBin>,
}

impl ClassifierHistory {
    pub fn final_holdout_bce(&self) -> Option<f64> {
        self.holdout_bce.last().copied()
    }
}

/// Mean binary cross-entropy of logits against 0/1 labels.
pub fn bce_from_logits(logits: &Array1<f64>, labels: &Array1<f64>) -> f64 {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| -(y * log_sigmoid_scalar(l) + (1.0 - y) * log_sigmoid_scalar(-l)))
        .sum::<f64>()
        / n
}

fn calibration(probs: &Array1<f64>, labels: &Array1<f64>, bins: usize) -> Vec<CalibrationBin> {
    let mut count = vec![0usize; bins];
    let mut pred = vec![0.0; bins];
    let mut pos = vec![0.0; bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        pred[b] += p;
        pos[b] += y;
    }
    (0..bins)
        .map(|b| CalibrationBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count: count[b],
            mean_prediction: if count[b] > 0 { pred[b] / count[b] as f64 } else { f64::NAN },
            data_fraction: if count[b] > 0 { pos[b] / count[b] as f64 } else { f64::NAN },
        })
        .collect()
}

fn subsample<R: Rng + ?Sized>(x: &Array2<f64>, n: usize, rng: &mut R) -> Array2<f64> {
    if x.nrows() == n {
        return x.clone();
    }
    let mut idx = sample_indices(rng, x.nrows(), n).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

fn labelled(x: &Array2<f64>, label: f64) -> Array2<f64> {
    let y = Array2::from_elem((x.nrows(), 1), label);
    concatenate![Axis(1), x.view(), y.view()]
}

/// Trains a classifier with BCE on a balanced mixture (data = 1, generated = 0).
pub fn train_classifier<R: Rng + ?Sized>(
    generated: &Array2<f64>,
    data: &Array2<f64>,
    config: &ClassifierTrainConfig,
    rng: &mut R,
) -> Result<(Classifier, ClassifierHistory)> {
    if generated.nrows() == 0 || data.nrows() == 0 {
        return Err(Error::Config("classifier needs non-empty sample sets".into()));
    }
    for (name, x) in [("generated", generated), ("data", data)] {
        if x.ncols() != 2 {
            return Err(Error::shape("classifier input", 2, x.ncols()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{name} classifier samples"),
            });
        }
    }
    let n = generated.nrows().min(data.nrows());
    if generated.nrows() != data.nrows() {
        log::info!("classifier: subsampling to {n} events per class");
    }
    let mixture = concatenate![
        Axis(0),
        labelled(&subsample(generated, n, rng), 0.0).view(),
        labelled(&subsample(data, n, rng), 1.0).view()
    ];
    let (train, holdout) = split_holdout(&mixture, config.holdout_frac, rng)?;
    let monitor = if holdout.nrows() > 0 { &holdout } else { &train };
    let mon_x = monitor.slice(s![.., 0..2]).to_owned();
    let mon_y = monitor.column(2).to_owned();

    let mut clf = Classifier::new(config.arch, rng)?;
    let mut adam = Adam::new(config.adam, &clf.net.params());
    let mut history = ClassifierHistory::default();
    for epoch in 0..config.epochs {
        let (mut total, mut rows) = (0.0, 0usize);
        for batch in batches(&train, config.batch_size, rng)? {
            let mut tape = Tape::new();
            let x = tape.constant(batch.slice(s![.., 0..2]).to_owned());
            let y = batch.slice(s![.., 2..3]).to_owned();
            let not_y = y.mapv(|v| 1.0 - v);
            let (logit, vars) = clf.net.forward_logits(&mut tape, x, ParamMode::Track)?;
            let loss = bce_tape(&mut tape, logit, y, not_y);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    stage: "classifier",
                    epoch,
                    reason: format!("training loss {value}"),
                });
            }
            total += value * batch.nrows() as f64;
            rows += batch.nrows();
            let grads = tape.backward(loss)?;
            adam.step(clf.net.params_mut(), &vars.gradients(&tape, &grads))?;
        }
        adam.end_epoch();
        let held = bce_from_logits(&clf.logits(&mon_x)?, &mon_y);
        if !held.is_finite() {
            return Err(Error::Diverged {
                stage: "classifier",
                epoch,
                reason: format!("held-out loss {held}"),
            });
        }
        history.train_bce.push(total / rows.max(1) as f64);
        history.holdout_bce.push(held);
        log::info!("classifier epoch {}: train bce {:.5}, held-out bce {:.5}", epoch + 1, total / rows.max(1) as f64, held);
    }
    let probs = clf.prob(&mon_x)?;
    history.holdout_accuracy = probs
        .iter()
        .zip(&mon_y)
        .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
        .count() as f64
        / mon_y.len().max(1) as f64;
    history.calibration = calibration(&probs, &mon_y, 10);
    for b in history.calibration.iter().filter(|b| b.count > 0) {
        log::debug!(
            "calibration [{:.1},{:.1}): n={} predicted {:.3} observed {:.3}",
            b.lo,
            b.hi,
            b.count,
            b.mean_prediction,
            b.data_fraction
        );
    }
    Ok((clf, history))
}

fn bce_tape(tape: &mut Tape, logit: Var, y: Array2<f64>, not_y: Array2<f64>) -> Var {
    let y = tape.constant(y);
    let not_y = tape.constant(not_y);
    let lp = tape.log_sigmoid(logit);
    let neg = tape.neg(logit);
    let ln = tape.log_sigmoid(neg);
    let a = tape.mul(y, lp);
    let b = tape.mul(not_y, ln);
    let ll = tape.add(a, b);
    let m = tape.mean(ll);
    tape.neg(m)
}

/// Latent points with their generated images and pulled-back weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLatentSet {
    pub z: Array2<f64>,
    pub x: Array2<f64>,
    pub w: Array1<f64>,
    pub n_clipped: usize,
}

impl WeightedLatentSet {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn mean_weight(&self) -> f64 {
        self.w.mean().unwrap_or(f64::NAN)
    }

    pub fn max_weight(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_rows(&self) -> Array2<f64> {
        let w = self.w.view().insert_axis(Axis(1));
        concatenate![Axis(1), self.z.view(), self.x.view(), w]
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &WEIGHTED_CSV_HEADER, &self.to_rows())
    }

    /// Reads a weighted-sample CSV; the clip count is recomputed from weights at the cap.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let rows = read_csv_expect(path, &WEIGHTED_CSV_HEADER)?;
        let w = rows.column(4).to_owned();
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Contract(format!("{}: weights must be finite and non-negative", path.display())));
        }
        Ok(Self {
            z: rows.slice(s![.., 0..2]).to_owned(),
            x: rows.slice(s![.., 2..4]).to_owned(),
            n_clipped: w.iter().filter(|&&v| v >= W_MAX).count(),
            w,
        })
    }
}

/// Assigns to each latent point the weight of its image `g(z)`.
pub fn pull_back(classifier: &Classifier, flow: &FlowModel, z: &Array2<f64>) -> Result<WeightedLatentSet> {
    let (x, _) = flow.forward(z)?;
    let (w, n_clipped) = classifier.weights(&x)?;
    if n_clipped > 0 {
        log::warn!("{n_clipped} of {} weights clipped", w.len());
    }
    Ok(WeightedLatentSet {
        z: z.clone(),
        x,
        w,
        n_clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{sample_latent, FlowArch};
    use crate::nn::Dense;
    use crate::rng::stream_rng;

    fn constant_classifier(logit: f64) -> Classifier {
        let mut out = Dense::zeros(4, 1);
        out.bias[[0, 0]] = logit;
        let net = Mlp::from_layers(vec![Dense::zeros(2, 4), out], DEFAULT_LEAKY_SLOPE, OutputActivation::Sigmoid).unwrap();
        Classifier::from_net(net).unwrap()
    }

    #[test]
    fn weight_arithmetic() {
        assert_eq!(dctr_weight(0.5), (1.0, false));
        let (w, c) = dctr_weight(0.8);
        assert!((w - 4.0).abs() < 1e-12 && !c);
        assert_eq!(dctr_weight(1.0 - 1e-12), (W_MAX, true));
        let (w, c) = dctr_weight(0.0);
        assert!(c && (w - F_FLOOR / (1.0 - F_FLOOR)).abs() < 1e-18);
        for l in [-3.0, -0.2, 0.0, 1.5, 6.0] {
            let (a, _) = weight_from_logit(l);
            let (b, _) = dctr_weight(sigmoid_scalar(l));
            assert!((a - b).abs() < 1e-9 * b, "{l}: {a} vs {b}");
        }
        assert!(weight_from_logit(30.0).1);
        assert_eq!(weight_from_logit(30.0).0, W_MAX);
    }

    #[test]
    fn untrained_constant_classifier_gives_unit_weights() {
        let clf = constant_classifier(0.0);
        let mut rng = stream_rng(1, 0);
        let flow = FlowModel::new(FlowArch::new(2, 4), &mut rng).unwrap();
        let z = sample_latent(100, &mut rng);
        let set = pull_back(&clf, &flow, &z).unwrap();
        assert!(set.w.iter().all(|&w| w == 1.0));
        assert_eq!(set.n_clipped, 0);
        // The weight of z is the weight of its image.
        let (direct, _) = clf.weights(&set.x).unwrap();
        assert_eq!(direct, set.w);
    }

    #[test]
    fn bce_matches_tape_loss() {
        let logits = Array1::from(vec![-2.0, 0.3, 1.7, -0.1]);
        let labels = Array1::from(vec![0.0, 1.0, 1.0, 0.0]);
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone().insert_axis(Axis(1)));
        let y = labels.clone().insert_axis(Axis(1));
        let not_y = y.mapv(|v| 1.0 - v);
        let loss = bce_tape(&mut tape, l, y, not_y);
        let by_hand: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(&l, &y)| {
                let f = 1.0 / (1.0 + (-l as f64).exp());
                -(y * f.ln() + (1.0 - y) * (1.0 - f).ln())
            })
            .sum::<f64>()
            / 4.0;
        assert!((tape.scalar(loss) - by_hand).abs() < 1e-12);
        assert!((bce_from_logits(&logits, &labels) - by_hand).abs() < 1e-12);
    }

    #[test]
    fn separable_classes_are_separated() {
        let mut rng = stream_rng(2, 0);
        let a = sample_latent(3000, &mut rng) * 0.3 - 2.0;
        let b = sample_latent(3000, &mut rng) * 0.3 + 2.0;
        let config = ClassifierTrainConfig {
            arch: ClassifierArch {
                hidden_layers: 2,
                units: 16,
            },
            epochs: 10,
            batch_size: 200,
            ..ClassifierTrainConfig::default()
        };
        let (_, hist) = train_classifier(&a, &b, &config, &mut rng).unwrap();
        assert!(hist.holdout_accuracy > 0.99, "{}", hist.holdout_accuracy);
        assert!(hist.final_holdout_bce().unwrap() < 0.1);
    }

    #[test]
    fn weighted_csv_round_trip() {
        let mut rng = stream_rng(3, 0);
        let z = sample_latent(20, &mut rng);
        let set = WeightedLatentSet {
            x: &z * 2.0,
            w: Array1::from_shape_fn(20, |i| 0.1 * i as f64 + 0.05),
            z,
            n_clipped: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weighted.csv");
        set.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("z0,z1,x0,x1,w\n"));
        assert_eq!(WeightedLatentSet::load_csv(&path).unwrap(), set);
    }

    #[test]
    fn rejects_empty_input() {
        let mut rng = stream_rng(4, 0);
        let x = sample_latent(10, &mut rng);
        let empty = Array2::zeros((0, 2));
        let config = ClassifierTrainConfig::default();
        assert!(train_classifier(&empty, &x, &config, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let clf = Classifier::new(ClassifierArch { hidden_layers: 2, units: 5 }, &mut stream_rng(5, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        clf.save(&path).unwrap();
        assert_eq!(Classifier::load(&path).unwrap(), clf);
    }
}
