//! RealNVP flow on ℝ²: the baseline generator `g` with an exact density.
//!
//! Each coupling block keeps one coordinate fixed and applies an affine map
//! to the other, with scale and shift predicted from the fixed coordinate:
//!
//! ```text
//! x_c = z_c
//! x_d = z_d · exp(s(z_c)) + t(z_c),   s = s_max · tanh(raw / s_max)
//! ```
//!
//! Blocks alternate which coordinate is fixed. The final layers of `s` and
//! `t` start at zero, so a fresh model is the identity map.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{batches, split_holdout};
use crate::error::{Error, Result};
use crate::nn::{
    Adam, AdamConfig, Checkpoint, Mlp, OutputActivation, ParamMode, ParamVars, Parameterized, Tape, Var,
    DEFAULT_LEAKY_SLOPE,
};

/// Rows evaluated at once outside training, to bound memory.
const EVAL_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowArch {
    pub blocks: usize,
    pub hidden_layers: usize,
    pub units: usize,
    /// Bound of the soft clamp on log-scales.
    pub s_max: f64,
}

impl FlowArch {
    pub fn new(blocks: usize, units: usize) -> Self {
        Self {
            blocks,
            hidden_layers: 3,
            units,
            s_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    /// Coordinate passed through unchanged; the other one is transformed.
    cond: usize,
    s_net: Mlp,
    t_net: Mlp,
    s_max: f64,
}

impl CouplingBlock {
    pub fn new(cond: usize, s_net: Mlp, t_net: Mlp, s_max: f64) -> Result<Self> {
        if cond > 1 {
            return Err(Error::Config(format!("conditioning coordinate {cond} not in {{0,1}}")));
        }
        for net in [&s_net, &t_net] {
            if net.input_dim() != 1 || net.output_dim() != 1 {
                return Err(Error::shape("coupling subnet", "1 -> 1", format!("{} -> {}", net.input_dim(), net.output_dim())));
            }
        }
        if !(s_max > 0.0) {
            return Err(Error::Config(format!("s_max must be positive, got {s_max}")));
        }
        Ok(Self { cond, s_net, t_net, s_max })
    }

    pub fn cond(&self) -> usize {
        self.cond
    }

    pub fn transformed(&self) -> usize {
        1 - self.cond
    }

    pub fn s_net(&self) -> &Mlp {
        &self.s_net
    }

    pub fn t_net(&self) -> &Mlp {
        &self.t_net
    }

    fn scale_shift(&self, fixed: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let m = self.s_max;
        let s = self.s_net.eval_logits(fixed)?.mapv(|r| m * (r / m).tanh());
        let t = self.t_net.eval_logits(fixed)?;
        Ok((s, t))
    }

    /// Returns the transformed points and the per-row log-determinant.
    pub fn forward(&self, z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (c, d) = (self.cond, self.transformed());
        let fixed = z.slice(s![.., c..c + 1]).to_owned();
        let (s, t) = self.scale_shift(&fixed)?;
        let mut x = z.clone();
        let mut col = x.column_mut(d);
        for (i, v) in col.iter_mut().enumerate() {
            *v = *v * s[[i, 0]].exp() + t[[i, 0]];
        }
        Ok((x, s.column(0).to_owned()))
    }

    pub fn inverse(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (c, d) = (self.cond, self.transformed());
        let fixed = x.slice(s![.., c..c + 1]).to_owned();
        let (s, t) = self.scale_shift(&fixed)?;
        let mut z = x.clone();
        let mut col = z.column_mut(d);
        for (i, v) in col.iter_mut().enumerate() {
            *v = (*v - t[[i, 0]]) * (-s[[i, 0]]).exp();
        }
        Ok((z, s.column(0).mapv(|v| -v)))
    }

    fn scale_shift_tape(&self, tape: &mut Tape, fixed: Var, mode: ParamMode) -> Result<(Var, Var, ParamVars)> {
        let (raw, mut vars) = self.s_net.forward_logits(tape, fixed, mode)?;
        let u = tape.scale(raw, 1.0 / self.s_max);
        let u = tape.tanh(u);
        let s = tape.scale(u, self.s_max);
        let (t, tv) = self.t_net.forward_logits(tape, fixed, mode)?;
        vars.extend(tv);
        Ok((s, t, vars))
    }

    fn forward_tape(&self, tape: &mut Tape, z: Var, mode: ParamMode) -> Result<(Var, Var, ParamVars)> {
        let fixed = tape.column(z, self.cond);
        let moving = tape.column(z, self.transformed());
        let (s, t, vars) = self.scale_shift_tape(tape, fixed, mode)?;
        let e = tape.exp(s);
        let scaled = tape.mul(moving, e);
        let moved = tape.add(scaled, t);
        let x = self.assemble(tape, fixed, moved);
        Ok((x, s, vars))
    }

    fn inverse_tape(&self, tape: &mut Tape, x: Var, mode: ParamMode) -> Result<(Var, Var, ParamVars)> {
        let fixed = tape.column(x, self.cond);
        let moving = tape.column(x, self.transformed());
        let (s, t, vars) = self.scale_shift_tape(tape, fixed, mode)?;
        let shifted = tape.sub(moving, t);
        let neg_s = tape.neg(s);
        let e = tape.exp(neg_s);
        let moved = tape.mul(shifted, e);
        let z = self.assemble(tape, fixed, moved);
        Ok((z, neg_s, vars))
    }

    fn assemble(&self, tape: &mut Tape, fixed: Var, moved: Var) -> Var {
        if self.cond == 0 {
            tape.hstack(&[fixed, moved])
        } else {
            tape.hstack(&[moved, fixed])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    arch: FlowArch,
    blocks: Vec<CouplingBlock>,
}

fn check_points(x: &Array2<f64>, context: &str) -> Result<()> {
    if x.ncols() != 2 {
        return Err(Error::shape("flow input", 2, x.ncols()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: context.to_string(),
        });
    }
    Ok(())
}

/// Standard-normal log-density on ℝ² for each row.
pub fn standard_normal_log_density(z: &Array2<f64>) -> Array1<f64> {
    z.rows()
        .into_iter()
        .map(|r| -0.5 * (r[0] * r[0] + r[1] * r[1]) - (2.0 * PI).ln())
        .collect()
}

/// Draw `n` points from the 2D standard normal.
pub fn sample_latent<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 2), || rng.sample(StandardNormal))
}

impl FlowModel {
    /// Fresh model that is exactly the identity map.
    pub fn new<R: Rng + ?Sized>(arch: FlowArch, rng: &mut R) -> Result<Self> {
        if arch.blocks == 0 || arch.units == 0 || arch.hidden_layers == 0 {
            return Err(Error::Config(format!("invalid flow architecture {arch:?}")));
        }
        let mut widths = vec![1];
        widths.extend(std::iter::repeat(arch.units).take(arch.hidden_layers));
        widths.push(1);
        let mut blocks = Vec::with_capacity(arch.blocks);
        for k in 0..arch.blocks {
            let mut s_net = Mlp::new(&widths, DEFAULT_LEAKY_SLOPE, OutputActivation::Identity, rng)?;
            let mut t_net = Mlp::new(&widths, DEFAULT_LEAKY_SLOPE, OutputActivation::Identity, rng)?;
            s_net.zero_output_layer();
            t_net.zero_output_layer();
            blocks.push(CouplingBlock::new(k % 2, s_net, t_net, arch.s_max)?);
        }
        Ok(Self { arch, blocks })
    }

    pub fn from_blocks(arch: FlowArch, blocks: Vec<CouplingBlock>) -> Result<Self> {
        if blocks.len() != arch.blocks {
            return Err(Error::shape("flow blocks", arch.blocks, blocks.len()));
        }
        Ok(Self { arch, blocks })
    }

    pub fn arch(&self) -> FlowArch {
        self.arch
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CouplingBlock] {
        &mut self.blocks
    }

    fn chunked<F>(x: &Array2<f64>, mut f: F) -> Result<(Array2<f64>, Array1<f64>)>
    where
        F: FnMut(&Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)>,
    {
        let mut out = Array2::zeros(x.raw_dim());
        let mut ld = Array1::zeros(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + EVAL_CHUNK).min(x.nrows());
            let (y, l) = f(&x.slice(s![start..end, ..]).to_owned())?;
            out.slice_mut(s![start..end, ..]).assign(&y);
            ld.slice_mut(s![start..end]).assign(&l);
            start = end;
        }
        Ok((out, ld))
    }

    /// `x = g(z)` and `log|det ∂g/∂z|` per row.
    pub fn forward(&self, z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        check_points(z, "flow forward input")?;
        Self::chunked(z, |chunk| {
            let mut x = chunk.clone();
            let mut logdet = Array1::zeros(x.nrows());
            for (k, block) in self.blocks.iter().enumerate() {
                let (y, l) = block.forward(&x)?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("flow forward, block {k}"),
                    });
                }
                x = y;
                logdet += &l;
            }
            Ok((x, logdet))
        })
    }

    /// `z = g⁻¹(x)` and `log|det ∂g⁻¹/∂x|` per row.
    pub fn inverse(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        check_points(x, "flow inverse input")?;
        Self::chunked(x, |chunk| {
            let mut z = chunk.clone();
            let mut logdet = Array1::zeros(z.nrows());
            for (k, block) in self.blocks.iter().enumerate().rev() {
                let (y, l) = block.inverse(&z)?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("flow inverse, block {k}"),
                    });
                }
                z = y;
                logdet += &l;
            }
            Ok((z, logdet))
        })
    }

    pub fn log_prob(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let (z, logdet) = self.inverse(x)?;
        Ok(standard_normal_log_density(&z) + logdet)
    }

    /// Returns `(z, x)` with `z ~ N(0, I)` and `x = g(z)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Array2<f64>, Array2<f64>)> {
        let z = sample_latent(n, rng);
        let (x, _) = self.forward(&z)?;
        Ok((z, x))
    }

    /// Recorded `g(z)`; returns `(x, logdet column)`.
    pub fn forward_tape(&self, tape: &mut Tape, z: Var, mode: ParamMode) -> Result<(Var, Var, ParamVars)> {
        let mut vars = ParamVars::default();
        let mut x = z;
        let mut logdet: Option<Var> = None;
        for block in &self.blocks {
            let (y, s, v) = block.forward_tape(tape, x, mode)?;
            vars.extend(v);
            x = y;
            logdet = Some(match logdet {
                Some(acc) => tape.add(acc, s),
                None => s,
            });
        }
        Ok((x, logdet.expect("at least one block"), vars))
    }

    /// Recorded `log p_g(x)` as an `n × 1` column.
    pub fn log_prob_tape(&self, tape: &mut Tape, x: Var, mode: ParamMode) -> Result<(Var, ParamVars)> {
        let mut per_block = Vec::with_capacity(self.blocks.len());
        let mut z = x;
        let mut logdet: Option<Var> = None;
        for block in self.blocks.iter().rev() {
            let (y, l, v) = block.inverse_tape(tape, z, mode)?;
            per_block.push(v);
            z = y;
            logdet = Some(match logdet {
                Some(acc) => tape.add(acc, l),
                None => l,
            });
        }
        // Parameter order must follow `params()`, i.e. block order.
        let mut vars = ParamVars::default();
        for v in per_block.into_iter().rev() {
            vars.extend(v);
        }
        let sq = tape.mul(z, z);
        let r2 = tape.sum_cols(sq);
        let half = tape.scale(r2, -0.5);
        let base = tape.add_scalar(half, -(2.0 * PI).ln());
        let lp = tape.add(base, logdet.expect("at least one block"));
        Ok((lp, vars))
    }

    /// Mean negative log-likelihood, the training objective.
    pub fn nll(&self, x: &Array2<f64>) -> Result<f64> {
        let lp = self.log_prob(x)?;
        Ok(-lp.mean().unwrap_or(f64::NAN))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (k, b) in self.blocks.iter().enumerate() {
            ckpt.push(format!("block{k}.s"), b.s_net.clone());
            ckpt.push(format!("block{k}.t"), b.t_net.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(arch: FlowArch, ckpt: &Checkpoint) -> Result<Self> {
        let mut blocks = Vec::with_capacity(arch.blocks);
        for k in 0..arch.blocks {
            let get = |name: String| {
                ckpt.get(&name)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("checkpoint lacks network '{name}'")))
            };
            blocks.push(CouplingBlock::new(k % 2, get(format!("block{k}.s"))?, get(format!("block{k}.t"))?, arch.s_max)?);
        }
        if ckpt.entries.len() != 2 * arch.blocks {
            return Err(Error::shape("flow checkpoint entries", 2 * arch.blocks, ckpt.entries.len()));
        }
        Self::from_blocks(arch, blocks)
    }

    /// Writes the checkpoint to `path` and the metadata to `path` with a `.json` extension.
    pub fn save(&self, path: &Path, meta: &FlowMeta) -> Result<()> {
        self.to_checkpoint().save(path)?;
        let json = serde_json::to_string_pretty(meta)?;
        let side = sidecar(path);
        fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    pub fn load(path: &Path) -> Result<(Self, FlowMeta)> {
        let side = sidecar(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: FlowMeta = serde_json::from_str(&text)?;
        let model = Self::from_checkpoint(meta.arch, &Checkpoint::load(path)?)?;
        Ok((model, meta))
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl Parameterized for FlowModel {
    fn params(&self) -> Vec<&Array2<f64>> {
        self.blocks
            .iter()
            .flat_map(|b| b.s_net.params().into_iter().chain(b.t_net.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.s_net.params_mut().into_iter().chain(b.t_net.params_mut()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMeta {
    pub arch: FlowArch,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub holdout_frac: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 2000,
            adam: AdamConfig {
                lr: 1e-3,
                weight_decay: 1e-5,
                gamma: 0.999,
                ..AdamConfig::default()
            },
            holdout_frac: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowHistory {
    pub initial_holdout_nll: f64,
    pub train_nll: Vec<f64>,
    pub holdout_nll: Vec<f64>,
}

impl FlowHistory {
    pub fn final_holdout_nll(&self) -> f64 {
        self.holdout_nll.last().copied().unwrap_or(self.initial_holdout_nll)
    }
}

/// Maximum-likelihood training with a held-out split for monitoring.
///
/// On a non-finite loss the model keeps the parameters of the last finite
/// step and a [`Error::Diverged`] is returned.
pub fn train_flow<R: Rng + ?Sized>(
    model: &mut FlowModel,
    data: &Array2<f64>,
    config: &FlowTrainConfig,
    rng: &mut R,
) -> Result<FlowHistory> {
    check_points(data, "flow training data")?;
    let (train, holdout) = split_holdout(data, config.holdout_frac, rng)?;
    let monitor = if holdout.nrows() > 0 { &holdout } else { &train };
    let mut history = FlowHistory {
        initial_holdout_nll: model.nll(monitor)?,
        ..FlowHistory::default()
    };
    let mut adam = Adam::new(config.adam, &model.params());
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        let mut rows = 0usize;
        for batch in batches(&train, config.batch_size, rng)? {
            let mut tape = Tape::new();
            let x = tape.constant(batch);
            let (lp, vars) = model.log_prob_tape(&mut tape, x, ParamMode::Track)?;
            let mean = tape.mean(lp);
            let loss = tape.neg(mean);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    stage: "flow",
                    epoch,
                    reason: format!("training loss {value}"),
                });
            }
            let n = tape.value(x).nrows();
            total += value * n as f64;
            rows += n;
            let grads = tape.backward(loss)?;
            adam.step(model.params_mut(), &vars.gradients(&tape, &grads))?;
        }
        adam.end_epoch();
        let held = model.nll(monitor).unwrap_or(f64::NAN);
        if !held.is_finite() {
            return Err(Error::Diverged {
                stage: "flow",
                epoch,
                reason: format!("held-out loss {held}"),
            });
        }
        history.train_nll.push(total / rows.max(1) as f64);
        history.holdout_nll.push(held);
        log::info!("flow epoch {}: train nll {:.4}, held-out nll {:.4}", epoch + 1, total / rows.max(1) as f64, held);
    }
    if config.epochs > 0 {
        log::info!(
            "flow held-out nll {:.4} -> {:.4} ({:+.4})",
            history.initial_holdout_nll,
            history.final_holdout_nll(),
            history.final_holdout_nll() - history.initial_holdout_nll
        );
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::rng::stream_rng;

    fn random_model(seed: u64, blocks: usize) -> FlowModel {
        let mut rng = stream_rng(seed, 0);
        let arch = FlowArch::new(blocks, 8);
        let mut model = FlowModel::new(arch, &mut rng).unwrap();
        for b in model.blocks_mut() {
            for net in [&mut b.s_net, &mut b.t_net] {
                let fresh = Mlp::new(&[1, 8, 8, 8, 1], DEFAULT_LEAKY_SLOPE, OutputActivation::Identity, &mut rng).unwrap();
                let mut layers = fresh.layers().to_vec();
                for l in &mut layers {
                    l.weight *= 0.5;
                }
                *net = Mlp::from_layers(layers, DEFAULT_LEAKY_SLOPE, OutputActivation::Identity).unwrap();
            }
        }
        model
    }

    fn constant_block(cond: usize, s: f64, t: f64) -> CouplingBlock {
        let s_max = 4.0;
        let mk = |bias: f64| {
            let mut out = Dense::zeros(1, 1);
            out.bias[[0, 0]] = bias;
            Mlp::from_layers(vec![Dense::zeros(1, 1), out], DEFAULT_LEAKY_SLOPE, OutputActivation::Identity).unwrap()
        };
        CouplingBlock::new(cond, mk(s_max * (s / s_max).atanh()), mk(t), s_max).unwrap()
    }

    fn points(seed: u64, n: usize) -> Array2<f64> {
        sample_latent(n, &mut stream_rng(seed, 1)) * 1.5
    }

    #[test]
    fn fresh_model_is_identity() {
        let model = FlowModel::new(FlowArch::new(4, 16), &mut stream_rng(0, 0)).unwrap();
        let z = points(1, 50);
        let (x, ld) = model.forward(&z).unwrap();
        assert_eq!(x, z);
        assert!(ld.iter().all(|&v| v == 0.0));
        let lp = model.log_prob(&z).unwrap();
        let expected = standard_normal_log_density(&z);
        assert!((lp - expected).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn constant_scale_block_doubles_coordinate() {
        let block = constant_block(0, 2f64.ln(), 0.0);
        let z = Array2::from_shape_vec((2, 2), vec![0.3, 1.0, -1.0, -0.25]).unwrap();
        let (x, ld) = block.forward(&z).unwrap();
        for i in 0..2 {
            assert!((x[[i, 0]] - z[[i, 0]]).abs() < 1e-15);
            assert!((x[[i, 1]] - 2.0 * z[[i, 1]]).abs() < 1e-12);
            assert!((ld[i] - 2f64.ln()).abs() < 1e-12);
        }
        // Density halves where the measure doubles.
        let model = FlowModel::from_blocks(FlowArch::new(1, 1), vec![block]).unwrap();
        let lp = model.log_prob(&x).unwrap();
        let base = standard_normal_log_density(&z);
        for i in 0..2 {
            assert!((lp[i] - (base[i] - 2f64.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let model = random_model(3, 6);
        let z = points(4, 200);
        let (x, ld) = model.forward(&z).unwrap();
        let (back, ld_inv) = model.inverse(&x).unwrap();
        assert!((&back - &z).iter().all(|d| d.abs() < 1e-8));
        assert!((&ld + &ld_inv).iter().all(|d| d.abs() < 1e-8));
        assert!(ld.iter().any(|v| v.abs() > 1e-3), "test model should not be volume preserving");
    }

    #[test]
    fn logdet_matches_numerical_jacobian() {
        let model = random_model(5, 6);
        let z = points(6, 20);
        let (_, ld) = model.forward(&z).unwrap();
        let h = 1e-6;
        for i in 0..z.nrows() {
            let mut jac = [[0.0; 2]; 2];
            for j in 0..2 {
                let mut plus = z.slice(s![i..i + 1, ..]).to_owned();
                let mut minus = plus.clone();
                plus[[0, j]] += h;
                minus[[0, j]] -= h;
                let (xp, _) = model.forward(&plus).unwrap();
                let (xm, _) = model.forward(&minus).unwrap();
                for r in 0..2 {
                    jac[r][j] = (xp[[0, r]] - xm[[0, r]]) / (2.0 * h);
                }
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            assert!((det.abs().ln() - ld[i]).abs() < 1e-5, "row {i}: {} vs {}", det.abs().ln(), ld[i]);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let model = random_model(7, 4);
        let (lo, hi, n) = (-9.0, 9.0, 400usize);
        let h = (hi - lo) / n as f64;
        let grid = Array2::from_shape_fn((n * n, 2), |(k, c)| {
            let idx = if c == 0 { k / n } else { k % n };
            lo + (idx as f64 + 0.5) * h
        });
        let total: f64 = model.log_prob(&grid).unwrap().mapv(f64::exp).sum() * h * h;
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn tape_paths_agree_with_eval() {
        let model = random_model(8, 4);
        let x = points(9, 30);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (lp, _) = model.log_prob_tape(&mut tape, xv, ParamMode::Frozen).unwrap();
        let eval = model.log_prob(&x).unwrap();
        assert!((tape.value(lp).column(0).to_owned() - &eval).iter().all(|d| d.abs() < 1e-12));
        let zv = tape.constant(x.clone());
        let (fx, ld, _) = model.forward_tape(&mut tape, zv, ParamMode::Frozen).unwrap();
        let (ex, eld) = model.forward(&x).unwrap();
        assert!((tape.value(fx) - &ex).iter().all(|d| d.abs() < 1e-12));
        assert!((tape.value(ld).column(0).to_owned() - &eld).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn objective_is_negative_mean_log_prob() {
        let model = random_model(10, 3);
        let x = points(11, 64);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (lp, _) = model.log_prob_tape(&mut tape, xv, ParamMode::Track).unwrap();
        let m = tape.mean(lp);
        let loss = tape.neg(m);
        assert_eq!(tape.scalar(loss), -model.log_prob(&x).unwrap().mean().unwrap());
        assert!((tape.scalar(loss) - model.nll(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut model = random_model(12, 2);
        let x = points(13, 16);
        let loss_of = |m: &FlowModel| m.nll(&x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (lp, vars) = model.log_prob_tape(&mut tape, xv, ParamMode::Track).unwrap();
        let m = tape.mean(lp);
        let loss = tape.neg(m);
        let grads = vars.gradients(&tape, &tape.backward(loss).unwrap());
        let h = 1e-6;
        for (p, g) in [(0usize, (0, 0)), (2, (2, 5)), (9, (0, 3)), (14, (0, 0)), (15, (0, 0)), (22, (0, 4))] {
            let analytic = grads[p][[g.0, g.1]];
            let orig = model.params()[p][[g.0, g.1]];
            model.params_mut()[p][[g.0, g.1]] = orig + h;
            let up = loss_of(&model);
            model.params_mut()[p][[g.0, g.1]] = orig - h;
            let down = loss_of(&model);
            model.params_mut()[p][[g.0, g.1]] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {p}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut model = random_model(14, 2);
        let before = model.clone();
        let config = FlowTrainConfig {
            epochs: 0,
            ..FlowTrainConfig::default()
        };
        let hist = train_flow(&mut model, &points(15, 100), &config, &mut stream_rng(16, 0)).unwrap();
        assert_eq!(model, before);
        assert!(hist.holdout_nll.is_empty());
    }

    #[test]
    fn short_training_reduces_nll() {
        let mut rng = stream_rng(17, 0);
        let data = crate::data::DatasetKind::Gaussians.sample(4000, &mut rng).unwrap();
        let mut model = FlowModel::new(FlowArch::new(4, 16), &mut rng).unwrap();
        let config = FlowTrainConfig {
            epochs: 5,
            batch_size: 200,
            ..FlowTrainConfig::default()
        };
        let hist = train_flow(&mut model, &data, &config, &mut rng).unwrap();
        assert!(hist.final_holdout_nll() < hist.initial_holdout_nll - 0.3, "{hist:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = random_model(18, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.ckpt");
        let meta = FlowMeta {
            arch: model.arch(),
            seed: 18,
            epochs: 0,
        };
        model.save(&path, &meta).unwrap();
        assert!(path.with_extension("json").exists());
        let (back, m2) = FlowModel::load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(m2, meta);
    }

    #[test]
    fn rejects_bad_input() {
        let model = random_model(19, 2);
        assert!(model.forward(&Array2::zeros((3, 3))).is_err());
        let mut x = Array2::zeros((2, 2));
        x[[1, 0]] = f64::NAN;
        assert!(matches!(model.inverse(&x), Err(Error::NonFinite { .. })));
    }
}
