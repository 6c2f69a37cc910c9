//! Weighted GAN mapping an auxiliary normal space onto the reweighted latent
//! distribution, so that `g(Φ(y))` produces unweighted refined samples.
//!
//! Discriminator loss: `−Σ wᵢ log D(zᵢ) / Σ wᵢ − mean log(1 − D(Φ(y)))`.
//! Generator loss (non-saturating): `−mean log D(Φ(y))`.
//! Weights only enter the real term.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::metrics::{jsd, Bounds, Histogram2D};
use crate::nn::{
    log_sigmoid_scalar, Adam, AdamConfig, Checkpoint, Mlp, OutputActivation, ParamMode, ParamVars, Parameterized, Tape, Var,
    DEFAULT_LEAKY_SLOPE,
};
use crate::reweight::WeightedLatentSet;

/// Region and grid of the per-epoch latent JSD monitor.
pub const MONITOR_BOUNDS: Bounds = Bounds::new((-4.0, 4.0), (-4.0, 4.0));
const MONITOR_BINS: (usize, usize) = (32, 32);
const MONITOR_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinerArch {
    pub aux_dim: usize,
    pub hidden_layers: usize,
    pub units: usize,
}

impl Default for RefinerArch {
    fn default() -> Self {
        Self {
            aux_dim: 4,
            hidden_layers: 7,
            units: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerGan {
    generator: Mlp,
    discriminator: Mlp,
}

fn widths(input: usize, arch: &RefinerArch, output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat(arch.units).take(arch.hidden_layers));
    w.push(output);
    w
}

/// Draw auxiliary noise `y ~ N(0, I)` in `dim` dimensions.
pub fn sample_aux<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal))
}

impl RefinerGan {
    pub fn new<R: Rng + ?Sized>(arch: RefinerArch, rng: &mut R) -> Result<Self> {
        if arch.aux_dim == 0 {
            return Err(Error::Config("auxiliary dimension must be positive".into()));
        }
        let generator = Mlp::new(&widths(arch.aux_dim, &arch, 2), DEFAULT_LEAKY_SLOPE, OutputActivation::Identity, rng)?;
        let discriminator = Mlp::new(&widths(2, &arch, 1), DEFAULT_LEAKY_SLOPE, OutputActivation::Sigmoid, rng)?;
        Self::from_nets(generator, discriminator)
    }

    pub fn from_nets(generator: Mlp, discriminator: Mlp) -> Result<Self> {
        if generator.output_dim() != 2 {
            return Err(Error::shape("refiner generator output", 2, generator.output_dim()));
        }
        if discriminator.input_dim() != 2 || discriminator.output_dim() != 1 {
            return Err(Error::shape("refiner discriminator", "2 -> 1", format!("{} -> {}", discriminator.input_dim(), discriminator.output_dim())));
        }
        if discriminator.output_activation() != OutputActivation::Sigmoid {
            return Err(Error::Config("refiner discriminator needs a sigmoid output".into()));
        }
        Ok(Self { generator, discriminator })
    }

    pub fn aux_dim(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn generator(&self) -> &Mlp {
        &self.generator
    }

    pub fn discriminator(&self) -> &Mlp {
        &self.discriminator
    }

    /// `Φ(y)` for auxiliary points `y`.
    pub fn map(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((y.nrows(), 2));
        let mut start = 0;
        while start < y.nrows() {
            let end = (start + 8192).min(y.nrows());
            out.slice_mut(s![start..end, ..])
                .assign(&self.generator.eval(&y.slice(s![start..end, ..]).to_owned())?);
            start = end;
        }
        Ok(out)
    }

    /// Refined latent points `Φ(y)`, `y ~ N(0, I)`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        self.map(&sample_aux(n, self.aux_dim(), rng))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new();
        ckpt.push("generator", self.generator.clone());
        ckpt.push("discriminator", self.discriminator.clone());
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let get = |name: &str| {
            ckpt.get(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{} lacks network '{name}'", path.display())))
        };
        Self::from_nets(get("generator")?, get("discriminator")?)
    }
}

/// Discriminator and generator losses from discriminator outputs.
///
/// `d_real` and `d_fake` are probabilities `D(·)`; `w` weights the real term.
pub fn weighted_bce(d_real: &[f64], w: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    check_weights(w, d_real.len())?;
    if d_fake.is_empty() {
        return Err(Error::Config("no fake samples".into()));
    }
    let sw: f64 = w.iter().sum();
    let real = -d_real.iter().zip(w).map(|(&d, &wi)| wi * d.ln()).sum::<f64>() / sw;
    let fake = -d_fake.iter().map(|&d| (1.0 - d).ln()).sum::<f64>() / d_fake.len() as f64;
    let gen = -d_fake.iter().map(|&d| d.ln()).sum::<f64>() / d_fake.len() as f64;
    Ok((real + fake, gen))
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::shape("refiner weights", n, w.len()));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config("refiner weights must be finite and non-negative".into()));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::Config("all refiner weights are zero".into()));
    }
    Ok(())
}

/// Recorded discriminator loss from logits. `weights` of `None` is the plain
/// (unit-weight) BCE.
pub fn discriminator_loss_tape(tape: &mut Tape, real_logits: Var, weights: Option<&Array2<f64>>, fake_logits: Var) -> Var {
    let log_d_real = tape.log_sigmoid(real_logits);
    let real = match weights {
        Some(w) => {
            let sw = w.sum();
            let wv = tape.constant(w.clone());
            let weighted = tape.mul(wv, log_d_real);
            let total = tape.sum(weighted);
            tape.scale(total, -1.0 / sw)
        }
        None => {
            let m = tape.mean(log_d_real);
            tape.neg(m)
        }
    };
    let neg = tape.neg(fake_logits);
    let log_not_d_fake = tape.log_sigmoid(neg);
    let m = tape.mean(log_not_d_fake);
    let fake = tape.neg(m);
    tape.add(real, fake)
}

/// Recorded non-saturating generator loss from discriminator logits on fakes.
pub fn generator_loss_tape(tape: &mut Tape, fake_logits: Var) -> Var {
    let l = tape.log_sigmoid(fake_logits);
    let m = tape.mean(l);
    tape.neg(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinerTrainConfig {
    pub arch: RefinerArch,
    pub epochs: usize,
    pub batch_size: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Generator updates per epoch; `None` means one pass over the weighted set.
    pub updates_per_epoch: Option<usize>,
    pub adam: AdamConfig,
    /// Epochs in a row with discriminator loss below `collapse_loss` before aborting.
    pub collapse_epochs: usize,
    pub collapse_loss: f64,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        Self {
            arch: RefinerArch::default(),
            epochs: 200,
            batch_size: 2000,
            d_steps: 4,
            updates_per_epoch: None,
            adam: AdamConfig {
                lr: 1e-4,
                beta1: 0.5,
                beta2: 0.9,
                gamma: 0.999,
                ..AdamConfig::default()
            },
            collapse_epochs: 20,
            collapse_loss: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefinerHistory {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    /// JSD between refined latent samples and the weighted latent histogram.
    pub latent_jsd: Vec<f64>,
}

/// Cycles through shuffled rows, reshuffling after each pass.
struct RealSampler<'a> {
    z: &'a Array2<f64>,
    w: Option<&'a Array1<f64>>,
    order: Vec<usize>,
    pos: usize,
}

impl RealSampler<'_> {
    fn next<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> (Array2<f64>, Option<Array2<f64>>) {
        let mut idx = Vec::with_capacity(n);
        while idx.len() < n {
            if self.pos == self.order.len() {
                self.order = crate::data::permutation(self.z.nrows(), rng);
                self.pos = 0;
            }
            let take = (n - idx.len()).min(self.order.len() - self.pos);
            idx.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        let z = self.z.select(Axis(0), &idx);
        let w = self.w.map(|w| Array2::from_shape_fn((n, 1), |(i, _)| w[idx[i]]));
        (z, w)
    }
}

/// Trains on the weighted latent set. With `weighted = false` the weights are
/// ignored and the loss is the plain GAN loss.
pub fn train_refiner<R: Rng + ?Sized>(
    set: &WeightedLatentSet,
    weighted: bool,
    config: &RefinerTrainConfig,
    rng: &mut R,
) -> Result<(RefinerGan, RefinerHistory)> {
    if set.is_empty() {
        return Err(Error::Config("empty weighted latent set".into()));
    }
    check_weights(set.w.as_slice().expect("contiguous"), set.z.nrows())?;
    if config.batch_size == 0 || config.d_steps == 0 {
        return Err(Error::Config("refiner batch size and discriminator steps must be positive".into()));
    }
    let mut gan = RefinerGan::new(config.arch, rng)?;
    let mut g_opt = Adam::new(config.adam, &gan.generator.params());
    let mut d_opt = Adam::new(config.adam, &gan.discriminator.params());
    let updates = config
        .updates_per_epoch
        .unwrap_or_else(|| set.len().div_ceil(config.batch_size))
        .max(1);
    let target = Histogram2D::from_points(
        &set.z,
        weighted.then(|| set.w.as_slice().expect("contiguous")),
        MONITOR_BOUNDS,
        MONITOR_BINS,
    )?;
    let mut real = RealSampler {
        z: &set.z,
        w: weighted.then_some(&set.w),
        order: Vec::new(),
        pos: 0,
    };
    let mut history = RefinerHistory::default();
    let mut collapsed_for = 0;
    let aux = config.arch.aux_dim;
    let bs = config.batch_size;
    for epoch in 0..config.epochs {
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        for _ in 0..updates {
            for _ in 0..config.d_steps {
                let (z, w) = real.next(bs, rng);
                let fake = gan.generator.eval(&sample_aux(bs, aux, rng))?;
                let mut tape = Tape::new();
                let zr = tape.constant(z);
                let zf = tape.constant(fake);
                let (lr, vars) = gan.discriminator.forward_logits(&mut tape, zr, ParamMode::Track)?;
                let lf = forward_shared(&gan.discriminator, &mut tape, zf, &vars)?;
                let loss = discriminator_loss_tape(&mut tape, lr, w.as_ref(), lf);
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        stage: "refiner",
                        epoch,
                        reason: format!("discriminator loss {value}"),
                    });
                }
                d_sum += value;
                let grads = tape.backward(loss)?;
                d_opt.step(gan.discriminator.params_mut(), &vars.gradients(&tape, &grads))?;
            }
            let mut tape = Tape::new();
            let y = tape.constant(sample_aux(bs, aux, rng));
            let (fake, gvars) = gan.generator.forward(&mut tape, y, ParamMode::Track)?;
            let (lf, _) = gan.discriminator.forward_logits(&mut tape, fake, ParamMode::Frozen)?;
            let loss = generator_loss_tape(&mut tape, lf);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    stage: "refiner",
                    epoch,
                    reason: format!("generator loss {value}"),
                });
            }
            g_sum += value;
            let grads = tape.backward(loss)?;
            g_opt.step(gan.generator.params_mut(), &gvars.gradients(&tape, &grads))?;
        }
        g_opt.end_epoch();
        d_opt.end_epoch();
        let d_loss = d_sum / (updates * config.d_steps) as f64;
        let g_loss = g_sum / updates as f64;
        let monitor = gan.sample_latent(MONITOR_SAMPLES.min(set.len()), rng)?;
        let latent_jsd = jsd(&Histogram2D::from_points(&monitor, None, MONITOR_BOUNDS, MONITOR_BINS)?, &target)?;
        history.d_loss.push(d_loss);
        history.g_loss.push(g_loss);
        history.latent_jsd.push(latent_jsd);
        log::info!(
            "refiner epoch {}: d loss {:.4}, g loss {:.4}, latent jsd {:.4}",
            epoch + 1,
            d_loss,
            g_loss,
            latent_jsd
        );
        collapsed_for = if d_loss < config.collapse_loss { collapsed_for + 1 } else { 0 };
        if collapsed_for >= config.collapse_epochs {
            return Err(Error::Diverged {
                stage: "refiner",
                epoch,
                reason: format!("discriminator loss below {} for {collapsed_for} epochs", config.collapse_loss),
            });
        }
    }
    Ok((gan, history))
}

/// Runs `net` on a second input reusing already registered parameter leaves,
/// so both passes accumulate into the same gradients.
fn forward_shared(net: &Mlp, tape: &mut Tape, x: Var, vars: &ParamVars) -> Result<Var> {
    if tape.value(x).ncols() != net.input_dim() {
        return Err(Error::shape("mlp input", net.input_dim(), tape.value(x).ncols()));
    }
    let mut h = x;
    let last = net.layers().len() - 1;
    for i in 0..net.layers().len() {
        let z = tape.matmul_t(h, vars.0[2 * i]);
        let z = tape.add_row(z, vars.0[2 * i + 1]);
        h = if i < last { tape.leaky_relu(z, net.leaky_slope()) } else { z };
    }
    Ok(h)
}

/// Refined samples `g(Φ(y))`, `y ~ N(0, I)`.
pub fn refine_and_generate<R: Rng + ?Sized>(flow: &FlowModel, gan: &RefinerGan, n: usize, rng: &mut R) -> Result<Array2<f64>> {
    let z = gan.sample_latent(n, rng)?;
    Ok(flow.forward(&z)?.0)
}

/// Mean loss pair over discriminator outputs computed from logits, matching
/// the tape losses; used for reporting.
pub fn losses_from_logits(real: &Array1<f64>, w: &Array1<f64>, fake: &Array1<f64>) -> Result<(f64, f64)> {
    check_weights(w.as_slice().expect("contiguous"), real.len())?;
    let sw = w.sum();
    let r = -real.iter().zip(w).map(|(&l, &wi)| wi * log_sigmoid_scalar(l)).sum::<f64>() / sw;
    let n = fake.len().max(1) as f64;
    let f = -fake.iter().map(|&l| log_sigmoid_scalar(-l)).sum::<f64>() / n;
    let g = -fake.iter().map(|&l| log_sigmoid_scalar(l)).sum::<f64>() / n;
    Ok((r + f, g))
}
