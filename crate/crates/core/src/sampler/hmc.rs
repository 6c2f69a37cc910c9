use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{autocorrelation_time, split_rhat};
use super::target::LogDensity;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// End state of a batched leapfrog trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub z: Array2<f64>,
    pub p: Array2<f64>,
    pub log_q: Array1<f64>,
    pub grad: Array2<f64>,
    /// Rows whose state became non-finite; they are returned at their start point.
    pub diverged: Vec<bool>,
}

fn row_finite(z: &Array2<f64>, p: &Array2<f64>, grad: &Array2<f64>, log_q: &Array1<f64>, i: usize) -> bool {
    log_q[i].is_finite() && (0..2).all(|j| z[[i, j]].is_finite() && p[[i, j]].is_finite() && grad[[i, j]].is_finite())
}

/// Leapfrog integration with identity mass for every row of `z`.
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, z: &Array2<f64>, p: &Array2<f64>, eps: f64, n_steps: usize) -> Result<Trajectory> {
    let (log_q, grad) = target.log_density_and_grad(z)?;
    leapfrog_from(target, z, p, &log_q, &grad, eps, n_steps)
}

pub(crate) fn leapfrog_from<T: LogDensity + ?Sized>(
    target: &T,
    z0: &Array2<f64>,
    p0: &Array2<f64>,
    log_q0: &Array1<f64>,
    grad0: &Array2<f64>,
    eps: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("leapfrog step size must be positive, got {eps}")));
    }
    let n = z0.nrows();
    let mut z = z0.clone();
    let mut p = p0.clone();
    let mut log_q = log_q0.clone();
    let mut grad = grad0.clone();
    let mut diverged = vec![false; n];
    for _ in 0..n_steps {
        p.scaled_add(0.5 * eps, &grad);
        z.scaled_add(eps, &p);
        // Diverged rows are parked at their start so the target only sees finite input.
        for i in 0..n {
            if diverged[i] || !(z[[i, 0]].is_finite() && z[[i, 1]].is_finite()) {
                diverged[i] = true;
                z.row_mut(i).assign(&z0.row(i));
            }
        }
        (log_q, grad) = target.log_density_and_grad(&z)?;
        p.scaled_add(0.5 * eps, &grad);
        for (i, d) in diverged.iter_mut().enumerate() {
            if !*d && !row_finite(&z, &p, &grad, &log_q, i) {
                *d = true;
            }
        }
    }
    for (i, &d) in diverged.iter().enumerate() {
        if d {
            z.row_mut(i).assign(&z0.row(i));
            p.row_mut(i).assign(&p0.row(i));
            log_q[i] = log_q0[i];
            grad.row_mut(i).assign(&grad0.row(i));
        }
    }
    Ok(Trajectory { z, p, log_q, grad, diverged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub chains: usize,
    /// Iterations discarded per chain.
    pub burn_in: usize,
    /// Iterations kept per chain.
    pub keep: usize,
    pub eps: f64,
    pub steps: usize,
    pub seed: u64,
    /// Number of chain groups evaluated in parallel; output does not depend on it.
    pub groups: usize,
    pub min_acceptance: f64,
    pub max_divergent_fraction: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            chains: 100,
            burn_in: 3000,
            keep: 20_000,
            eps: 0.004,
            steps: 50,
            seed: 0,
            groups: 1,
            min_acceptance: 0.1,
            max_divergent_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcDiagnostics {
    pub chains: usize,
    pub kept_per_chain: usize,
    pub acceptance_per_chain: Vec<f64>,
    pub mean_acceptance: f64,
    pub divergences: usize,
    pub divergent_fraction: f64,
    /// Integrated autocorrelation time per latent coordinate, in iterations.
    pub autocorrelation_time: [f64; 2],
    pub rhat: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct HmcOutput {
    /// Kept samples, chain-major: all of chain 0, then chain 1, ...
    pub samples: Array2<f64>,
    pub diagnostics: HmcDiagnostics,
}

struct GroupResult {
    samples: Vec<Vec<[f64; 2]>>,
    accepted: Vec<usize>,
    divergences: usize,
}

fn run_group<T: LogDensity + ?Sized>(target: &T, config: &HmcConfig, chain_ids: &[usize]) -> Result<GroupResult> {
    let m = chain_ids.len();
    let mut rngs: Vec<ChaCha8Rng> = chain_ids.iter().map(|&c| stream_rng(config.seed, c as u64)).collect();
    let mut z = Array2::zeros((m, 2));
    for (i, rng) in rngs.iter_mut().enumerate() {
        for j in 0..2 {
            z[[i, j]] = rng.sample(StandardNormal);
        }
    }
    let (mut log_q, mut grad) = target.log_density_and_grad(&z)?;
    let mut samples = vec![Vec::with_capacity(config.keep); m];
    let mut accepted = vec![0usize; m];
    let mut divergences = 0;
    for iter in 0..config.burn_in + config.keep {
        let mut p = Array2::zeros((m, 2));
        for (i, rng) in rngs.iter_mut().enumerate() {
            for j in 0..2 {
                p[[i, j]] = rng.sample(StandardNormal);
            }
        }
        let traj = leapfrog_from(target, &z, &p, &log_q, &grad, config.eps, config.steps)?;
        let keeping = iter >= config.burn_in;
        for i in 0..m {
            let u: f64 = rngs[i].gen();
            if traj.diverged[i] {
                divergences += 1;
            } else {
                let h0 = -log_q[i] + 0.5 * (p[[i, 0]].powi(2) + p[[i, 1]].powi(2));
                let h1 = -traj.log_q[i] + 0.5 * (traj.p[[i, 0]].powi(2) + traj.p[[i, 1]].powi(2));
                if u.ln() < h0 - h1 {
                    z.row_mut(i).assign(&traj.z.row(i));
                    log_q[i] = traj.log_q[i];
                    grad.row_mut(i).assign(&traj.grad.row(i));
                    if keeping {
                        accepted[i] += 1;
                    }
                }
            }
            if keeping {
                samples[i].push([z[[i, 0]], z[[i, 1]]]);
            }
        }
        if iter + 1 == config.burn_in {
            log::debug!("hmc: burn-in finished ({} iterations)", config.burn_in);
        }
    }
    Ok(GroupResult {
        samples,
        accepted,
        divergences,
    })
}

/// Metropolis-corrected HMC with independent chains started from `N(0, I)`.
///
/// Chain `c` draws all its randomness from stream `c` of `config.seed`, so the
/// output is identical for any number of groups.
pub fn hmc_run<T: LogDensity + ?Sized>(target: &T, config: &HmcConfig) -> Result<HmcOutput> {
    if config.chains == 0 || config.keep == 0 || config.groups == 0 {
        return Err(Error::Config("hmc needs positive chains, kept iterations and groups".into()));
    }
    let ids: Vec<usize> = (0..config.chains).collect();
    let per_group = config.chains.div_ceil(config.groups);
    let results: Vec<GroupResult> = ids
        .par_chunks(per_group)
        .map(|chunk| run_group(target, config, chunk))
        .collect::<Result<_>>()?;
    let mut samples = Array2::zeros((config.chains * config.keep, 2));
    let mut acceptance = Vec::with_capacity(config.chains);
    let mut divergences = 0;
    let mut per_coord: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut row = 0;
    for g in &results {
        divergences += g.divergences;
        for (chain, &acc) in g.samples.iter().zip(&g.accepted) {
            acceptance.push(acc as f64 / config.keep as f64);
            for s in chain {
                samples[[row, 0]] = s[0];
                samples[[row, 1]] = s[1];
                row += 1;
            }
            for (j, coord) in per_coord.iter_mut().enumerate() {
                coord.push(chain.iter().map(|s| s[j]).collect());
            }
        }
    }
    let proposals = config.chains * (config.burn_in + config.keep);
    let mean_acceptance = acceptance.iter().sum::<f64>() / acceptance.len() as f64;
    let diagnostics = HmcDiagnostics {
        chains: config.chains,
        kept_per_chain: config.keep,
        mean_acceptance,
        acceptance_per_chain: acceptance,
        divergences,
        divergent_fraction: divergences as f64 / proposals as f64,
        autocorrelation_time: [autocorrelation_time(&per_coord[0]), autocorrelation_time(&per_coord[1])],
        rhat: [split_rhat(&per_coord[0]), split_rhat(&per_coord[1])],
    };
    log::info!(
        "hmc: acceptance {:.3}, divergences {}, autocorrelation time {:.1}/{:.1}, R-hat {:.3}/{:.3}",
        diagnostics.mean_acceptance,
        diagnostics.divergences,
        diagnostics.autocorrelation_time[0],
        diagnostics.autocorrelation_time[1],
        diagnostics.rhat[0],
        diagnostics.rhat[1]
    );
    if diagnostics.mean_acceptance < config.min_acceptance {
        return Err(Error::Sampler(format!(
            "mean acceptance {:.3} below {}; reduce the step size",
            diagnostics.mean_acceptance, config.min_acceptance
        )));
    }
    if diagnostics.divergent_fraction > config.max_divergent_fraction {
        return Err(Error::Sampler(format!(
            "{} of {proposals} trajectories diverged; reduce the step size",
            diagnostics.divergences
        )));
    }
    Ok(HmcOutput { samples, diagnostics })
}
