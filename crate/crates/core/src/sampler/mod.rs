//! Unweighting backends over the reweighted latent density
//! `q(z) ∝ p_Z(z) · w(g(z))`: Hamiltonian Monte Carlo and rejection sampling.
//!
//! Only ratios of `q` enter either method, so the normalizing constant is
//! never computed.

mod diagnostics;
mod hmc;
mod rejection;
mod target;

pub use diagnostics::{autocorrelation_time, split_rhat};
pub use hmc::{hmc_run, leapfrog, HmcConfig, HmcDiagnostics, HmcOutput, Trajectory};
pub use rejection::{rejection_sample, RejectionOutput, RejectionReport};
pub use target::{LatentTarget, LogDensity, StandardNormal2};
