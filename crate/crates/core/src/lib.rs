//! Latent space refinement for normalizing flows on 2D toy targets.
//!
//! The crate trains a RealNVP flow as the baseline generator, learns a
//! classifier that reweights its samples towards the data, pulls those
//! weights back onto the latent space and then removes them again, either by
//! Hamiltonian Monte Carlo over the reweighted latent density or by training
//! a weighted GAN that maps an auxiliary space onto it. All variants are
//! scored with exact earth mover's distance and Jensen–Shannon divergence on
//! binned histograms.

pub mod data;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod refiner;
pub mod reweight;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
