//! End-to-end experiment: data, baseline flow, classifier, the two latent
//! refiners, scoring and figures, with configuration files, run manifests
//! and stage reuse.

pub mod compare;
pub mod config;
mod experiment;
pub mod manifest;
pub mod render;

pub use compare::{compare_report, Column, Comparison};
pub use config::{Preset, RunConfig};
pub use experiment::{files, run_experiment, Experiment, LATENT_HEADER, POINT_HEADER, SAMPLE_HEADER};
pub use manifest::{RunManifest, StageKind, StageRecord, StageStatus, MANIFEST_FILE};
pub use render::{render_density, render_histogram};
