//! Differentiable building blocks shared by every trainable model.

mod adam;
mod checkpoint;
mod mlp;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use mlp::{
    column_to_vec, Dense, Mlp, OutputActivation, ParamMode, ParamVars, Parameterized, DEFAULT_LEAKY_SLOPE,
};
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::{log_sigmoid_scalar, sigmoid_scalar};
