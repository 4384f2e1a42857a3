//! Reverse-mode differentiation, the radius MLP and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_indices, relative_error, GradCheck, FD_STEP, REL_FLOOR};
pub use mlp::{MlpParams, DEFAULT_LAYERS, INIT_OUTPUT_BIAS};
pub use tape::{sigmoid, GradientTape, Gradients, Tape, Var};
