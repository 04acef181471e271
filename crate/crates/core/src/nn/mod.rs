//! Small dense numerical core: MLPs, a reverse-mode tape and Adam.

mod adam;
pub mod checkpoint;
mod mlp;
mod tape;

pub use adam::AdamState;
pub use mlp::{hstack, Activation, Dense, DenseParams, ParamVars};
pub use tape::{sigmoid, softplus as softplus_beta, Gradients, Tape, Var};
