//! Minimal reverse-mode machinery for small fully-connected networks.
//!
//! All kernels accumulate in a fixed order and treat batch rows
//! independently, so results are bitwise reproducible and a row's output does
//! not depend on what else is in the batch.

mod adam;
pub mod checkpoint;
mod mlp;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{write_grads, Activation, Dense, DenseGrad, Mlp, MlpTrace};
pub use ops::{matmul, matmul_tn};

/// Batch-major 2-D tensor (rows are samples).
pub type Tensor2 = crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
