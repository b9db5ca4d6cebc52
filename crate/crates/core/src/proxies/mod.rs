//! Neural dispatch proxies: a shared trunk with one of four feasibility
//! mechanisms on top.

pub mod mechanisms;
mod model;

pub use mechanisms::{
    dc3_correct, dc3_correct_vjp, decode_bounded, deepopf_complete, deepopf_complete_vjp, e2elr_repair,
    e2elr_repair_vjp, RepairBranch,
};
pub use model::{Architecture, Dc3Params, Mechanism, ProxyInput, ProxyModel, ProxyOptions, ProxyPass, RowPass};

use crate::nn::checkpoint::CheckpointError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ProxyError {
    #[error("repair infeasible: demand {demand} outside [{lo}, {hi}]")]
    RepairInfeasible { demand: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}
