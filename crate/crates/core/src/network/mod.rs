//! Stacked, optionally bidirectional recurrent networks with a softmax
//! readout, their checkpoints and parameter audits.

mod audit;
mod checkpoint;
mod config;
mod model;

pub use audit::{param_count, AuditEntry, LayerAudit, ParamAudit};
pub use checkpoint::Checkpoint;
pub use config::{CellKind, NetworkConfig};
pub use model::{
    loss, predictions, BatchGradients, CellParams, DirectionParams, LayerParams, Mode, NetParams, Network, Readout,
};
