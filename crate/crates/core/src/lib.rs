//! Bayesian recurrent units: tensors, an exact oracle, recurrent cells,
//! a reverse-mode tape, stacked networks and a small training loop.

pub mod activations;
pub mod autodiff;
pub mod backend;
pub mod cells;
pub mod error;
pub mod network;
pub mod oracle;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
