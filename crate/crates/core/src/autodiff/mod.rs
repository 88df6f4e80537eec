//! Eager reverse-mode differentiation and a central-difference checker.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradReport, ParamCheck, DEFAULT_EPS, REL_FLOOR};
pub use tape::{cross_entropy, Gradients, Primitive, Tape, Var};
