//! Koopman eigenfunction identification from trajectory data and feedback
//! control in eigenfunction coordinates.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod control;
pub mod error;
pub mod experiments;
pub mod identify;
pub mod linalg;
pub mod systems;

pub use error::{KronicError, Result};
