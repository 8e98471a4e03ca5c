//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records operations as they execute (define-by-run) and replays
//! them backwards to accumulate gradients into a [`ParamSet`]. The
//! [`grad_check`] harness compares those gradients against central finite
//! differences.

mod check;
mod params;
mod tape;
#[cfg(test)]
mod tests;

pub use check::{grad_check, GradCheckReport};
pub use params::{ParamEntry, ParamId, ParamSet};
pub use tape::{Tape, TensorId};

use alloc::string::String;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: {msg}")]
    ShapeError { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value")]
    NumericalError { op: &'static str },
    #[error("node {node} has zero incident weight during normalization")]
    IsolatedNode { node: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),
}
