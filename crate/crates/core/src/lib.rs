//! Pyramidal graph convolutional network over EEG electrode graphs.
//!
//! Everything in this crate is pure computation over in-memory data: electrode
//! geometry, graph construction, a small reverse-mode autodiff engine, the
//! model itself, synthetic data generation, training, and diagnostics. It is
//! `no_std` (with `alloc`); file formats and the command-line interface live in
//! the companion `pgcn-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod data;
pub mod diagnostics;
pub mod diff;
pub mod geometry;
pub mod graph;
pub mod mat;
pub mod model;
pub mod train;
