//! Dynamic topic model trained with a blockwise Gibbs sampler: exact α draws,
//! Langevin (SGLD) steps for η and Φ, alias-table Metropolis-Hastings for Z,
//! and per-slice workers that only swap boundary α/Φ with their neighbors.
//!
//! Start with the runnable programs in `examples/`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod corpus;
pub mod engine;
pub mod kernels;
pub mod model;
pub mod samplers;
pub mod eval;
pub mod synthetic;
pub mod cluster;
pub mod config;
pub mod app;
