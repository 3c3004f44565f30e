//! Reduced-order modeling of parameterized PDEs.
//!
//! The crate covers the whole offline/online pipeline on a small Q1/P1
//! finite-element backend: parameter sampling, batched parametric assembly,
//! snapshot collection, POD and space-time bases, DEIM/MDEIM hyper-reduction,
//! reduced solves and performance evaluation.

pub mod alloc;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fe;
pub mod hyper;
pub mod linalg;
pub mod param_space;
pub mod problems;
pub mod reduction;
pub mod rom;
pub mod snapshots;

pub use error::{Error, Result};

#[cfg(test)]
#[global_allocator]
static ALLOC: alloc::CountingAllocator = alloc::CountingAllocator;
