//! Multihead warp networks for PDE surrogates, with the reference solvers
//! used to generate their data and check their mathematics.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, configuration
//! files, parallel execution and the command line live in the `flowerkit`
//! crate.

#![no_std]
// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataset;
pub mod diff;
pub mod error;
pub mod exec;
pub mod flower;
pub mod grid;
pub mod refsolve;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
