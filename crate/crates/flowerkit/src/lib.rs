//! Files, configuration, parallel execution, rendering and the command
//! line around [`flowerkit_core`].

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod netcheck;
pub mod parallel;
pub mod render;
pub mod report;
pub mod store;
pub mod suites;

pub use error::{Error, Result};
pub use flowerkit_core as core;
