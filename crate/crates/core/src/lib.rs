//! Posterior inference for the normalized gamma-gamma hierarchical completely
//! random measure (the hierarchical Dirichlet process with a gamma hyperprior
//! on the group-level concentration).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ars;
pub mod bench;
pub mod coeffs;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod elicitation;
pub mod error;
pub mod exact;
pub mod hdp;
pub mod mcmc;
pub mod measures;
pub mod quad;
pub mod rng;
pub mod run;
pub mod simulate;
pub mod specfun;

pub use data::{BaseMeasure, GroupedCounts, ModelParams};
pub use error::{Error, Result};
pub use rng::Streams;

/// First line of every CSV file written by this crate.
pub const SCHEMA_HEADER: &str = "# hcrv-schema v1";
