// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anomaly;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod flda;
pub mod hmm;
pub mod ingest;
pub mod labels;
pub mod outcomes;
pub mod pipeline;
pub mod separability;
pub mod sessions;
pub mod simgen;
pub mod stats;

pub use error::{Error, Result};
