// `!(a >= b)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod embed;
pub mod rng;
pub mod encoder;
pub mod heads;
pub mod loss;
pub mod metrics;
pub mod train;
pub mod cli;
