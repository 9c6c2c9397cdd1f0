// `!(x > 0.0)` checks intentionally reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod discrepancy;
pub mod error;
pub mod fluid;
pub mod geometry;
pub mod gp;
pub mod harness;
pub mod pour;
pub mod probe;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
