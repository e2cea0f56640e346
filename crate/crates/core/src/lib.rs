#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
mod ascent;
pub mod coreverify;
pub mod error;
pub mod lindahl;
pub mod mechanism;
pub mod model;
pub mod saturating;
pub mod synth;

pub use error::{Error, Result};
