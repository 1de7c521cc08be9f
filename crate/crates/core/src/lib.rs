#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod noise;
pub mod pld;
pub mod selftest;
pub mod sim;
pub mod special;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
