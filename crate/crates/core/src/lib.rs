// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod macrospin;
pub mod network;
pub mod tlr;
pub mod trainer;
pub mod xor;

pub use error::{Error, Result};
