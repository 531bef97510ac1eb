// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
