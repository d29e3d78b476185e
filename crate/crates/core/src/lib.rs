//! Nonlinear shrinkage of sample covariance eigenvalues under spiked models.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod mp_law;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};

/// Complex scalar used by the Stieltjes-transform code.
pub type C64 = num_complex::Complex<f64>;
