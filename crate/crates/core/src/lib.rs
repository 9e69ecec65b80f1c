//! Relative dependency testing with correlated HSIC U-statistics.
//!
//! Given a source sample `X` and targets `Y`, `Z`, [`reltest::dependent_test`]
//! decides whether `X` depends significantly more on `Y` than on `Z`. Both
//! HSIC estimates are computed on the full sample and their joint Gaussian
//! asymptotics, including the covariance between them, give the p-value.
//! [`reltest::generalized_test`] extends this to weighted combinations of
//! any number of HSIC statistics.

pub mod dataset;
pub mod error;
pub mod hsic;
pub mod kernels;
pub mod par;
pub mod reltest;
pub mod synthbench;

pub use error::{Error, Result};
