//! Regularized least squares over a catalog of penalties, with Gaussian
//! mean-width calibration of the regularization parameter and closed-form
//! complexity-dependent error rates.

pub mod calibration;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rates;
pub mod regularizers;
pub mod solver;

pub use error::{Error, Result};
