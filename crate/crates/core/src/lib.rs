//! Input perturbation for differentially private empirical risk minimization
//! with quadratic losses.
//!
//! Each contributor perturbs the coefficients of its own quadratic loss before
//! release; the server minimizes the sum of the released losses plus a data
//! independent regularizer, and the minimizer is differentially private.

pub mod analysis;
pub mod calibration;
pub mod domain;
pub mod error;
pub mod harness;
pub mod loss;
pub mod perturb;
pub mod rng;
pub mod solver;

pub use calibration::{calibrate, NoiseCalibration};
pub use domain::{Dataset, Example, LossConstants, ModelVector, PrivacyBudget};
pub use error::{Error, Result};
pub use loss::{LossKind, LossSpec, QuadraticForm};
pub use rng::RngStream;
