//! Quadratic losses and their sufficient statistics.
//!
//! A loss that is quadratic in `w` can be written as
//! `l(w, (x, y)) = 1/2 (q^T w)^2 - p^T w + s` for per-example statistics `(q, p, s)`.
//! Perturbing `q` and `p` is what the contributors do; everything the server needs
//! is contained in these statistics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Example, LossConstants};
use crate::error::{Error, Result};

/// The `(q, p, s)` statistics of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub s: f64,
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `1/2 (w^T x - y)^2`.
    LinearRegression,
    /// Second-order expansion of `log(1 + exp(-y w^T x))` around `w^T x = 0`.
    #[serde(alias = "logistic")]
    LogisticQuadratic,
}

/// A quadratic loss together with the constants that noise calibration consumes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub constants: LossConstants,
    /// Supremum of `||q||_2` over valid examples.
    pub bound_q: f64,
    /// Supremum of `||p||_2` over valid examples.
    pub bound_p: f64,
}

impl LossSpec {
    /// Least squares on the `eta`-ball: `lambda = 1`, `zeta = eta + 1`.
    pub fn linear_regression(d: usize, eta: f64) -> Result<Self> {
        Ok(LossSpec {
            kind: LossKind::LinearRegression,
            constants: LossConstants::new(eta + 1.0, 1.0, eta, d)?,
            bound_q: 1.0,
            bound_p: 1.0,
        })
    }

    /// Quadratic logistic surrogate on the `eta`-ball: `lambda = 1/4`, `zeta = eta/4 + 1/2`.
    pub fn logistic_quadratic(d: usize, eta: f64) -> Result<Self> {
        Ok(LossSpec {
            kind: LossKind::LogisticQuadratic,
            constants: LossConstants::new(eta / 4.0 + 0.5, 0.25, eta, d)?,
            bound_q: 0.5,
            bound_p: 0.5,
        })
    }

    pub fn for_kind(kind: LossKind, d: usize, eta: f64) -> Result<Self> {
        match kind {
            LossKind::LinearRegression => Self::linear_regression(d, eta),
            LossKind::LogisticQuadratic => Self::logistic_quadratic(d, eta),
        }
    }

    pub fn encode(&self, example: &Example) -> Result<QuadraticForm> {
        if example.dim() != self.constants.d {
            return Err(Error::DimensionMismatch {
                expected: self.constants.d,
                found: example.dim(),
            });
        }
        match self.kind {
            LossKind::LinearRegression => Ok(encode_linear_regression(example)),
            LossKind::LogisticQuadratic => encode_logistic_quadratic(example),
        }
    }

    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<Vec<QuadraticForm>> {
        dataset
            .examples()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                self.encode(e).map_err(|err| match err {
                    Error::InvalidLabel { value, .. } => Error::InvalidLabel { index: i, value },
                    other => other,
                })
            })
            .collect()
    }
}

pub fn encode_linear_regression(example: &Example) -> QuadraticForm {
    QuadraticForm {
        q: example.x.clone(),
        p: &example.x * example.y,
        s: 0.5 * example.y * example.y,
    }
}

/// Requires `y` in `{-1, +1}`.
pub fn encode_logistic_quadratic(example: &Example) -> Result<QuadraticForm> {
    let y = example.y;
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidLabel { index: 0, value: y });
    }
    Ok(QuadraticForm {
        q: &example.x * 0.5,
        p: &example.x * (0.5 * y),
        s: std::f64::consts::LN_2,
    })
}

pub fn loss_value(form: &QuadraticForm, w: &DVector<f64>) -> Result<f64> {
    if form.dim() != w.len() || form.p.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: form.dim(),
            found: w.len(),
        });
    }
    let qw = form.q.dot(w);
    Ok(0.5 * qw * qw - form.p.dot(w) + form.s)
}

/// `(1/n) sum_i l(w, z_i) + reg_coeff / (2n) ||w||^2`.
pub fn empirical_objective(dataset: &Dataset, spec: &LossSpec, w: &DVector<f64>, reg_coeff: f64) -> Result<f64> {
    if !(reg_coeff >= 0.0) {
        return Err(Error::OutOfRange {
            name: "reg_coeff",
            value: reg_coeff,
            expected: ">= 0".into(),
        });
    }
    let n = dataset.len() as f64;
    let mut total = 0.0;
    for e in dataset.examples() {
        total += loss_value(&spec.encode(e)?, w)?;
    }
    Ok(total / n + reg_coeff / (2.0 * n) * w.norm_squared())
}

/// Exact logistic loss, used for checking the surrogate.
pub fn logistic_loss(margin: f64) -> f64 {
    // log(1 + e^{-z}), stable for either sign of z.
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}
