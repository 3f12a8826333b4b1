//! Domain types shared across the crate and geometry of the parameter ball.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when checking the unit-norm preprocessing bounds.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// One contributor's raw feature vector and target.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: DVector<f64>,
    pub y: f64,
}

impl Example {
    pub fn new(x: impl Into<DVector<f64>>, y: f64) -> Self {
        Example { x: x.into(), y }
    }

    pub fn from_slice(x: &[f64], y: f64) -> Self {
        Example {
            x: DVector::from_column_slice(x),
            y,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// An ordered, non-empty collection of examples of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let dim = examples.first().ok_or(Error::EmptyDataset)?.dim();
        if let Some(bad) = examples.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Dataset { examples, dim })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    /// Always false: construction rejects empty datasets.
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// New dataset made of the examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let examples = indices
            .iter()
            .map(|&i| {
                self.examples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("index {i} out of bounds for {}", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(examples)
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }
}

/// Regularity constants of a loss over the parameter ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    /// Lipschitz bound on the gradient norm.
    pub zeta: f64,
    /// Smoothness bound on the Hessian spectral norm.
    pub lambda: f64,
    /// Radius of the parameter ball.
    pub eta: f64,
    pub d: usize,
}

impl LossConstants {
    pub fn new(zeta: f64, lambda: f64, eta: f64, d: usize) -> Result<Self> {
        for (name, v) in [("zeta", zeta), ("lambda", lambda), ("eta", eta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::OutOfRange {
                    name,
                    value: v,
                    expected: "finite and > 0".into(),
                });
            }
        }
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        Ok(LossConstants { zeta, lambda, eta, d })
    }
}

/// An (epsilon, delta) privacy budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::OutOfRange {
                name: "epsilon",
                value: epsilon,
                expected: "finite and > 0".into(),
            });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::OutOfRange {
                name: "delta",
                value: delta,
                expected: "in (0, 1)".into(),
            });
        }
        Ok(PrivacyBudget { epsilon, delta })
    }
}

/// A parameter vector known to lie in the ball of the radius it was projected onto.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelVector(DVector<f64>);

impl ModelVector {
    /// The origin of `R^d`, which lies in every ball.
    pub fn zeros(d: usize) -> Self {
        ModelVector(DVector::zeros(d))
    }

    /// Wraps a vector the caller has already projected.
    pub(crate) fn from_projected(w: DVector<f64>) -> Self {
        ModelVector(w)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl std::ops::Deref for ModelVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Radial projection onto `{ w : ||w||_2 <= eta }`.
pub fn project_to_ball(w: &DVector<f64>, eta: f64) -> Result<ModelVector> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::OutOfRange {
            name: "eta",
            value: eta,
            expected: "finite and > 0".into(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry in w".into()));
    }
    Ok(ModelVector(project_unchecked(w, eta)))
}

pub(crate) fn project_unchecked(w: &DVector<f64>, eta: f64) -> DVector<f64> {
    let norm = w.norm();
    if norm <= eta {
        w.clone()
    } else {
        // Rescale then clip: the product can land one ulp above eta.
        let mut out = w * (eta / norm);
        let n2 = out.norm();
        if n2 > eta {
            out *= eta / n2;
            if out.norm() > eta {
                out *= 1.0 - f64::EPSILON;
            }
        }
        out
    }
}

/// What is wrong with a single example.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ViolationKind {
    FeatureNorm(f64),
    TargetMagnitude(f64),
    Dimension(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

/// Lists every example breaking `||x|| <= 1`, `|y| <= 1` or the common dimension.
pub fn validate_examples(examples: &[Example], dim: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    for (index, e) in examples.iter().enumerate() {
        if e.dim() != dim {
            out.push(Violation {
                index,
                kind: ViolationKind::Dimension(e.dim()),
            });
            continue;
        }
        let norm = e.x.norm();
        if !(norm <= 1.0 + NORM_TOLERANCE) {
            out.push(Violation {
                index,
                kind: ViolationKind::FeatureNorm(norm),
            });
        }
        if !(e.y.abs() <= 1.0 + NORM_TOLERANCE) {
            out.push(Violation {
                index,
                kind: ViolationKind::TargetMagnitude(e.y),
            });
        }
    }
    out
}

pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    validate_examples(dataset.examples(), dataset.dim())
}
