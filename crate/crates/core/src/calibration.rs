//! Noise calibration for input perturbation.
//!
//! All logarithms are natural. `gamma` is the failure probability allotted to the
//! random quadratic term and `delta_prime` the slack of the linear-term Gaussian
//! mechanism; both are `delta / 2`.

use serde::{Deserialize, Serialize};

use crate::domain::{LossConstants, PrivacyBudget};
use crate::error::{Error, Result};

/// Default multiplier realizing the strict inequality on `sigma_u^2`.
pub const DEFAULT_SLACK: f64 = 1.0001;

/// Margin placed above `2 lambda / epsilon` by [`recommend_delta`].
pub const DELTA_FLOOR_MARGIN: f64 = 0.01;

/// Every scalar the contributors and the server agree on before collection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub gamma: f64,
    pub delta_prime: f64,
    /// `sqrt(log(2/gamma)/n)`, the single-rate shorthand; the threshold itself
    /// uses separate `log(2/gamma)` and `log(4/gamma)` rates.
    pub a: f64,
    /// Total variance of the linear noise `b = sum_i r_i` per coordinate.
    pub sigma_b2: f64,
    /// Total variance of the feature noise; each `u_i` has variance `sigma_u2 / n`.
    pub sigma_u2: f64,
    /// The `sigma_u` lower threshold this calibration exceeds.
    pub sigma_u_threshold: f64,
    pub slack: f64,
    pub n: usize,
    pub d: usize,
    pub budget: PrivacyBudget,
    pub constants: LossConstants,
}

impl NoiseCalibration {
    pub fn sigma_u(&self) -> f64 {
        self.sigma_u2.sqrt()
    }

    pub fn sigma_b(&self) -> f64 {
        self.sigma_b2.sqrt()
    }

    /// `2 lambda / epsilon`, the regularization the server subtracts.
    pub fn regularization_offset(&self) -> f64 {
        2.0 * self.constants.lambda / self.budget.epsilon
    }

    /// Same calibration with the two variances replaced, bypassing the threshold
    /// invariant. Only meaningful for degenerate checks such as zero noise.
    pub fn with_variances(mut self, sigma_u2: f64, sigma_b2: f64) -> Self {
        self.sigma_u2 = sigma_u2;
        self.sigma_b2 = sigma_b2;
        self
    }
}

/// Two-sided envelope `[lower, upper]` on the random quadratic coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta0Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Delta0Bounds {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Smallest `n` for which `1 - 2 sqrt(log(4/gamma)/n) > 0`.
pub fn minimal_n(gamma: f64) -> usize {
    (4.0 * (4.0 / gamma).ln()).floor() as usize + 1
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "gamma",
            value: gamma,
            expected: "in (0, 1)".into(),
        })
    }
}

pub fn sigma_b2(zeta: f64, budget: &PrivacyBudget) -> f64 {
    let eps = budget.epsilon;
    let delta_prime = budget.delta / 2.0;
    zeta * zeta * (8.0 * (2.0 / delta_prime).ln() + 4.0 * eps) / (eps * eps)
}

/// Closed-form root of `lower(sigma_u) = 2 lambda / epsilon`, i.e. the smallest
/// `sigma_u` for which the lower envelope of the quadratic term clears the
/// regularization offset.
pub fn sigma_u_threshold(n: usize, gamma: f64, d: usize, lambda: f64, epsilon: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let nf = n as f64;
    let r2 = ((2.0 / gamma).ln() / nf).sqrt();
    let r4 = ((4.0 / gamma).ln() / nf).sqrt();
    let den = 1.0 - 2.0 * r4;
    if n == 0 || !(den > 0.0) {
        return Err(Error::CalibrationInfeasible {
            n,
            min_n: minimal_n(gamma),
        });
    }
    let two_d = 2.0 * d as f64;
    let lin = two_d.sqrt() * lambda * r2;
    let disc = two_d * lambda * lambda * r2 * r2 + 2.0 * lambda / epsilon * den;
    Ok((lin + disc.sqrt()) / den)
}

pub fn delta0_bounds(n: usize, gamma: f64, sigma_u: f64, lambda: f64, d: usize) -> Delta0Bounds {
    let nf = n as f64;
    let l2 = (2.0 / gamma).ln();
    let l4 = (4.0 / gamma).ln();
    let r2 = (l2 / nf).sqrt();
    let r4 = (l4 / nf).sqrt();
    let cross = 2.0 * (2.0 * d as f64).sqrt() * lambda * sigma_u * r2;
    let s2 = sigma_u * sigma_u;
    Delta0Bounds {
        lower: s2 * (1.0 - 2.0 * r4) - cross,
        upper: s2 * (1.0 + 2.0 * r4 + 2.0 * l4 / nf) + cross,
    }
}

/// Explicit envelope around [`sigma_u_threshold`]. The upper value only holds for
/// `n >= 16 log(4/gamma)` and is `None` below that.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaUEnvelope {
    pub lower: f64,
    pub upper: Option<f64>,
}

pub fn sigma_u_envelope(n: usize, gamma: f64, d: usize, lambda: f64, epsilon: f64) -> SigmaUEnvelope {
    let nf = n as f64;
    let l4 = (4.0 / gamma).ln();
    let r2 = ((2.0 / gamma).ln() / nf).sqrt();
    let r4 = (l4 / nf).sqrt();
    let root = (2.0 * lambda / epsilon).sqrt();
    let sqrt_2d = (2.0 * d as f64).sqrt();
    let upper = (nf >= 16.0 * l4).then_some((4.0 * sqrt_2d * lambda + 4.0 * root) * r4 + root);
    SigmaUEnvelope {
        lower: sqrt_2d * lambda * r2 + root,
        upper,
    }
}

pub fn calibrate(budget: PrivacyBudget, n: usize, constants: LossConstants, slack: f64) -> Result<NoiseCalibration> {
    if !(slack > 1.0 && slack.is_finite()) {
        return Err(Error::OutOfRange {
            name: "slack",
            value: slack,
            expected: "finite and > 1".into(),
        });
    }
    let gamma = budget.delta / 2.0;
    let delta_prime = budget.delta / 2.0;
    let a = ((2.0 / gamma).ln() / n as f64).sqrt();
    if n == 0 || !(a < 0.5) {
        return Err(Error::CalibrationInfeasible {
            n,
            min_n: minimal_n(gamma),
        });
    }
    let threshold = sigma_u_threshold(n, gamma, constants.d, constants.lambda, budget.epsilon)?;
    Ok(NoiseCalibration {
        gamma,
        delta_prime,
        a,
        sigma_b2: sigma_b2(constants.zeta, &budget),
        sigma_u2: slack * threshold * threshold,
        sigma_u_threshold: threshold,
        slack,
        n,
        d: constants.d,
        budget,
        constants,
    })
}

/// Local privacy of one contributor's release `(q_i + u_i, p_i - r_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalDpLevel {
    /// `2 c sqrt(n) (lambda / sigma_u + zeta / sigma_b)`.
    pub epsilon: f64,
    /// `2 delta`.
    pub delta: f64,
    /// `c sqrt(n) (diameter_q / sigma_u + diameter_p / sigma_b)` for the supplied
    /// domain diameters; equals `epsilon` when they are `2 lambda` and `2 zeta`.
    pub epsilon_with_diameters: f64,
    pub diameter_q: f64,
    pub diameter_p: f64,
    /// `sqrt(2 ln(1.25 / delta))`. The guarantee needs `c` strictly larger, so the
    /// reported levels are infima.
    pub c: f64,
    pub c_is_infimum: bool,
}

pub fn gaussian_c(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

pub fn local_dp_level(cal: &NoiseCalibration, diameter_q: f64, diameter_p: f64) -> LocalDpLevel {
    let c = gaussian_c(cal.budget.delta);
    let root_n = (cal.n as f64).sqrt();
    let (su, sb) = (cal.sigma_u(), cal.sigma_b());
    LocalDpLevel {
        epsilon: 2.0 * c * root_n * (cal.constants.lambda / su + cal.constants.zeta / sb),
        delta: 2.0 * cal.budget.delta,
        epsilon_with_diameters: c * root_n * (diameter_q / su + diameter_p / sb),
        diameter_q,
        diameter_p,
        c,
        c_is_infimum: true,
    }
}

/// Limit of `epsilon_local / sqrt(n epsilon)` as `n` grows.
pub fn local_dp_rate_limit(lambda: f64, budget: &PrivacyBudget) -> f64 {
    let eps = budget.epsilon;
    let delta_prime = budget.delta / 2.0;
    let c = gaussian_c(budget.delta);
    2.0 * c * ((lambda / 2.0).sqrt() + (eps / (8.0 * (2.0 / delta_prime).ln() + 4.0 * eps)).sqrt())
}

/// Regularization cap balancing the noise and bias terms of the excess risk,
/// floored just above `2 lambda / epsilon`.
pub fn recommend_delta(constants: &LossConstants, budget: &PrivacyBudget, w_norm_estimate: f64) -> Result<f64> {
    if !(w_norm_estimate > 0.0) {
        return Err(Error::OutOfRange {
            name: "w_norm_estimate",
            value: w_norm_estimate,
            expected: "> 0".into(),
        });
    }
    let eps = budget.epsilon;
    let z = constants.zeta;
    let balanced = (z * z * constants.d as f64 * (1.0 / budget.delta).ln()).sqrt() / (eps * w_norm_estimate);
    let floor = (1.0 + DELTA_FLOOR_MARGIN) * 2.0 * constants.lambda / eps;
    Ok(balanced.max(floor))
}

/// `(alpha epsilon, delta)`: trades model-level utility for stronger local privacy.
pub fn scale_budget(budget: &PrivacyBudget, alpha: f64) -> Result<PrivacyBudget> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha",
            value: alpha,
            expected: "in (0, 1]".into(),
        });
    }
    PrivacyBudget::new(alpha * budget.epsilon, budget.delta)
}
