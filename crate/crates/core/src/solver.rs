//! Ball-constrained quadratic minimization and the four learners.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::calibration::{sigma_b2, NoiseCalibration};
use crate::domain::{project_unchecked, Dataset, LossConstants, ModelVector, PrivacyBudget};
use crate::error::{Error, Result};
use crate::loss::{LossSpec, QuadraticForm};
use crate::perturb::PerturbedExample;
use crate::rng::{gaussian_vector, RngStream};

/// Default ridge strength of the output-perturbation baseline.
pub const DEFAULT_OUTPUT_REG: f64 = 1e-3;

/// `F(w) = 1/2 w^T A w + b_lin^T w + c0 + reg / (2n) ||w||^2` over `||w|| <= radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram {
    pub a: DMatrix<f64>,
    pub b_lin: DVector<f64>,
    pub c0: f64,
    pub reg: f64,
    pub n: usize,
    pub radius: f64,
}

fn gram_over_n<'a>(rows: impl Iterator<Item = &'a DVector<f64>>, n: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    for (i, r) in rows.enumerate() {
        m.set_row(i, &r.transpose());
    }
    let g = m.tr_mul(&m) / n as f64;
    // Exact symmetry regardless of how the product was blocked.
    (&g + g.transpose()) * 0.5
}

impl QuadraticProgram {
    fn check(d: usize, n: usize, reg: f64, radius: f64) -> Result<()> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::OutOfRange {
                name: "reg",
                value: reg,
                expected: "finite and >= 0".into(),
            });
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::OutOfRange {
                name: "radius",
                value: radius,
                expected: "finite and > 0".into(),
            });
        }
        Ok(())
    }

    /// Averages the exact forms, i.e. the empirical objective plus `reg/(2n)||w||^2`.
    pub fn from_forms(forms: &[QuadraticForm], reg: f64, radius: f64) -> Result<Self> {
        let n = forms.len();
        let d = forms.first().map_or(0, |f| f.dim());
        Self::check(d, n, reg, radius)?;
        if let Some(f) = forms.iter().find(|f| f.dim() != d || f.p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: f.dim(),
            });
        }
        let mut p = DVector::zeros(d);
        let mut s = 0.0;
        for f in forms {
            p += &f.p;
            s += f.s;
        }
        Ok(QuadraticProgram {
            a: gram_over_n(forms.iter().map(|f| &f.q), n, d),
            b_lin: -p / n as f64,
            c0: s / n as f64,
            reg,
            n,
            radius,
        })
    }

    /// Same assembly on released statistics.
    pub fn from_perturbed(perturbed: &[PerturbedExample], reg: f64, radius: f64) -> Result<Self> {
        let n = perturbed.len();
        let d = perturbed.first().map_or(0, |f| f.dim());
        Self::check(d, n, reg, radius)?;
        if let Some(f) = perturbed.iter().find(|f| f.dim() != d || f.p_tilde.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: f.dim(),
            });
        }
        let mut p = DVector::zeros(d);
        let mut s = 0.0;
        for f in perturbed {
            p += &f.p_tilde;
            s += f.s;
        }
        Ok(QuadraticProgram {
            a: gram_over_n(perturbed.iter().map(|f| &f.q_tilde), n, d),
            b_lin: -p / n as f64,
            c0: s / n as f64,
            reg,
            n,
            radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.b_lin.len()
    }

    /// Adds `b^T w / n`.
    pub fn with_linear_noise(mut self, b: &DVector<f64>) -> Result<Self> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: b.len(),
            });
        }
        self.b_lin += b / self.n as f64;
        Ok(self)
    }

    fn ridge(&self) -> f64 {
        self.reg / self.n as f64
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.a * w)) + self.b_lin.dot(w) + self.c0 + 0.5 * self.ridge() * w.norm_squared()
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.a * w + &self.b_lin + w * self.ridge()
    }

    /// Power-iteration estimate of the top eigenvalue of `A + reg/n I`, guarded
    /// below by the mean eigenvalue.
    pub fn lipschitz_estimate(&self, iterations: usize) -> f64 {
        let d = self.dim();
        let mut h = self.a.clone();
        for i in 0..d {
            h[(i, i)] += self.ridge();
        }
        let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..iterations {
            let hv = &h * &v;
            let norm = hv.norm();
            if !(norm > 0.0) {
                break;
            }
            v = hv / norm;
            est = v.dot(&(&h * &v));
        }
        let l = est.max(h.trace() / d as f64);
        if l > 0.0 {
            l
        } else {
            1.0
        }
    }

    fn trace_bound(&self) -> f64 {
        self.a.trace() + self.dim() as f64 * self.ridge()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub power_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 100_000,
            power_iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub w: ModelVector,
    pub objective: f64,
    pub iterations: usize,
    /// Projected-gradient residual `||w - P(w - grad/L)||`.
    pub residual: f64,
    pub converged: bool,
    pub step_constant: f64,
}

impl Solution {
    pub fn into_model(self) -> Result<ModelVector> {
        if self.converged {
            Ok(self.w)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

pub fn minimize_ball_constrained(qp: &QuadraticProgram, cfg: &SolverConfig) -> Result<Solution> {
    minimize_from(qp, cfg, &DVector::zeros(qp.dim()))
}

/// Projected gradient descent with step `1/L` starting at the projection of `start`.
pub fn minimize_from(qp: &QuadraticProgram, cfg: &SolverConfig, start: &DVector<f64>) -> Result<Solution> {
    if !(cfg.tol > 0.0) {
        return Err(Error::OutOfRange {
            name: "tol",
            value: cfg.tol,
            expected: "> 0".into(),
        });
    }
    if start.len() != qp.dim() {
        return Err(Error::DimensionMismatch {
            expected: qp.dim(),
            found: start.len(),
        });
    }
    if qp.a.iter().chain(qp.b_lin.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite coefficient in quadratic program".into(),
        ));
    }
    let mut l = qp.lipschitz_estimate(cfg.power_iterations);
    let fallback = qp.trace_bound().max(l);
    let mut w = project_unchecked(start, qp.radius);
    let mut f = qp.objective(&w);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let next = project_unchecked(&(&w - qp.gradient(&w) / l), qp.radius);
        residual = (&next - &w).norm();
        if residual <= cfg.tol {
            break;
        }
        let f_next = qp.objective(&next);
        if f_next > f + 1e-12 * (1.0 + f.abs()) && l < fallback {
            // Power iteration undershot; the trace bounds the top eigenvalue.
            l = fallback;
            continue;
        }
        w = next;
        f = f_next;
        iterations += 1;
    }
    let converged = residual <= cfg.tol;
    Ok(Solution {
        objective: qp.objective(&w),
        w: ModelVector::from_projected(w),
        iterations,
        residual,
        converged,
        step_constant: l,
    })
}

/// Non-private minimizer of the empirical objective with `reg/(2n)||w||^2`.
pub fn learn_non_private(dataset: &Dataset, spec: &LossSpec, reg: f64, cfg: &SolverConfig) -> Result<ModelVector> {
    let qp = QuadraticProgram::from_forms(&spec.encode_dataset(dataset)?, reg, spec.constants.eta)?;
    minimize_ball_constrained(&qp, cfg)?.into_model()
}

fn check_delta(delta_cap: f64, constants: &LossConstants, epsilon: f64, strict: bool) -> Result<f64> {
    let bound = 2.0 * constants.lambda / epsilon;
    let ok = if strict { delta_cap > bound } else { delta_cap >= bound };
    if !ok || !delta_cap.is_finite() {
        let rel = if strict { ">" } else { ">=" };
        return Err(Error::Precondition(format!(
            "regularization cap {delta_cap} must be {rel} 2 lambda / epsilon = {bound}"
        )));
    }
    Ok(bound)
}

/// The server's program on released statistics: ridge `Delta - 2 lambda / epsilon`.
pub fn input_perturbed_program(
    perturbed: &[PerturbedExample],
    delta_cap: f64,
    constants: &LossConstants,
    epsilon: f64,
) -> Result<QuadraticProgram> {
    let bound = check_delta(delta_cap, constants, epsilon, true)?;
    if let Some(e) = perturbed.iter().find(|e| e.dim() != constants.d) {
        return Err(Error::DimensionMismatch {
            expected: constants.d,
            found: e.dim(),
        });
    }
    QuadraticProgram::from_perturbed(perturbed, delta_cap - bound, constants.eta)
}

pub fn learn_input_perturbed(
    perturbed: &[PerturbedExample],
    delta_cap: f64,
    constants: &LossConstants,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<ModelVector> {
    let qp = input_perturbed_program(perturbed, delta_cap, constants, epsilon)?;
    minimize_ball_constrained(&qp, cfg)?.into_model()
}

/// Draws the linear noise of objective perturbation, `b ~ N(0, sigma_b^2 I)`.
pub fn objective_noise(constants: &LossConstants, budget: &PrivacyBudget, rng: RngStream) -> DVector<f64> {
    let sd = sigma_b2(constants.zeta, budget).sqrt();
    gaussian_vector(&mut rng.rng(), constants.d, sd)
}

pub fn objective_perturbed_program(
    forms: &[QuadraticForm],
    delta_cap: f64,
    constants: &LossConstants,
    epsilon: f64,
    b: &DVector<f64>,
) -> Result<QuadraticProgram> {
    check_delta(delta_cap, constants, epsilon, false)?;
    QuadraticProgram::from_forms(forms, delta_cap, constants.eta)?.with_linear_noise(b)
}

/// Objective perturbation with a caller-supplied linear noise vector.
pub fn learn_objective_perturbed_with_noise(
    dataset: &Dataset,
    spec: &LossSpec,
    delta_cap: f64,
    budget: &PrivacyBudget,
    b: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<ModelVector> {
    let forms = spec.encode_dataset(dataset)?;
    let qp = objective_perturbed_program(&forms, delta_cap, &spec.constants, budget.epsilon, b)?;
    minimize_ball_constrained(&qp, cfg)?.into_model()
}

pub fn learn_objective_perturbed(
    dataset: &Dataset,
    spec: &LossSpec,
    delta_cap: f64,
    budget: &PrivacyBudget,
    rng: RngStream,
    cfg: &SolverConfig,
) -> Result<ModelVector> {
    check_delta(delta_cap, &spec.constants, budget.epsilon, false)?;
    let b = objective_noise(&spec.constants, budget, rng);
    learn_objective_perturbed_with_noise(dataset, spec, delta_cap, budget, &b, cfg)
}

/// Scale of the Gamma-distributed norm of the output noise.
pub fn output_noise_scale(zeta: f64, n: usize, reg_strength: f64, epsilon: f64) -> f64 {
    2.0 * zeta / (n as f64 * reg_strength * epsilon)
}

/// Uniform direction, norm `Gamma(d, scale)`.
pub fn output_noise(d: usize, scale: f64, rng: RngStream) -> Result<DVector<f64>> {
    if scale == 0.0 {
        return Ok(DVector::zeros(d));
    }
    let gamma = Gamma::new(d as f64, scale).map_err(|e| Error::InvalidInput(format!("output noise: {e}")))?;
    let mut g = rng.rng();
    let norm = gamma.sample(&mut g);
    let mut dir = gaussian_vector(&mut g, d, 1.0);
    while dir.norm() == 0.0 {
        dir = gaussian_vector(&mut g, d, 1.0);
    }
    let unit = dir.normalize();
    Ok(unit * norm)
}

/// Ridge problem `(1/n) sum l + (reg_strength/2) ||w||^2`.
pub fn ridge_program(forms: &[QuadraticForm], reg_strength: f64, radius: f64) -> Result<QuadraticProgram> {
    if !(reg_strength > 0.0) {
        return Err(Error::OutOfRange {
            name: "reg_strength",
            value: reg_strength,
            expected: "> 0".into(),
        });
    }
    QuadraticProgram::from_forms(forms, reg_strength * forms.len() as f64, radius)
}

pub fn learn_output_perturbed_with_noise(
    dataset: &Dataset,
    spec: &LossSpec,
    reg_strength: f64,
    v: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<ModelVector> {
    let forms = spec.encode_dataset(dataset)?;
    let qp = ridge_program(&forms, reg_strength, spec.constants.eta)?;
    let w = minimize_ball_constrained(&qp, cfg)?.into_model()?;
    if v.len() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            found: v.len(),
        });
    }
    Ok(ModelVector::from_projected(project_unchecked(
        &(w.as_vector() + v),
        spec.constants.eta,
    )))
}

pub fn learn_output_perturbed(
    dataset: &Dataset,
    spec: &LossSpec,
    reg_strength: f64,
    epsilon: f64,
    rng: RngStream,
    cfg: &SolverConfig,
) -> Result<ModelVector> {
    if !(epsilon > 0.0) {
        return Err(Error::OutOfRange {
            name: "epsilon",
            value: epsilon,
            expected: "> 0".into(),
        });
    }
    let scale = output_noise_scale(spec.constants.zeta, dataset.len(), reg_strength, epsilon);
    let v = output_noise(spec.constants.d, scale, rng)?;
    learn_output_perturbed_with_noise(dataset, spec, reg_strength, &v, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    NonPrivate,
    Input,
    Objective,
    Output,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::NonPrivate,
        Mechanism::Input,
        Mechanism::Objective,
        Mechanism::Output,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::NonPrivate => "non_private",
            Mechanism::Input => "input",
            Mechanism::Objective => "objective",
            Mechanism::Output => "output",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "non_private" | "non-private" => Ok(Mechanism::NonPrivate),
            "input" => Ok(Mechanism::Input),
            "objective" | "obj" => Ok(Mechanism::Objective),
            "output" => Ok(Mechanism::Output),
            other => Err(Error::InvalidInput(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// Serialized trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub dim: usize,
    pub w: Vec<f64>,
    pub mechanism: Mechanism,
    pub calibration: Option<NoiseCalibration>,
    pub seed: Option<u64>,
}

impl ModelArtifact {
    pub fn new(
        w: &ModelVector,
        mechanism: Mechanism,
        calibration: Option<NoiseCalibration>,
        seed: Option<u64>,
    ) -> Self {
        ModelArtifact {
            dim: w.dim(),
            w: w.iter().copied().collect(),
            mechanism,
            calibration,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Example;
    use crate::loss::empirical_objective;
    use rand::Rng;

    fn qp(a: DMatrix<f64>, b_lin: DVector<f64>, radius: f64) -> QuadraticProgram {
        QuadraticProgram {
            a,
            b_lin,
            c0: 0.0,
            reg: 0.0,
            n: 1,
            radius,
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let cfg = SolverConfig::default();
        let p = |eta| qp(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, -6.0), eta);
        let w = minimize_ball_constrained(&p(1.0), &cfg).unwrap();
        assert!(w.converged);
        assert!((w.w[0] - 1.0).abs() < 1e-10);
        let w = minimize_ball_constrained(&p(10.0), &cfg).unwrap();
        assert!((w.w[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn identity_with_zero_linear_term() {
        let mut p = qp(DMatrix::identity(3, 3), DVector::zeros(3), 1.0);
        p.reg = 5.0;
        p.n = 7;
        let s = minimize_ball_constrained(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.w.as_vector(), &DVector::zeros(3));
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn zero_matrix_uses_unit_step() {
        let p = qp(DMatrix::zeros(2, 2), DVector::from_vec(vec![-1.0, 0.0]), 2.0);
        let s = minimize_ball_constrained(&p, &SolverConfig::default()).unwrap();
        assert!(s.converged);
        assert!((s.w[0] - 2.0).abs() < 1e-12 && s.w[1].abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-6]));
        let p = qp(a, DVector::from_vec(vec![-0.1, -1e-7]), 10.0);
        let cfg = SolverConfig {
            max_iter: 3,
            ..SolverConfig::default()
        };
        let s = minimize_ball_constrained(&p, &cfg).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 3);
        assert!(matches!(s.into_model(), Err(Error::NotConverged { iterations: 3, .. })));
    }

    #[test]
    fn exact_least_squares_single_point() {
        let ds = Dataset::new(vec![Example::from_slice(&[1.0], 0.5)]).unwrap();
        let spec = LossSpec::linear_regression(1, 1.0).unwrap();
        let w = learn_non_private(&ds, &spec, 0.0, &SolverConfig::default()).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-10);
    }

    fn random_dataset(seed: u64, n: usize, d: usize) -> Dataset {
        let mut g = RngStream::new(seed, 0).rng();
        let ex = (0..n)
            .map(|_| {
                let mut x = gaussian_vector(&mut g, d, 1.0);
                let r: f64 = g.random::<f64>().powf(1.0 / d as f64);
                x *= r / x.norm();
                Example::new(x, g.random_range(-1.0..1.0))
            })
            .collect();
        Dataset::new(ex).unwrap()
    }

    #[test]
    fn assembly_reproduces_empirical_objective() {
        let ds = random_dataset(3, 40, 4);
        let spec = LossSpec::linear_regression(4, 1.0).unwrap();
        let p = QuadraticProgram::from_forms(&spec.encode_dataset(&ds).unwrap(), 3.0, 1.0).unwrap();
        assert_eq!(p.a, p.a.transpose());
        let mut g = RngStream::new(4, 0).rng();
        for _ in 0..20 {
            let w = gaussian_vector(&mut g, 4, 0.5);
            let direct = empirical_objective(&ds, &spec, &w, 3.0).unwrap();
            assert!((p.objective(&w) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn input_perturbed_rejects_small_cap() {
        let c = LossConstants::new(2.0, 1.0, 1.0, 1).unwrap();
        let e = vec![PerturbedExample {
            q_tilde: DVector::from_element(1, 1.0),
            p_tilde: DVector::from_element(1, 1.0),
            s: 0.0,
        }];
        let err = learn_input_perturbed(&e, 2.0, &c, 1.0, &SolverConfig::default()).unwrap_err();
        assert!(err.to_string().contains("2 lambda / epsilon = 2"));
        assert!(learn_input_perturbed(&e, 2.5, &c, 1.0, &SolverConfig::default()).is_ok());
    }

    #[test]
    fn output_noise_mean_norm() {
        let scale = output_noise_scale(2.0, 100, 1e-2, 1.0);
        let m = 10_000;
        let root = RngStream::new(2, 0);
        let mean: f64 = (0..m)
            .map(|k| output_noise(5, scale, root.substream(k)).unwrap().norm())
            .sum::<f64>()
            / m as f64;
        let expect = 5.0 * scale;
        assert!((mean - expect).abs() <= 0.05 * expect, "{mean} vs {expect}");
    }

    #[test]
    fn output_zero_noise_is_ridge() {
        let ds = random_dataset(5, 30, 3);
        let spec = LossSpec::linear_regression(3, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let w = learn_output_perturbed_with_noise(&ds, &spec, 0.1, &DVector::zeros(3), &cfg).unwrap();
        let qp = ridge_program(&spec.encode_dataset(&ds).unwrap(), 0.1, 1.0).unwrap();
        let r = minimize_ball_constrained(&qp, &cfg).unwrap();
        assert_eq!(w, r.w);
        let a = learn_output_perturbed(&ds, &spec, 0.1, 1.0, RngStream::new(1, 1), &cfg).unwrap();
        let b = learn_output_perturbed(&ds, &spec, 0.1, 1.0, RngStream::new(1, 1), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.norm() <= 1.0);
    }

    #[test]
    fn mechanism_names_round_trip() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }
}
