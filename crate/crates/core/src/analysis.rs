//! Utility metrics, exact identity checks and Monte-Carlo oracles for the
//! probabilistic bounds behind the privacy and utility guarantees.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::function::erf::erfc;

use crate::calibration::{delta0_bounds, gaussian_c, local_dp_level, local_dp_rate_limit, sigma_u_threshold};
use crate::domain::{Dataset, ModelVector, PrivacyBudget};
use crate::error::{Error, Result};
use crate::loss::{loss_value, LossSpec};
pub use crate::perturb::NoiseRecord;
use crate::perturb::PerturbedExample;
use crate::rng::{gaussian_vector, RngStream};
use crate::solver::{minimize_ball_constrained, QuadraticProgram, SolverConfig};

/// Round-off allowance below zero before an excess risk is reported as negative.
pub const EXCESS_ROUNDOFF: f64 = 1e-10;

/// `J(w) - J(w_hat)` with both evaluated on the unregularized empirical objective.
/// Values in `[-1e-10, 0)` are clamped to zero.
pub fn excess_against(w: &DVector<f64>, w_hat: &DVector<f64>, dataset: &Dataset, spec: &LossSpec) -> Result<f64> {
    let n = dataset.len() as f64;
    let mut gap = 0.0;
    for e in dataset.examples() {
        let f = spec.encode(e)?;
        gap += loss_value(&f, w)? - loss_value(&f, w_hat)?;
    }
    Ok(clamp_excess(gap / n))
}

pub(crate) fn clamp_excess(gap: f64) -> f64 {
    if (-EXCESS_ROUNDOFF..0.0).contains(&gap) {
        0.0
    } else {
        gap
    }
}

/// Excess empirical risk against the non-private minimizer, refit here.
pub fn excess_empirical_risk(w: &ModelVector, dataset: &Dataset, spec: &LossSpec, cfg: &SolverConfig) -> Result<f64> {
    let w_hat = crate::solver::learn_non_private(dataset, spec, 0.0, cfg)?;
    excess_against(w.as_vector(), w_hat.as_vector(), dataset, spec)
}

fn rows_matrix<'a>(rows: impl Iterator<Item = &'a DVector<f64>>, n: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    for (i, r) in rows.enumerate() {
        m.set_row(i, &r.transpose());
    }
    m
}

/// `U^T U + U^T Q + Q^T U`.
pub fn delta0_matrix(u: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let uq = u.tr_mul(q);
    let m = u.tr_mul(u) + &uq + uq.transpose();
    (&m + m.transpose()) * 0.5
}

/// Both sides of the rearrangement of the server objective:
///
/// `lhs` is the server objective evaluated directly on the released statistics.
/// `rhs` is `(1/n) sum l(w; z_i) + b^T w / n + w^T (U^T U + U^T Q + Q^T U) w / (2n)
/// + (Delta - 2 lambda / epsilon) / (2n) ||w||^2`, assembled from raw data and noise.
pub fn reconstruct_objective_identity(
    dataset: &Dataset,
    spec: &LossSpec,
    perturbed: &[PerturbedExample],
    record: &NoiseRecord,
    w: &DVector<f64>,
    delta_cap: f64,
    epsilon: f64,
) -> Result<(f64, f64)> {
    let n = dataset.len();
    let d = spec.constants.d;
    if perturbed.len() != n || record.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if perturbed.len() != n {
                perturbed.len()
            } else {
                record.n()
            },
        });
    }
    if record.dim() != d || w.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if w.len() != d { w.len() } else { record.dim() },
        });
    }
    let nf = n as f64;
    let ridge = (delta_cap - 2.0 * spec.constants.lambda / epsilon) / (2.0 * nf) * w.norm_squared();

    let mut lhs = 0.0;
    for e in perturbed {
        let qw = e.q_tilde.dot(w);
        lhs += 0.5 * qw * qw - e.p_tilde.dot(w) + e.s;
    }
    let lhs = lhs / nf + ridge;

    let forms = spec.encode_dataset(dataset)?;
    let mut raw = 0.0;
    for f in &forms {
        raw += loss_value(f, w)?;
    }
    let q = rows_matrix(forms.iter().map(|f| &f.q), n, d);
    let m = delta0_matrix(&record.u, &q);
    let rhs = raw / nf + record.b.dot(w) / nf + w.dot(&(&m * w)) / (2.0 * nf) + ridge;
    Ok((lhs, rhs))
}

/// One draw of `w^T (U^T U + U^T Q + Q^T U) w` with fresh `U` of rows
/// `N(0, sigma_u^2 / n I)`.
pub fn delta0_sample(q: &DMatrix<f64>, sigma_u: f64, w: &DVector<f64>, rng: RngStream) -> f64 {
    let (n, d) = q.shape();
    let sd = sigma_u / (n as f64).sqrt();
    let mut g = rng.rng();
    let mut u = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut g);
            u[(i, j)] = sd * z;
        }
    }
    let uw = &u * w;
    let qw = q * w;
    uw.norm_squared() + 2.0 * uw.dot(&qw)
}

/// `trials` independent samples; sample `k` uses `rng.substream(k)`.
pub fn delta0_samples(
    q: &DMatrix<f64>,
    sigma_u: f64,
    w: &DVector<f64>,
    trials: usize,
    rng: RngStream,
) -> Result<Vec<f64>> {
    check_unit(w, q.ncols())?;
    Ok((0..trials as u64)
        .into_par_iter()
        .map(|k| delta0_sample(q, sigma_u, w, rng.substream(k)))
        .collect())
}

fn check_unit(w: &DVector<f64>, d: usize) -> Result<()> {
    if w.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: w.len(),
        });
    }
    if (w.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "probe vector must have unit norm, has {}",
            w.norm()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub hits: usize,
    /// Claimed lower bound on the probability of the event.
    pub target: f64,
    /// Binomial standard error at the claimed probability.
    pub stderr: f64,
}

impl CoverageReport {
    pub fn new(trials: usize, hits: usize, target: f64) -> Self {
        CoverageReport {
            trials,
            hits,
            target,
            stderr: (target * (1.0 - target) / trials as f64).sqrt(),
        }
    }

    pub fn frequency(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }

    /// `frequency >= target - 3 stderr`.
    pub fn threshold(&self) -> f64 {
        self.target - 3.0 * self.stderr
    }

    pub fn passes(&self) -> bool {
        self.frequency() >= self.threshold()
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 1000 {
        return Err(Error::Precondition(format!("need at least 1000 trials, got {trials}")));
    }
    Ok(())
}

/// Frequency with which the sample falls inside `[lower, upper]` of the bounds at
/// `(n, gamma)`, against the claimed `1 - gamma`.
pub fn delta0_coverage(
    q: &DMatrix<f64>,
    sigma_u: f64,
    w: &DVector<f64>,
    gamma: f64,
    lambda: f64,
    trials: usize,
    rng: RngStream,
) -> Result<CoverageReport> {
    check_trials(trials)?;
    let (n, d) = q.shape();
    let bounds = delta0_bounds(n, gamma, sigma_u, lambda, d);
    let samples = delta0_samples(q, sigma_u, w, trials, rng)?;
    let hits = samples.iter().filter(|&&v| bounds.contains(v)).count();
    Ok(CoverageReport::new(trials, hits, 1.0 - gamma))
}

/// Frequency of `Delta_0 >= offset`, the event that enables the privacy proof when
/// `offset = 2 lambda / epsilon`.
pub fn privacy_condition_coverage(
    q: &DMatrix<f64>,
    sigma_u: f64,
    w: &DVector<f64>,
    gamma: f64,
    offset: f64,
    trials: usize,
    rng: RngStream,
) -> Result<CoverageReport> {
    check_trials(trials)?;
    let samples = delta0_samples(q, sigma_u, w, trials, rng)?;
    let hits = samples.iter().filter(|&&v| v >= offset).count();
    Ok(CoverageReport::new(trials, hits, 1.0 - gamma))
}

/// `n x d` matrix whose rows are uniform on the sphere of radius `row_norm`.
pub fn oracle_q(n: usize, d: usize, row_norm: f64, rng: RngStream) -> DMatrix<f64> {
    let mut g = rng.rng();
    let mut q = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut v = gaussian_vector(&mut g, d, 1.0);
        while v.norm() == 0.0 {
            v = gaussian_vector(&mut g, d, 1.0);
        }
        v *= row_norm / v.norm();
        q.set_row(i, &v.transpose());
    }
    q
}

/// Row norm `min(lambda, lambda sqrt(d / n))`, so that `||Q||_F <= sqrt(d) lambda`.
pub fn frobenius_row_norm(n: usize, d: usize, lambda: f64) -> f64 {
    lambda * (d as f64 / n as f64).sqrt().min(1.0)
}

/// First canonical basis vector followed by `extra` random unit vectors.
pub fn probe_vectors(d: usize, extra: usize, rng: RngStream) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 })];
    let mut g = rng.rng();
    for _ in 0..extra {
        let v = gaussian_vector(&mut g, d, 1.0);
        out.push(v.normalize());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTails {
    /// Frequency of `Z - m >= 2 sqrt(m t) + 2t`.
    pub upper: f64,
    /// Frequency of `m - Z >= 2 sqrt(m t)`.
    pub lower: f64,
    /// `e^{-t}`, the claimed bound on both.
    pub bound: f64,
    pub trials: usize,
}

impl ChiSquareTails {
    pub fn stderr(&self) -> f64 {
        (self.bound * (1.0 - self.bound).max(0.0) / self.trials as f64).sqrt()
    }

    pub fn passes(&self) -> bool {
        let lim = self.bound + 3.0 * self.stderr();
        self.upper <= lim && self.lower <= lim
    }
}

pub fn tail_check_chi_square(m: usize, t: f64, trials: usize, rng: RngStream) -> Result<ChiSquareTails> {
    if m == 0 || !(t > 0.0) || trials == 0 {
        return Err(Error::Precondition(format!(
            "need m >= 1, t > 0, trials >= 1 (m = {m}, t = {t})"
        )));
    }
    let chi = ChiSquared::new(m as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mf = m as f64;
    let up = 2.0 * (mf * t).sqrt() + 2.0 * t;
    let lo = 2.0 * (mf * t).sqrt();
    let chunks = chunk_counts(trials, rng, |g| {
        let z = chi.sample(g);
        ((z - mf >= up) as usize, (mf - z >= lo) as usize)
    });
    Ok(ChiSquareTails {
        upper: chunks.0 as f64 / trials as f64,
        lower: chunks.1 as f64 / trials as f64,
        bound: (-t).exp(),
        trials,
    })
}

const CHUNK: usize = 4096;

/// Splits `trials` into fixed-size chunks, chunk `k` on `rng.substream(k)`, and
/// sums the two counters.
fn chunk_counts<F>(trials: usize, rng: RngStream, f: F) -> (usize, usize)
where
    F: Fn(&mut rand_chacha::ChaCha20Rng) -> (usize, usize) + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<(usize, usize)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let len = CHUNK.min(trials - k * CHUNK);
            let mut g = rng.substream(k as u64).rng();
            (0..len).fold((0, 0), |acc, _| {
                let (a, b) = f(&mut g);
                (acc.0 + a, acc.1 + b)
            })
        })
        .collect();
    parts.iter().fold((0, 0), |acc, p| (acc.0 + p.0, acc.1 + p.1))
}

/// Monte-Carlo frequency of `|Z| > t` for standard normal `Z`; the bound
/// `e^{-t^2/2}` is claimed for `t > 1` only.
pub fn tail_check_gaussian(t: f64, trials: usize, rng: RngStream) -> Result<f64> {
    if !(t > 1.0) {
        return Err(Error::OutOfRange {
            name: "t",
            value: t,
            expected: "> 1: the Gaussian tail bound is only claimed there".into(),
        });
    }
    if trials == 0 {
        return Err(Error::Precondition("need at least one trial".into()));
    }
    let (hits, _) = chunk_counts(trials, rng, |g| {
        let z: f64 = StandardNormal.sample(g);
        ((z.abs() > t) as usize, 0)
    });
    Ok(hits as f64 / trials as f64)
}

/// `P(|Z| > t) = erfc(t / sqrt 2)`.
pub fn gaussian_two_sided_tail(t: f64) -> f64 {
    erfc(t / std::f64::consts::SQRT_2)
}

fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Grid supremum over half-lines of `P[M(x) in S] - e^eps P[M(x') in S]` for the
/// 1-D Gaussian mechanism, with `|x - x'| = diameter`, over both orderings of the
/// pair and both tail orientations. Never negative.
pub fn dp_verifier_gaussian_1d(diameter: f64, sigma: f64, epsilon: f64, grid_size: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::OutOfRange {
            name: "sigma",
            value: sigma,
            expected: "> 0".into(),
        });
    }
    if grid_size < 1000 {
        return Err(Error::Precondition(format!(
            "need at least 1000 thresholds, got {grid_size}"
        )));
    }
    let (x, x2): (f64, f64) = (0.0, diameter.abs());
    let lo = x.min(x2) - 10.0 * sigma;
    let hi = x.max(x2) + 10.0 * sigma;
    let e = epsilon.exp();
    let mut best: f64 = 0.0;
    for k in 0..grid_size {
        let tau = lo + (hi - lo) * k as f64 / (grid_size - 1) as f64;
        for (a, b) in [(x, x2), (x2, x)] {
            // Right half-line {y > tau} and left half-line {y <= tau}.
            let right = upper_tail((tau - a) / sigma) - e * upper_tail((tau - b) / sigma);
            let left = upper_tail((a - tau) / sigma) - e * upper_tail((b - tau) / sigma);
            best = best.max(right).max(left);
        }
    }
    Ok(best)
}

/// Quantities behind the distance and suboptimality bounds for the input
/// perturbed minimizer relative to the minimizer of the same objective without
/// the linear noise term.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtilityLemmaCheck {
    /// Smallest eigenvalue of `U^T U + U^T Q + Q^T U`.
    pub delta0: f64,
    pub b_norm: f64,
    /// `Delta + Delta_0 - 2 lambda / epsilon`.
    pub effective_reg: f64,
    pub distance: f64,
    /// `2 ||b|| / effective_reg`.
    pub distance_bound: f64,
    pub gap: f64,
    /// `2 ||b||^2 / (n effective_reg)`.
    pub gap_bound: f64,
}

impl UtilityLemmaCheck {
    pub fn applicable(&self) -> bool {
        self.delta0 >= 0.0 && self.effective_reg > 0.0
    }

    pub fn passes(&self) -> bool {
        self.distance <= self.distance_bound && self.gap <= self.gap_bound
    }
}

pub fn utility_lemma_check(
    dataset: &Dataset,
    spec: &LossSpec,
    perturbed: &[PerturbedExample],
    record: &NoiseRecord,
    delta_cap: f64,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<UtilityLemmaCheck> {
    let n = dataset.len();
    let d = spec.constants.d;
    let forms = spec.encode_dataset(dataset)?;
    let q = rows_matrix(forms.iter().map(|f| &f.q), n, d);
    let m = delta0_matrix(&record.u, &q);
    let delta0 = SymmetricEigen::new(m).eigenvalues.min();

    let qp_in = crate::solver::input_perturbed_program(perturbed, delta_cap, &spec.constants, epsilon)?;
    let mut qp_sharp: QuadraticProgram = qp_in.clone();
    qp_sharp.b_lin -= &record.b / n as f64;
    let w_in = minimize_ball_constrained(&qp_in, cfg)?.into_model()?;
    let w_sharp = minimize_ball_constrained(&qp_sharp, cfg)?.into_model()?;

    let effective_reg = delta_cap + delta0 - 2.0 * spec.constants.lambda / epsilon;
    let b_norm = record.b.norm();
    Ok(UtilityLemmaCheck {
        delta0,
        b_norm,
        effective_reg,
        distance: (w_in.as_vector() - w_sharp.as_vector()).norm(),
        distance_bound: 2.0 * b_norm / effective_reg,
        gap: qp_sharp.objective(&w_in) - qp_sharp.objective(&w_sharp),
        gap_bound: 2.0 * b_norm * b_norm / (n as f64 * effective_reg),
    })
}

/// One entry of a verification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub params: serde_json::Value,
    pub statistic: f64,
    pub bound: f64,
    pub pass: bool,
}

impl VerificationReport {
    fn at_most(check: &str, params: serde_json::Value, statistic: f64, bound: f64) -> Self {
        VerificationReport {
            check: check.into(),
            params: with_relation(params, "<="),
            statistic,
            bound,
            pass: statistic <= bound,
        }
    }

    fn at_least(check: &str, params: serde_json::Value, statistic: f64, bound: f64) -> Self {
        VerificationReport {
            check: check.into(),
            params: with_relation(params, ">="),
            statistic,
            bound,
            pass: statistic >= bound,
        }
    }

    /// Entries reported for context only; they do not gate the suite.
    pub fn is_informational(&self) -> bool {
        self.params
            .get("informational")
            .and_then(|v| v.as_bool())
            .unwrap_or(false)
    }
}

fn with_relation(mut params: serde_json::Value, rel: &str) -> serde_json::Value {
    if let Some(obj) = params.as_object_mut() {
        obj.insert("relation".into(), json!(rel));
    }
    params
}

/// Sizes of the Monte-Carlo loops in [`run_verification_suite`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSize {
    pub coverage_trials: usize,
    pub tail_trials: usize,
    pub identity_instances: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        SuiteSize {
            coverage_trials: 10_000,
            tail_trials: 100_000,
            identity_instances: 100,
        }
    }
}

pub const CHI_SQUARE_GRID: [(usize, f64); 8] = [
    (1, 0.1),
    (1, 1.0),
    (10, 0.5),
    (10, 2.0),
    (100, 1.0),
    (100, 3.0),
    (1000, 0.5),
    (1000, 5.0),
];
pub const GAUSSIAN_TAIL_GRID: [f64; 5] = [1.0001, 1.5, 2.0, 3.0, 4.0];

/// Every statistical and exact check, seeded from `seed`.
pub fn run_verification_suite(seed: u64, size: SuiteSize) -> Result<Vec<VerificationReport>> {
    let root = RngStream::new(seed, 0);
    let mut out = Vec::new();

    out.push(identity_check(root.derive("identity"), size.identity_instances)?);

    let (n, d, gamma, lambda, eps) = (1000usize, 14usize, 0.005, 1.0, 1.0);
    let sigma_u = sigma_u_threshold(n, gamma, d, lambda, eps)?;
    let probe = probe_vectors(d, 0, root).remove(0);
    for (label, row_norm, informational) in [
        ("frobenius", frobenius_row_norm(n, d, lambda), false),
        ("unit_rows", lambda, true),
    ] {
        let q = oracle_q(n, d, row_norm, root.derive(label));
        let stream = root.derive("coverage").derive(label);
        let samples = delta0_samples(&q, sigma_u, &probe, size.coverage_trials, stream)?;
        let b = delta0_bounds(n, gamma, sigma_u, lambda, d);
        let cov = CoverageReport::new(
            samples.len(),
            samples.iter().filter(|&&v| b.contains(v)).count(),
            1.0 - gamma,
        );
        let priv_hits = samples.iter().filter(|&&v| v >= 2.0 * lambda / eps).count();
        let pc = CoverageReport::new(samples.len(), priv_hits, 1.0 - gamma);
        let params = json!({
            "n": n, "d": d, "gamma": gamma, "sigma_u": sigma_u, "q_rows": label,
            "q_row_norm": row_norm, "trials": cov.trials, "informational": informational,
        });
        out.push(VerificationReport::at_least(
            "delta0_coverage",
            params.clone(),
            cov.frequency(),
            cov.threshold(),
        ));
        out.push(VerificationReport::at_least(
            "privacy_condition",
            params,
            pc.frequency(),
            pc.threshold(),
        ));
    }

    for (k, &(m, t)) in CHI_SQUARE_GRID.iter().enumerate() {
        let r = tail_check_chi_square(m, t, size.tail_trials, root.derive("chi2").substream(k as u64))?;
        let lim = r.bound + 3.0 * r.stderr();
        let p = json!({"m": m, "t": t, "trials": r.trials});
        out.push(VerificationReport::at_most(
            "chi_square_upper_tail",
            p.clone(),
            r.upper,
            lim,
        ));
        out.push(VerificationReport::at_most("chi_square_lower_tail", p, r.lower, lim));
    }
    for (k, &t) in GAUSSIAN_TAIL_GRID.iter().enumerate() {
        let freq = tail_check_gaussian(t, size.tail_trials, root.derive("gauss").substream(k as u64))?;
        let bound = (-t * t / 2.0).exp();
        let se = (bound * (1.0 - bound) / size.tail_trials as f64).sqrt();
        out.push(VerificationReport::at_most(
            "gaussian_tail",
            json!({"t": t, "trials": size.tail_trials, "exact": gaussian_two_sided_tail(t)}),
            freq,
            bound + 3.0 * se,
        ));
    }

    let budget = PrivacyBudget::new(0.5, 0.01)?;
    let sigma = gaussian_c(budget.delta) * 1.0 / budget.epsilon;
    let calibrated = dp_verifier_gaussian_1d(1.0, sigma, budget.epsilon, 10_000)?;
    let weak = dp_verifier_gaussian_1d(1.0, 0.1 * sigma, budget.epsilon, 10_000)?;
    let p = json!({"epsilon": 0.5, "delta": 0.01, "diameter": 1.0, "grid": 10_000});
    out.push(VerificationReport::at_most(
        "dp_verifier_calibrated",
        with_sigma(&p, sigma),
        calibrated,
        budget.delta,
    ));
    out.push(VerificationReport {
        pass: weak > budget.delta,
        ..VerificationReport::at_least(
            "dp_verifier_detects_violation",
            with_sigma(&p, 0.1 * sigma),
            weak,
            budget.delta,
        )
    });

    let b = PrivacyBudget::new(1.0, 0.01)?;
    let c = crate::domain::LossConstants::new(2.0, 1.0, 1.0, 14)?;
    let cal = crate::calibration::calibrate(b, 100_000_000, c, crate::calibration::DEFAULT_SLACK)?;
    let ratio = local_dp_level(&cal, 2.0, 2.0).epsilon / (cal.n as f64 * b.epsilon).sqrt();
    let limit = local_dp_rate_limit(c.lambda, &b);
    out.push(VerificationReport::at_most(
        "local_dp_rate_limit",
        json!({"n": cal.n, "limit": limit, "ratio": ratio}),
        (ratio - limit).abs() / limit,
        0.01,
    ));

    out.extend(utility_lemma_reports(root.derive("utility"), 20)?);
    Ok(out)
}

fn with_sigma(p: &serde_json::Value, sigma: f64) -> serde_json::Value {
    let mut p = p.clone();
    p["sigma"] = json!(sigma);
    p
}

/// Small random instance of the regression problem inside the unit ball.
pub fn random_regression_instance(n: usize, d: usize, rng: RngStream) -> Result<Dataset> {
    use rand::Rng;
    let mut g = rng.rng();
    let mut ex = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = gaussian_vector(&mut g, d, 1.0);
        let r: f64 = g.random::<f64>().powf(1.0 / d as f64);
        let norm = x.norm();
        if norm > 0.0 {
            x *= r / norm;
        }
        ex.push(crate::domain::Example::new(x, g.random_range(-1.0..=1.0)));
    }
    Dataset::new(ex)
}

fn identity_check(rng: RngStream, instances: usize) -> Result<VerificationReport> {
    let (n, d) = (50, 5);
    let spec = LossSpec::linear_regression(d, 1.0)?;
    let budget = PrivacyBudget::new(1.0, 0.01)?;
    let cal = crate::calibration::calibrate(budget, n, spec.constants, crate::calibration::DEFAULT_SLACK)?;
    let delta_cap = crate::calibration::recommend_delta(&spec.constants, &budget, spec.constants.eta)?;
    let worst = (0..instances as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let s = rng.substream(k);
            let ds = random_regression_instance(n, d, s.derive("data"))?;
            let (pert, rec) = crate::perturb::perturb_dataset_recorded(&ds, &spec, &cal, s.derive("noise"))?;
            let mut g = s.derive("w").rng();
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let w = gaussian_vector(&mut g, d, 0.5);
                let (lhs, rhs) =
                    reconstruct_objective_identity(&ds, &spec, &pert, &rec, &w, delta_cap, budget.epsilon)?;
                worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(VerificationReport::at_most(
        "objective_identity",
        json!({"n": n, "d": d, "instances": instances, "points_per_instance": 20, "scaled_by": "1 + |lhs|"}),
        worst,
        1e-9,
    ))
}

fn utility_lemma_reports(rng: RngStream, trials: usize) -> Result<Vec<VerificationReport>> {
    let (n, d) = (200, 5);
    let spec = LossSpec::linear_regression(d, 1.0)?;
    let budget = PrivacyBudget::new(1.0, 0.01)?;
    let cal = crate::calibration::calibrate(budget, n, spec.constants, crate::calibration::DEFAULT_SLACK)?;
    let delta_cap = crate::calibration::recommend_delta(&spec.constants, &budget, spec.constants.eta)?;
    let cfg = SolverConfig::default();
    let checks = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let s = rng.substream(k);
            let ds = random_regression_instance(n, d, s.derive("data"))?;
            let (pert, rec) = crate::perturb::perturb_dataset_recorded(&ds, &spec, &cal, s.derive("noise"))?;
            utility_lemma_check(&ds, &spec, &pert, &rec, delta_cap, budget.epsilon, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let applicable: Vec<_> = checks.iter().filter(|c| c.applicable()).collect();
    let worst_dist = applicable
        .iter()
        .map(|c| c.distance / c.distance_bound)
        .fold(0.0, f64::max);
    let worst_gap = applicable.iter().map(|c| c.gap / c.gap_bound).fold(0.0, f64::max);
    let p = json!({"n": n, "d": d, "trials": trials, "applicable": applicable.len(), "delta_cap": delta_cap});
    Ok(vec![
        VerificationReport::at_most("utility_distance_ratio", p.clone(), worst_dist, 1.0),
        VerificationReport::at_most("utility_gap_ratio", p, worst_gap, 1.0),
    ])
}
