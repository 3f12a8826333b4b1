use approx::assert_relative_eq;
use inperturb::analysis::{
    delta0_coverage, delta0_samples, dp_verifier_gaussian_1d, excess_empirical_risk, frobenius_row_norm,
    gaussian_two_sided_tail, oracle_q, probe_vectors, random_regression_instance, reconstruct_objective_identity,
    tail_check_chi_square, tail_check_gaussian,
};
use inperturb::calibration::{calibrate, DEFAULT_SLACK};
use inperturb::domain::project_to_ball;
use inperturb::loss::empirical_objective;
use inperturb::perturb::{perturb_dataset_recorded, NoiseRecord};
use inperturb::solver::{learn_non_private, SolverConfig};
use inperturb::{LossSpec, PrivacyBudget, RngStream};
use nalgebra::{DMatrix, DVector};

fn unit(d: usize) -> DVector<f64> {
    DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 })
}

#[test]
fn identity_without_noise_is_the_shifted_objective() {
    let (n, d) = (40, 3);
    let spec = LossSpec::linear_regression(d, 1.0).unwrap();
    let ds = random_regression_instance(n, d, RngStream::new(1, 0)).unwrap();
    let cal = calibrate(PrivacyBudget::new(1.0, 0.01).unwrap(), n, spec.constants, DEFAULT_SLACK)
        .unwrap()
        .with_variances(0.0, 0.0);
    let (pert, rec) = perturb_dataset_recorded(&ds, &spec, &cal, RngStream::new(1, 1)).unwrap();
    assert_eq!(rec, NoiseRecord::zeros(n, d));
    let cap = 5.0;
    let w = DVector::from_vec(vec![0.3, -0.2, 0.1]);
    let (lhs, rhs) = reconstruct_objective_identity(&ds, &spec, &pert, &rec, &w, cap, 1.0).unwrap();
    let base = empirical_objective(&ds, &spec, &w, 0.0).unwrap();
    let want = base + (cap - 2.0) / (2.0 * n as f64) * w.norm_squared();
    assert_relative_eq!(lhs, want, max_relative = 1e-12);
    assert_relative_eq!(rhs, want, max_relative = 1e-12);
}

#[test]
fn identity_at_the_origin_is_the_mean_constant() {
    let (n, d) = (40, 3);
    let spec = LossSpec::linear_regression(d, 1.0).unwrap();
    let ds = random_regression_instance(n, d, RngStream::new(2, 0)).unwrap();
    let budget = PrivacyBudget::new(1.0, 0.01).unwrap();
    let cal = calibrate(budget, n, spec.constants, DEFAULT_SLACK).unwrap();
    let (pert, rec) = perturb_dataset_recorded(&ds, &spec, &cal, RngStream::new(2, 1)).unwrap();
    let w = DVector::zeros(d);
    let (lhs, rhs) = reconstruct_objective_identity(&ds, &spec, &pert, &rec, &w, 4.0, 1.0).unwrap();
    let mean_s: f64 = ds.examples().iter().map(|e| e.y * e.y / 2.0).sum::<f64>() / n as f64;
    assert_relative_eq!(lhs, mean_s, max_relative = 1e-12);
    assert_relative_eq!(rhs, mean_s, max_relative = 1e-12);
}

#[test]
fn excess_is_the_objective_difference() {
    let spec = LossSpec::linear_regression(3, 1.0).unwrap();
    let ds = random_regression_instance(60, 3, RngStream::new(3, 0)).unwrap();
    let cfg = SolverConfig::default();
    let w_hat = learn_non_private(&ds, &spec, 0.0, &cfg).unwrap();
    let w = project_to_ball(&DVector::from_vec(vec![0.5, 0.5, -0.5]), 1.0).unwrap();
    let excess = excess_empirical_risk(&w, &ds, &spec, &cfg).unwrap();
    let direct = empirical_objective(&ds, &spec, w.as_vector(), 0.0).unwrap()
        - empirical_objective(&ds, &spec, w_hat.as_vector(), 0.0).unwrap();
    assert_relative_eq!(excess, direct, max_relative = 1e-9);
    assert!(excess_empirical_risk(&w_hat, &ds, &spec, &cfg).unwrap().abs() < 1e-10);
}

#[test]
fn quadratic_term_with_zero_data_has_mean_sigma_u_squared() {
    let (n, d, sigma_u, trials) = (200, 3, 0.7, 4000);
    let q = DMatrix::zeros(n, d);
    let s = delta0_samples(&q, sigma_u, &unit(d), trials, RngStream::new(4, 0)).unwrap();
    let mean = s.iter().sum::<f64>() / trials as f64;
    // The sample is sigma_u^2 chi2_n / n with variance 2 sigma_u^4 / n.
    let se = (2.0 / n as f64).sqrt() * sigma_u * sigma_u / (trials as f64).sqrt();
    assert!((mean - sigma_u * sigma_u).abs() < 3.0 * se, "mean {mean}");
}

#[test]
fn coverage_meets_its_claim_across_a_grid() {
    let lambda = 1.0;
    for &(n, d, gamma, sigma_u) in &[
        (50, 2, 0.05, 1.0),
        (200, 5, 0.01, 2.0),
        (1000, 10, 0.1, 1.5),
        (400, 1, 0.2, 0.5),
    ] {
        let q = oracle_q(n, d, frobenius_row_norm(n, d, lambda), RngStream::new(n as u64, 1));
        for (k, w) in probe_vectors(d, 3, RngStream::new(n as u64, 2)).iter().enumerate() {
            let rep = delta0_coverage(
                &q,
                sigma_u,
                w,
                gamma,
                lambda,
                2000,
                RngStream::new(n as u64, 3 + k as u64),
            )
            .unwrap();
            assert!(rep.passes(), "n {n} d {d} gamma {gamma}: {rep:?}");
        }
    }
}

#[test]
fn coverage_degenerate_cases() {
    let q = oracle_q(100, 2, frobenius_row_norm(100, 2, 1.0), RngStream::new(5, 0));
    let loose = delta0_coverage(&q, 1.0, &unit(2), 0.5, 1.0, 2000, RngStream::new(5, 1)).unwrap();
    assert!(loose.frequency() >= 0.5 - 3.0 * loose.stderr);
    let silent = delta0_coverage(&q, 0.0, &unit(2), 0.05, 1.0, 1000, RngStream::new(5, 2)).unwrap();
    assert_eq!(silent.hits, silent.trials);
    assert!(delta0_coverage(&q, 1.0, &unit(2), 0.05, 1.0, 999, RngStream::new(5, 3)).is_err());
}

#[test]
fn tail_checks() {
    let chi = tail_check_chi_square(100, 3.0, 20_000, RngStream::new(6, 0)).unwrap();
    assert!(chi.passes(), "{chi:?}");
    let far = tail_check_chi_square(10, 50.0, 20_000, RngStream::new(6, 1)).unwrap();
    assert_eq!(far.upper, 0.0);
    assert_eq!(far.lower, 0.0);

    let mut prev = 1.0;
    for (k, t) in [1.1, 1.5, 2.0, 3.0].into_iter().enumerate() {
        let f = tail_check_gaussian(t, 50_000, RngStream::new(6, 10 + k as u64)).unwrap();
        assert!(f <= prev);
        prev = f;
        let p = gaussian_two_sided_tail(t);
        let se = (p * (1.0 - p) / 50_000.0).sqrt();
        assert!((f - p).abs() < 4.0 * se.max(1e-5), "t {t}: {f} vs {p}");
    }
    assert!(tail_check_gaussian(1.0, 10_000, RngStream::new(6, 20)).is_err());
}

#[test]
fn verifier_delta_falls_as_noise_grows() {
    let mut prev = f64::INFINITY;
    for sigma in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
        let d = dp_verifier_gaussian_1d(2.0, sigma, 0.5, 2000).unwrap();
        assert!(d <= prev + 1e-15, "sigma {sigma}: {d} > {prev}");
        prev = d;
    }
    assert!(prev < 1e-6);
}
