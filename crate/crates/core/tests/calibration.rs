use approx::assert_relative_eq;
use inperturb::calibration::{
    calibrate, delta0_bounds, local_dp_level, local_dp_rate_limit, minimal_n, recommend_delta, sigma_b2,
    sigma_u_envelope, sigma_u_threshold, DEFAULT_SLACK,
};
use inperturb::{Error, LossSpec, PrivacyBudget};
use proptest::prelude::*;

fn budget(eps: f64, delta: f64) -> PrivacyBudget {
    PrivacyBudget::new(eps, delta).unwrap()
}

#[test]
fn reference_point_from_defaults() {
    let spec = LossSpec::linear_regression(5, 1.0).unwrap();
    let b = budget(1.0, 0.01);
    let cal = calibrate(b, 1000, spec.constants, DEFAULT_SLACK).unwrap();
    assert_relative_eq!(cal.gamma, 0.005);
    assert_relative_eq!(cal.delta_prime, 0.005);
    assert_relative_eq!(cal.sigma_b2, 4.0 * (8.0 * 400f64.ln() + 4.0), max_relative = 1e-12);
    assert_relative_eq!(
        cal.sigma_u2,
        DEFAULT_SLACK * cal.sigma_u_threshold.powi(2),
        max_relative = 1e-12
    );
    assert!(cal.sigma_u2 > cal.sigma_u_threshold.powi(2));
}

#[test]
fn too_few_examples_is_reported_with_the_minimum() {
    let spec = LossSpec::linear_regression(2, 1.0).unwrap();
    let min = minimal_n(0.005);
    assert_eq!(min, 27);
    match calibrate(budget(1.0, 0.01), min - 1, spec.constants, DEFAULT_SLACK) {
        Err(Error::CalibrationInfeasible { n, min_n }) => {
            assert_eq!(n, min - 1);
            assert_eq!(min_n, min);
        }
        other => panic!("expected infeasible calibration, got {other:?}"),
    }
    assert!(calibrate(budget(1.0, 0.01), min, spec.constants, DEFAULT_SLACK).is_ok());
}

#[test]
fn local_level_matches_diameter_form_at_twice_the_bounds() {
    let spec = LossSpec::logistic_quadratic(4, 2.0).unwrap();
    let cal = calibrate(budget(0.5, 1e-3), 5000, spec.constants, DEFAULT_SLACK).unwrap();
    let lvl = local_dp_level(&cal, 2.0 * spec.constants.lambda, 2.0 * spec.constants.zeta);
    assert_relative_eq!(lvl.epsilon, lvl.epsilon_with_diameters, max_relative = 1e-12);
    assert_relative_eq!(lvl.delta, 2e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn threshold_is_a_root_of_the_lower_bound(
        n in 30usize..2_000_000,
        d in 1usize..50,
        lambda in 0.05f64..2.0,
        eps in 0.05f64..5.0,
        gamma in 1e-6f64..0.2,
    ) {
        prop_assume!(n >= minimal_n(gamma));
        let t = sigma_u_threshold(n, gamma, d, lambda, eps).unwrap();
        let lower = delta0_bounds(n, gamma, t, lambda, d).lower;
        let target = 2.0 * lambda / eps;
        prop_assert!((lower - target).abs() <= 1e-9 * target.max(1.0), "lower {lower} target {target}");
        // Slightly more noise always clears the offset.
        prop_assert!(delta0_bounds(n, gamma, t * 1.001, lambda, d).lower > target);
    }

    #[test]
    fn envelope_brackets_threshold(
        n in 30usize..5_000_000,
        d in 1usize..50,
        lambda in 0.05f64..2.0,
        eps in 0.05f64..5.0,
        gamma in 1e-6f64..0.2,
    ) {
        prop_assume!(n >= minimal_n(gamma));
        let t = sigma_u_threshold(n, gamma, d, lambda, eps).unwrap();
        let env = sigma_u_envelope(n, gamma, d, lambda, eps);
        prop_assert!(t >= env.lower * (1.0 - 1e-12));
        let sixteen = 16.0 * (4.0 / gamma).ln();
        prop_assert_eq!(env.upper.is_some(), n as f64 >= sixteen);
        if let Some(up) = env.upper {
            prop_assert!(t <= up * (1.0 + 1e-12), "t {t} upper {up}");
        }
    }

    #[test]
    fn bounds_are_ordered(
        n in 30usize..1_000_000,
        d in 1usize..50,
        lambda in 0.0f64..2.0,
        sigma_u in 0.0f64..10.0,
        gamma in 1e-6f64..0.2,
    ) {
        prop_assume!(n >= minimal_n(gamma));
        let b = delta0_bounds(n, gamma, sigma_u, lambda, d);
        prop_assert!(b.lower <= b.upper);
    }

    #[test]
    fn sigma_b_grows_as_budget_shrinks(eps in 0.05f64..5.0, delta in 1e-8f64..0.5, zeta in 0.1f64..3.0) {
        let base = sigma_b2(zeta, &budget(eps, delta));
        prop_assert!(sigma_b2(zeta, &budget(eps / 2.0, delta)) > base);
        prop_assert!(sigma_b2(zeta, &budget(eps, delta / 2.0)) > base);
    }

    #[test]
    fn local_level_grows_like_root_n_eps(eps in 0.05f64..5.0, d in 1usize..20) {
        let spec = LossSpec::linear_regression(d, 1.0).unwrap();
        let b = budget(eps, 0.01);
        let n = 10_000_000;
        let cal = calibrate(b, n, spec.constants, DEFAULT_SLACK).unwrap();
        let lvl = local_dp_level(&cal, 2.0, 2.0 * spec.constants.zeta);
        let ratio = lvl.epsilon / (n as f64 * eps).sqrt();
        let limit = local_dp_rate_limit(spec.constants.lambda, &b);
        // Convergence is at rate log(1/gamma)^(1/2) n^(-1/4) towards the limit.
        prop_assert!(ratio <= limit * 1.0001, "ratio {ratio} limit {limit}");
        prop_assert!(ratio >= limit * 0.8, "ratio {ratio} limit {limit}");
    }

    #[test]
    fn recommended_cap_clears_the_offset(eps in 0.05f64..5.0, d in 1usize..100, est in 0.01f64..10.0) {
        let spec = LossSpec::logistic_quadratic(d, 1.0).unwrap();
        let cap = recommend_delta(&spec.constants, &budget(eps, 0.01), est).unwrap();
        prop_assert!(cap > 2.0 * spec.constants.lambda / eps);
    }
}
