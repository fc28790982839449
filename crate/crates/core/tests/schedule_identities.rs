//! Property tests tying the two schedule constructions together and pinning
//! the structural facts every consumer relies on: the generic Pontryagin
//! formula and the closed-form regression schedule are the same object under
//! the multiplier change of variables, clamping is exactly the switch-time
//! picture, and the square root of the schedule obeys the analytic Lipschitz
//! bound on every grid chord.

use proptest::prelude::*;
use volsched_core::control::{
    budget_of, generic_lambda_from_linreg, linreg_alpha, linreg_budget, lipschitz_bound,
    optimal_alpha, switch_time,
};
use volsched_core::ode::{flow_sensitivities, integrate_gradient_flow, TimeGrid};
use volsched_core::risk::{gamma_of, LinRegParams, RiskSpec};
use volsched_core::sim::{schedule_from_alpha, BatchSchedule};

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    /// The generic square-root schedule, fed the regression flow and its
    /// sensitivities, reproduces the closed form once the multipliers are
    /// mapped into each other. Constant curvature makes the sensitivity
    /// integrals exact on any grid, so agreement is at round-off level.
    #[test]
    fn generic_and_closed_form_schedules_coincide(
        kappa in 0.4f64..2.5,
        sigma_eps2 in 0.2f64..2.0,
        kurtosis in 1.5f64..5.0,
        offset in 0.5f64..12.0,
        lambda_r in 1.0f64..5000.0,
        horizon in 0.8f64..3.2,
    ) {
        let p = LinRegParams::new(kappa, -1.0, sigma_eps2, kurtosis).unwrap();
        let chi0 = p.theta_star + offset;
        let spec = RiskSpec::linear_regression(&p).unwrap();
        let grid = TimeGrid::new(horizon, 512).unwrap();
        let x0 = integrate_gradient_flow(&spec, chi0, grid).unwrap();
        let sens = flow_sensitivities(&spec, &x0).unwrap();
        let lambda_g = generic_lambda_from_linreg(&p, horizon, lambda_r);
        let generic = optimal_alpha(&sens, &spec, &x0, lambda_g).unwrap();
        let closed = linreg_alpha(gamma_of(&p, chi0), kappa, lambda_r, grid).unwrap();
        for k in 0..grid.num_points() {
            prop_assert!(
                (generic.alpha[k] - closed.alpha[k]).abs() <= 1e-9,
                "node {}: generic {} vs closed {}", k, generic.alpha[k], closed.alpha[k]
            );
        }
    }

    /// Clamp structure: alpha = 1 exactly up to the switch time, strictly
    /// below 1 afterwards, and alpha is non-increasing in time.
    #[test]
    fn clamping_matches_the_switch_time(
        gamma in 0.0f64..2000.0,
        kappa in 0.3f64..3.0,
        lambda in 0.5f64..10_000.0,
        horizon in 0.5f64..4.0,
    ) {
        let grid = TimeGrid::new(horizon, 1024).unwrap();
        let ctrl = linreg_alpha(gamma, kappa, lambda, grid).unwrap();
        let switch = switch_time(gamma, kappa, lambda);
        for k in 0..grid.num_points() {
            let t = grid.point(k);
            if t < switch - 1e-9 {
                prop_assert_eq!(ctrl.alpha[k], 1.0);
            }
            if t > switch + 1e-9 {
                prop_assert!(ctrl.alpha[k] < 1.0);
            }
            if k > 0 {
                prop_assert!(ctrl.alpha[k] <= ctrl.alpha[k - 1] + 1e-15);
            }
        }
    }

    /// Budget is non-increasing in the multiplier and floored at the horizon.
    #[test]
    fn budget_is_monotone_in_the_multiplier(
        gamma in 0.0f64..2000.0,
        kappa in 0.3f64..3.0,
        lambda in 0.5f64..5_000.0,
        horizon in 0.5f64..4.0,
    ) {
        let lo = linreg_budget(gamma, kappa, lambda, horizon);
        let hi = linreg_budget(gamma, kappa, 1.7 * lambda, horizon);
        prop_assert!(hi <= lo + 1e-12);
        prop_assert!(hi >= horizon - 1e-12);
    }

    /// Every chord of sqrt(alpha*) on the grid is within the analytic
    /// Lipschitz bound kappa e^(2 kappa T) / (2 lambda).
    #[test]
    fn sqrt_alpha_grid_chords_obey_the_bound(
        gamma in 0.0f64..2000.0,
        kappa in 0.3f64..2.0,
        lambda in 0.5f64..10_000.0,
        horizon in 0.5f64..3.0,
    ) {
        let grid = TimeGrid::new(horizon, 2048).unwrap();
        let ctrl = linreg_alpha(gamma, kappa, lambda, grid).unwrap();
        let bound = lipschitz_bound(kappa, lambda, horizon);
        let dt = grid.dt();
        for k in 0..grid.steps {
            let chord = (ctrl.alpha[k + 1].sqrt() - ctrl.alpha[k].sqrt()).abs() / dt;
            prop_assert!(
                chord <= bound * (1.0 + 1e-9),
                "chord {} at node {} exceeds bound {}", chord, k, bound
            );
        }
        prop_assert!((ctrl.lipschitz_bound - bound).abs() <= 1e-15 * bound);
    }

    /// The integer batch search lands on the requested sample count exactly
    /// for any feasible (N, M) pair.
    #[test]
    fn batch_schedules_consume_exactly_n(
        m in 8usize..128,
        extra in 0u64..2000,
        h in 0.01f64..0.2,
        gamma in 0.0f64..600.0,
    ) {
        let n = m as u64 + extra;
        let grid = TimeGrid::new(m as f64 * h, m).unwrap();
        let schedule =
            schedule_from_alpha(|l| linreg_alpha(gamma, 1.0, l, grid), n, m, h).unwrap();
        prop_assert_eq!(schedule.total_samples(), n);
        prop_assert_eq!(schedule.num_steps(), m);
        prop_assert!(schedule.sizes.iter().all(|&b| b >= 1));
    }
}

#[test]
fn reference_switch_times() {
    // gamma = 280, kappa = 1: lambda = 300 switches at ln(20)/2; lambda = 75
    // never clamps (75 < 281); the threshold multiplier gamma + e^(2T)
    // clamps the whole horizon.
    assert!((switch_time(280.0, 1.0, 300.0) - 0.5 * 20.0f64.ln()).abs() < 1e-12);
    assert_eq!(switch_time(280.0, 1.0, 75.0), 0.0);
    let grid = TimeGrid::new(2.8, 4096).unwrap();
    let ctrl = linreg_alpha(280.0, 1.0, 75.0, grid).unwrap();
    assert!(ctrl.alpha.iter().all(|&a| a < 1.0));
    let threshold = 280.0 + (2.0 * 2.8f64).exp();
    let clamped = linreg_alpha(280.0, 1.0, threshold, grid).unwrap();
    assert!(clamped.fully_clamped());
    assert!((budget_of(&clamped) - 2.8).abs() < 1e-12);
}

#[test]
fn constant_schedule_comparator_shape() {
    // The experiment's comparator: B = N/M constant; total exactly N.
    let schedule = BatchSchedule::constant(4, 256).unwrap();
    assert_eq!(schedule.total_samples(), 1024);
    assert!(schedule.lambda.is_none());
}
