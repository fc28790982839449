//! Volatility schedules and the Pontryagin-optimal control.
//!
//! A volatility schedule `alpha: [0, T] -> (0, 1]` is the continuous-time
//! stand-in for reciprocal batch sizes, constrained by the sample budget
//! `C(alpha) = int_0^T 1/alpha_t dt`. Minimising the first-order expansion of
//! the expected terminal risk plus `lambda * C(alpha)` gives the clamped
//! square-root law
//!
//! ```text
//! alpha*_t(lambda) = min(1, sqrt(2 lambda / (delta_t Sigma(X0_t))))
//! ```
//!
//! where `delta` is the terminal-risk noise gain of [`FlowSensitivity`]. For
//! the linear regression model this reduces, after rescaling the multiplier
//! by `kappa^2 e^-2 kappa T R*`, to
//!
//! ```text
//! alpha*_t(lambda) = min(1, sqrt(lambda / (gamma + e^2 kappa t)))
//! ```
//!
//! which is 1 up to the switch time `switch_time(lambda) = ln(lambda - gamma)
//! / 2 kappa` (0 when `lambda <= gamma + 1`) and decays like `e^-kappa t`
//! afterwards. The budget `C(lambda)` is continuous and non-increasing with
//! `C -> T` as `lambda -> inf`, so a target budget `c >= T` is met by
//! bisecting `lambda` in log space.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::ode::{FlowSensitivity, TimeGrid, Trajectory};
use crate::risk::{LinRegParams, RiskSpec};
use crate::{Error, Result};

/// Floor applied to `alpha` when evaluating `1/alpha` numerically.
const ALPHA_FLOOR: f64 = 1e-6;

/// Closed-form linreg provenance, kept so budget evaluation can use the
/// analytic antiderivative instead of the grid trapezoid.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LinRegForm {
    gamma: f64,
    kappa: f64,
}

/// A volatility schedule sampled on a grid, with the multiplier that produced
/// it and derived metadata.
///
/// Values are in `(0, 1]` and interpolate linearly between nodes; every
/// consumer in the crate (moment systems, SDE drivers, budget evaluation)
/// shares that convention.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityControl {
    pub grid: TimeGrid,
    /// Node values `alpha(t_k)`, each in `(0, 1]`.
    pub alpha: Vec<f64>,
    /// Lagrange multiplier the schedule was built from.
    pub lambda: f64,
    /// Achieved sample budget `int_0^T 1/alpha dt`.
    pub budget: f64,
    /// Lipschitz bound for `sqrt(alpha)`: the closed-form bound for linreg
    /// schedules, the exact grid Lipschitz constant otherwise.
    pub lipschitz_bound: f64,
    /// Clamp release time for linreg schedules (`None` for generic ones).
    pub switch_time: Option<f64>,
    closed_form: Option<LinRegForm>,
}

impl VolatilityControl {
    /// Wraps raw node values as a schedule; validates the value range.
    pub fn new(grid: TimeGrid, alpha: Vec<f64>, lambda: f64) -> Result<Self> {
        if alpha.len() != grid.num_points() {
            return Err(Error::GridMismatch { expected: grid.num_points(), got: alpha.len() });
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
        }
        for (k, &a) in alpha.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "alpha[{k}] = {a} is outside (0, 1]"
                )));
            }
        }
        let mut ctrl = Self {
            grid,
            alpha,
            lambda,
            budget: 0.0,
            lipschitz_bound: 0.0,
            switch_time: None,
            closed_form: None,
        };
        ctrl.budget = budget_of(&ctrl);
        ctrl.lipschitz_bound = ctrl.grid_sqrt_lipschitz();
        Ok(ctrl)
    }

    /// Piecewise-linear evaluation; `t` is clamped to `[0, T]`.
    pub fn value_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.grid.horizon);
        let k = self.grid.interval_of(t);
        let (t0, t1) = (self.grid.point(k), self.grid.point(k + 1));
        let frac = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        self.alpha[k] + frac * (self.alpha[k + 1] - self.alpha[k])
    }

    /// Smallest node value.
    pub fn min_alpha(&self) -> f64 {
        self.alpha.iter().fold(f64::INFINITY, |m, &a| m.min(a))
    }

    /// True when every node sits at the clamp `alpha = 1`.
    pub fn fully_clamped(&self) -> bool {
        self.alpha.iter().all(|&a| a == 1.0)
    }

    /// Node values as a [`Trajectory`] (for export and interpolation reuse).
    pub fn as_trajectory(&self) -> Trajectory {
        Trajectory { grid: self.grid, values: self.alpha.clone() }
    }

    /// Exact Lipschitz constant of the piecewise-linear `sqrt(alpha)`.
    fn grid_sqrt_lipschitz(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.grid.steps {
            let dt = self.grid.point(k + 1) - self.grid.point(k);
            let slope = (self.alpha[k + 1].sqrt() - self.alpha[k].sqrt()).abs() / dt;
            worst = worst.max(slope);
        }
        worst
    }
}

/// Sample budget `int_0^T 1/alpha dt` of a schedule.
///
/// Linreg-born schedules use the closed-form antiderivative (exact up to
/// round-off); generic schedules use the trapezoid rule on the grid with
/// `alpha` floored at `1e-6`.
pub fn budget_of(ctrl: &VolatilityControl) -> f64 {
    if let Some(form) = ctrl.closed_form {
        return linreg_budget(form.gamma, form.kappa, ctrl.lambda, ctrl.grid.horizon);
    }
    let mut acc = 0.0;
    for k in 0..ctrl.grid.steps {
        let dt = ctrl.grid.point(k + 1) - ctrl.grid.point(k);
        let fa = 1.0 / ctrl.alpha[k].max(ALPHA_FLOOR);
        let fb = 1.0 / ctrl.alpha[k + 1].max(ALPHA_FLOOR);
        acc += 0.5 * dt * (fa + fb);
    }
    acc
}

/// Pontryagin-optimal schedule for a generic risk:
/// `alpha*_t = min(1, sqrt(2 lambda / (noise_gain_t Sigma(X0_t))))`.
///
/// Requires the sensitivity bundle and the flow on the same grid, `lambda >
/// 0`, and positive noise variance along the flow.
pub fn optimal_alpha(
    sens: &FlowSensitivity,
    spec: &RiskSpec,
    x0: &Trajectory,
    lambda: f64,
) -> Result<VolatilityControl> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    let grid = sens.grid();
    if x0.grid != grid {
        return Err(Error::GridMismatch {
            expected: grid.num_points(),
            got: x0.grid.num_points(),
        });
    }
    let mut alpha = Vec::with_capacity(grid.num_points());
    for k in 0..grid.num_points() {
        let sigma2 = spec.sigma2(x0.values[k]);
        if !(sigma2 > 0.0) {
            return Err(Error::NonpositiveSigma { at: grid.point(k), value: sigma2 });
        }
        let gain = sens.noise_gain.values[k];
        let unclamped = (2.0 * lambda / (gain * sigma2)).sqrt();
        alpha.push(unclamped.min(1.0));
    }
    VolatilityControl::new(grid, alpha, lambda)
}

/// Closed-form linreg schedule
/// `alpha*_t = min(1, sqrt(lambda / (gamma + e^2 kappa t)))`, with the switch
/// time and the analytic Lipschitz bound recorded.
pub fn linreg_alpha(gamma: f64, kappa: f64, lambda: f64, grid: TimeGrid) -> Result<VolatilityControl> {
    check_linreg_args(gamma, kappa)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    let mut alpha = Vec::with_capacity(grid.num_points());
    for k in 0..grid.num_points() {
        let t = grid.point(k);
        let a = (lambda / (gamma + (2.0 * kappa * t).exp())).sqrt();
        alpha.push(a.min(1.0));
    }
    let mut ctrl = VolatilityControl::new(grid, alpha, lambda)?;
    ctrl.switch_time = Some(switch_time(gamma, kappa, lambda));
    ctrl.closed_form = Some(LinRegForm { gamma, kappa });
    ctrl.lipschitz_bound = lipschitz_bound(kappa, lambda, grid.horizon);
    ctrl.budget = budget_of(&ctrl);
    Ok(ctrl)
}

/// Time at which the linreg schedule leaves the clamp `alpha = 1`:
/// `ln(lambda - gamma) / (2 kappa)` when `lambda > gamma + 1`, else 0.
pub fn switch_time(gamma: f64, kappa: f64, lambda: f64) -> f64 {
    if lambda > gamma + 1.0 {
        (lambda - gamma).ln() / (2.0 * kappa)
    } else {
        0.0
    }
}

/// Antiderivative `F(t)` of `sqrt(gamma + e^2 kappa t)`.
///
/// Substituting `u = sqrt(gamma + e^2 kappa t)` gives
/// `F = (u - sqrt(gamma) arcoth(u / sqrt(gamma))) / kappa`; the `arcoth`
/// argument ratio is evaluated as `(x + 1)^2 gamma / e^2 kappa t` to avoid
/// the `x - 1` cancellation for large `gamma`. Degenerates to `e^kappa t /
/// kappa` at `gamma = 0`.
pub fn budget_antiderivative(gamma: f64, kappa: f64, t: f64) -> f64 {
    let e2kt = (2.0 * kappa * t).exp();
    if gamma == 0.0 {
        return (kappa * t).exp() / kappa;
    }
    let u = (gamma + e2kt).sqrt();
    let root = gamma.sqrt();
    let x = u / root;
    // arcoth(x) = ln((x + 1) / (x - 1)) / 2 with x - 1 = e2kt / (gamma (x + 1)).
    let arcoth = 0.5 * ((x + 1.0) * (x + 1.0) * gamma / e2kt).ln();
    (u - root * arcoth) / kappa
}

/// High-precision linreg budget
/// `C(lambda) = switch_time + (F(T) - F(switch_time)) / sqrt(lambda)`,
/// equal to `T` once the schedule is fully clamped.
pub fn linreg_budget(gamma: f64, kappa: f64, lambda: f64, horizon: f64) -> f64 {
    let ts = switch_time(gamma, kappa, lambda).min(horizon);
    if ts >= horizon {
        return horizon;
    }
    ts + (budget_antiderivative(gamma, kappa, horizon) - budget_antiderivative(gamma, kappa, ts))
        / lambda.sqrt()
}

/// Closed-form multiplier hitting budget `c` when no clamping occurs
/// (`lambda <= gamma + 1`): `lambda = ((F(T) - F(0)) / c)^2`.
pub fn linreg_lambda_closed_form(gamma: f64, kappa: f64, horizon: f64, c: f64) -> f64 {
    let span = budget_antiderivative(gamma, kappa, horizon) - budget_antiderivative(gamma, kappa, 0.0);
    (span / c).powi(2)
}

/// Analytic bound on the Lipschitz constant of `sqrt(alpha*)` for the linreg
/// schedule: `kappa e^2 kappa T / (2 lambda)`.
pub fn lipschitz_bound(kappa: f64, lambda: f64, horizon: f64) -> f64 {
    kappa / (2.0 * lambda) * (2.0 * kappa * horizon).exp()
}

/// Rescales a generic multiplier to the linreg-schedule parameterisation:
/// `lambda_linreg = lambda_generic / (kappa^2 e^-2 kappa T R*)`.
///
/// The two schedules coincide because
/// `noise_gain_t Sigma(X0_t) = 2 kappa^2 e^-2 kappa T R* (gamma + e^2 kappa t)`.
pub fn linreg_lambda_from_generic(p: &LinRegParams, horizon: f64, lambda_generic: f64) -> f64 {
    lambda_generic / (p.kappa * p.kappa * (-2.0 * p.kappa * horizon).exp() * p.r_star())
}

/// Inverse of [`linreg_lambda_from_generic`].
pub fn generic_lambda_from_linreg(p: &LinRegParams, horizon: f64, lambda_linreg: f64) -> f64 {
    lambda_linreg * p.kappa * p.kappa * (-2.0 * p.kappa * horizon).exp() * p.r_star()
}

fn check_linreg_args(gamma: f64, kappa: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} must be non-negative")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa = {kappa} must be positive")));
    }
    Ok(())
}

/// Solves `C(lambda) = budget_target` for the multiplier by bisection on
/// `ln lambda`, given a factory mapping a multiplier to its schedule.
///
/// The budget is read off each produced schedule, so linreg factories get the
/// closed-form budget and generic factories the trapezoid one. Returns the
/// multiplier together with its schedule. Termination: `|C - c| <= 1e-8 c`.
///
/// * `budget_target < T` is infeasible (`1/alpha >= 1`).
/// * `budget_target = T` (within 1e-12 relative) returns the clamp threshold:
///   the smallest multiplier whose schedule is identically 1.
/// * Brackets expand over `lambda` in `[1e-12, 1e12]`; failure to enclose the
///   target reports [`Error::BracketFailure`].
pub fn solve_lambda<F>(budget_target: f64, factory: F) -> Result<(f64, VolatilityControl)>
where
    F: Fn(f64) -> Result<VolatilityControl>,
{
    if !budget_target.is_finite() || !(budget_target > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "budget target = {budget_target} must be positive and finite"
        )));
    }
    let probe = factory(1.0)?;
    let horizon = probe.grid.horizon;
    if budget_target < horizon * (1.0 - 1e-12) {
        return Err(Error::InfeasibleBudget { target: budget_target, horizon });
    }
    if budget_target <= horizon * (1.0 + 1e-12) {
        return clamp_threshold(probe, factory);
    }

    let tol = 1e-8 * budget_target;
    let mut lo = 1.0; // budget(lo) must exceed the target
    let mut c_lo = probe.budget;
    while c_lo < budget_target {
        lo /= 10.0;
        if lo < 1e-12 {
            return Err(Error::BracketFailure { target: budget_target });
        }
        c_lo = factory(lo)?.budget;
    }
    let mut hi = lo; // budget(hi) must fall below the target
    let mut c_hi = c_lo;
    while c_hi > budget_target {
        hi *= 10.0;
        if hi > 1e12 {
            return Err(Error::BracketFailure { target: budget_target });
        }
        c_hi = factory(hi)?.budget;
    }

    let mut best: Option<(f64, VolatilityControl)> = None;
    let mut best_err = f64::INFINITY;
    for _ in 0..200 {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        let ctrl = factory(mid)?;
        let err = (ctrl.budget - budget_target).abs();
        if err < best_err {
            best_err = err;
            best = Some((mid, ctrl.clone()));
        }
        if err <= tol {
            return Ok((mid, ctrl));
        }
        if ctrl.budget > budget_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi.ln() - lo.ln() < 1e-13 {
            break;
        }
    }
    match best {
        Some(pair) if best_err <= tol => Ok(pair),
        _ => Err(Error::BracketFailure { target: budget_target }),
    }
}

/// Smallest multiplier with a fully clamped schedule, by predicate bisection.
fn clamp_threshold<F>(probe: VolatilityControl, factory: F) -> Result<(f64, VolatilityControl)>
where
    F: Fn(f64) -> Result<VolatilityControl>,
{
    let target = probe.grid.horizon;
    let mut lo = 1.0;
    let mut hi = 1.0;
    if probe.fully_clamped() {
        while factory(lo)?.fully_clamped() {
            lo /= 10.0;
            if lo < 1e-12 {
                return Err(Error::BracketFailure { target });
            }
        }
    } else {
        while !factory(hi)?.fully_clamped() {
            hi *= 10.0;
            if hi > 1e12 {
                return Err(Error::BracketFailure { target });
            }
        }
    }
    for _ in 0..200 {
        if hi.ln() - lo.ln() < 1e-13 {
            break;
        }
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if factory(mid)?.fully_clamped() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let ctrl = factory(hi)?;
    Ok((hi, ctrl))
}
