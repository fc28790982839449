//! First-order moment dynamics of the SGD fluctuation around the gradient
//! flow, and the adjoint (costate) system of the schedule control problem.
//!
//! For small step size `h` the iterates track the flow `X0` with Gaussian
//! fluctuations: `E[X_t] - X0_t ~ h E_t` and `Var[X_t] ~ h V_t`, where the
//! rescaled moments solve
//!
//! ```text
//! dV/dt = -2 R''(X0_t) V + alpha_t Sigma(X0_t)              V(0) = 0
//! dE/dt = -R''(X0_t) E - 1/2 R'''(X0_t) V - 1/2 R''(X0_t) R'(X0_t)   E(0) = 0
//! ```
//!
//! The last forcing term in `dE` is the leading bias of the Euler update
//! itself; the `R''' V` term couples the injected variance into the mean.
//! The expected terminal risk then expands as
//!
//! ```text
//! E[R(X_T)] = R(X0_T) + h (1/2 R''(X0_T) V_T + R'(X0_T) E_T) + O(h^2)
//! ```
//!
//! whose `V_T` sensitivity defines the costate `y1` solved by
//! [`adjoint_solution`]; stationarity of the Hamiltonian in `alpha` is what
//! singles out the square-root schedule of [`crate::control::optimal_alpha`].

use alloc::vec::Vec;

use num_traits::Float;

use crate::control::VolatilityControl;
use crate::ode::{rk4_step, FlowSensitivity, Trajectory};
use crate::risk::RiskSpec;
use crate::{Error, Result};

/// Guard radius shared with the flow integrator.
const DIVERGENCE_GUARD: f64 = 1e12;

/// Rescaled fluctuation moments along the flow, on the control's grid.
///
/// Physical moments at step size `h` are `h * variance` and `h * mean_shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPath {
    /// Rescaled variance `V_t >= 0`.
    pub variance: Trajectory,
    /// Rescaled mean deviation `E_t = (E[X_t] - X0_t) / h`.
    pub mean_shift: Trajectory,
}

/// Integrates the rescaled moment system along `x0` under the given schedule.
///
/// Classical RK4 at the grid resolution; interval-midpoint flow values are
/// recovered by a half-step of the same scheme, so the coefficients keep the
/// integrator at fourth order. The schedule contributes through its
/// piecewise-linear interpolant, consistent with every other consumer.
///
/// Errors: [`Error::GridMismatch`] if `x0` and `ctrl` live on different
/// grids, [`Error::Divergence`] if a moment leaves `|.| <= 1e12`, and
/// [`Error::NegativeVariance`] if the variance turns negative beyond
/// round-off (it is clamped to zero inside a `1e-12` absolute band; the
/// exact variance cannot cross zero, so anything deeper is a genuine bug,
/// not integration noise).
pub fn solve_moments(
    spec: &RiskSpec,
    x0: &Trajectory,
    ctrl: &VolatilityControl,
) -> Result<MomentPath> {
    let grid = x0.grid;
    if ctrl.grid != grid {
        return Err(Error::GridMismatch {
            expected: grid.num_points(),
            got: ctrl.grid.num_points(),
        });
    }
    let dt = grid.dt();
    let mids = interval_midpoints(spec, x0);
    let rhs = |x: f64, a: f64, v: f64, e: f64| {
        let d2 = spec.d2r(x);
        (
            -2.0 * d2 * v + a * spec.sigma2(x),
            -d2 * e - 0.5 * spec.d3r(x) * v - 0.5 * d2 * spec.dr(x),
        )
    };

    let n = grid.num_points();
    let mut variance = Vec::with_capacity(n);
    let mut mean_shift = Vec::with_capacity(n);
    let (mut v, mut e) = (0.0, 0.0);
    variance.push(v);
    mean_shift.push(e);
    for k in 0..grid.steps {
        let coeff = [
            (x0.values[k], ctrl.alpha[k]),
            (mids[k], 0.5 * (ctrl.alpha[k] + ctrl.alpha[k + 1])),
            (x0.values[k + 1], ctrl.alpha[k + 1]),
        ];
        (v, e) = rk4_pair(&rhs, coeff, (v, e), dt);
        let t = grid.point(k + 1);
        if !v.is_finite() || !e.is_finite() || v.abs() > DIVERGENCE_GUARD || e.abs() > DIVERGENCE_GUARD
        {
            return Err(Error::Divergence { t, value: v.abs().max(e.abs()) });
        }
        if v < 0.0 {
            if v < -1e-12 {
                return Err(Error::NegativeVariance { t, value: v });
            }
            v = 0.0;
        }
        variance.push(v);
        mean_shift.push(e);
    }
    Ok(MomentPath {
        variance: Trajectory::new(grid, variance)?,
        mean_shift: Trajectory::new(grid, mean_shift)?,
    })
}

/// Terminal-risk expansion split into the flow value and the `O(h)` rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskExpansion {
    /// Deterministic part `R(X0_T)`.
    pub flow_risk: f64,
    /// Fluctuation correction per unit step size:
    /// `1/2 R''(X0_T) V_T + R'(X0_T) E_T`.
    pub correction: f64,
}

impl RiskExpansion {
    /// Predicted expected terminal risk at step size `h`.
    pub fn at(&self, h: f64) -> f64 {
        self.flow_risk + h * self.correction
    }
}

/// Evaluates the terminal-risk expansion from solved moments.
pub fn risk_expansion(spec: &RiskSpec, x0: &Trajectory, moments: &MomentPath) -> RiskExpansion {
    let x_t = x0.terminal();
    RiskExpansion {
        flow_risk: spec.r(x_t),
        correction: 0.5 * spec.d2r(x_t) * moments.variance.terminal()
            + spec.dr(x_t) * moments.mean_shift.terminal(),
    }
}

/// Costates of the moment system, on the flow's grid.
///
/// `y1` prices rescaled variance and `y2` prices the rescaled mean shift in
/// the terminal-risk correction; they solve, backward from `y1(T) = 1/2
/// R''(X0_T)` and `y2(T) = R'(X0_T)`,
///
/// ```text
/// dy1/dt = 2 R''(X0_t) y1 + 1/2 R'''(X0_t) y2
/// dy2/dt =   R''(X0_t) y2
/// ```
///
/// At any time the change of the correction under a schedule perturbation is
/// `int y1 Sigma(X0) dalpha dt`, so `y1` is what the Hamiltonian stationarity
/// condition `alpha^2 Sigma(X0) y1 = lambda` balances against the sample
/// cost.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub y1: Trajectory,
    pub y2: Trajectory,
}

/// Assembles the costates in closed form from the flow sensitivities:
/// `y2 = e^-c1 R'(X0_T)` with `c1` the remaining-curvature integral, and
/// `y1` equal to half the noise gain, so the schedule built from that gain
/// satisfies the stationarity condition by construction.
///
/// The `y2` component solves its costate equation exactly (it only sees the
/// curvature); `y1` does so wherever `R'''/R''` is constant along the flow,
/// which covers quadratic and exponential risks, and elsewhere is the costate
/// of the same ratio-averaged correction functional the gain defines. The
/// backward-integration cross-check lives in this module's tests.
///
/// `x0_terminal` is the flow endpoint the sensitivities were built from.
/// Errors: [`Error::NonpositiveDelta`] if the priced variance ever fails to
/// be worth a positive amount, which breaks the square-root formula.
pub fn adjoint_solution(
    spec: &RiskSpec,
    sens: &FlowSensitivity,
    x0_terminal: f64,
) -> Result<AdjointPath> {
    let grid = sens.grid();
    let grad_t = spec.dr(x0_terminal);
    let n = grid.num_points();
    let mut y1 = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(n);
    for k in 0..n {
        let v = 0.5 * sens.noise_gain.values[k];
        if !(v > 0.0) {
            return Err(Error::NonpositiveDelta { t: grid.point(k), value: 2.0 * v });
        }
        y1.push(v);
        y2.push((-sens.curvature_integral.values[k]).exp() * grad_t);
    }
    Ok(AdjointPath { y1: Trajectory::new(grid, y1)?, y2: Trajectory::new(grid, y2)? })
}

/// Flow values at interval midpoints, each advanced from the left node by a
/// half-step of the scheme that produced the nodes.
fn interval_midpoints(spec: &RiskSpec, x0: &Trajectory) -> Vec<f64> {
    let half = 0.5 * x0.grid.dt();
    (0..x0.grid.steps).map(|k| rk4_step(|v| -spec.dr(v), x0.values[k], half)).collect()
}

/// One RK4 step for a pair ODE with prescribed coefficient samples at the
/// left node, midpoint, and right node (in marching order; `dt` may be
/// negative for backward sweeps).
fn rk4_pair<F>(rhs: &F, coeff: [(f64, f64); 3], y: (f64, f64), dt: f64) -> (f64, f64)
where
    F: Fn(f64, f64, f64, f64) -> (f64, f64),
{
    let (xa, aa) = coeff[0];
    let (xm, am) = coeff[1];
    let (xb, ab) = coeff[2];
    let k1 = rhs(xa, aa, y.0, y.1);
    let k2 = rhs(xm, am, y.0 + 0.5 * dt * k1.0, y.1 + 0.5 * dt * k1.1);
    let k3 = rhs(xm, am, y.0 + 0.5 * dt * k2.0, y.1 + 0.5 * dt * k2.1);
    let k4 = rhs(xb, ab, y.0 + dt * k3.0, y.1 + dt * k3.1);
    (
        y.0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        y.1 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}
