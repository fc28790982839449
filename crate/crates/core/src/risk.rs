//! Risk-function bundles.
//!
//! A [`RiskSpec`] packages the population risk `R`, its first three
//! derivatives, and the one-sample gradient noise variance
//! `Sigma(theta) = Var[grad f(theta, Z)]` as plain callables, plus the
//! minimal risk `R*` when known. Everything downstream (flow integration,
//! sensitivities, moment systems, controls) consumes only this bundle, so a
//! new model plugs in by providing five closures.
//!
//! The linear regression model `y = theta* x + eps` gets closed forms:
//!
//! ```text
//! R(theta)     = kappa/2 (theta - theta*)^2 + R*,   R* = sigma_eps^2 / 2
//! Sigma(theta) = kappa^2 (Kurt - 1)(theta - theta*)^2 + 2 kappa R*
//! ```
//!
//! with `kappa = Var x = E[x^2]` (zero-mean inputs) and `Kurt = E[x^4]/kappa^2`.

use alloc::boxed::Box;
use alloc::format;

use num_traits::Float;

use crate::{Error, Result};

/// Shorthand for the boxed scalar callables a [`RiskSpec`] carries.
///
/// `Send + Sync` is required so a spec can be shared read-only across worker
/// threads; evaluation must be pure and reentrant.
pub type RiskFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Parameters of the scalar linear regression model `y = theta* x + eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinRegParams {
    /// Input second moment `kappa = E[x^2] > 0` (inputs are zero-mean).
    pub kappa: f64,
    /// True regression coefficient.
    pub theta_star: f64,
    /// Observation noise variance `sigma_eps^2 >= 0`.
    pub sigma_eps2: f64,
    /// Input kurtosis `E[x^4] / kappa^2 >= 1` (3 for Gaussian inputs).
    pub kurtosis: f64,
}

impl LinRegParams {
    /// Validates and builds a parameter set.
    ///
    /// `sigma_eps2 = 0` (noiseless data) is accepted here because dataset
    /// generation is well-defined for it; building a [`RiskSpec`] from such
    /// parameters is rejected separately since it makes `Sigma(theta*) = 0`.
    pub fn new(kappa: f64, theta_star: f64, sigma_eps2: f64, kurtosis: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa = {kappa} must be positive")));
        }
        if !theta_star.is_finite() {
            return Err(Error::InvalidParameter(format!("theta_star = {theta_star} must be finite")));
        }
        if !(sigma_eps2 >= 0.0) || !sigma_eps2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma_eps2 = {sigma_eps2} must be non-negative"
            )));
        }
        if !(kurtosis >= 1.0) || !kurtosis.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kurtosis = {kurtosis} must be at least 1"
            )));
        }
        Ok(Self { kappa, theta_star, sigma_eps2, kurtosis })
    }

    /// Unit Gaussian model: `x, eps ~ N(0, 1)` and `theta* = -1`, i.e.
    /// `kappa = 1`, `sigma_eps2 = 1`, `kurtosis = 3`.
    pub fn unit_gaussian() -> Self {
        Self { kappa: 1.0, theta_star: -1.0, sigma_eps2: 1.0, kurtosis: 3.0 }
    }

    /// Minimal risk `R* = sigma_eps^2 / 2`.
    pub fn r_star(&self) -> f64 {
        0.5 * self.sigma_eps2
    }
}

/// Population risk bundle: `R`, `R'`, `R''`, `R'''`, the gradient noise
/// variance `Sigma`, and optionally the minimal risk `R*`.
pub struct RiskSpec {
    r: Box<RiskFn>,
    dr: Box<RiskFn>,
    d2r: Box<RiskFn>,
    d3r: Box<RiskFn>,
    sigma2: Box<RiskFn>,
    r_star: Option<f64>,
}

impl RiskSpec {
    /// Builds a bundle from raw callables. No consistency check is run here;
    /// call [`RiskSpec::validate`] to probe the derivatives.
    pub fn new(
        r: Box<RiskFn>,
        dr: Box<RiskFn>,
        d2r: Box<RiskFn>,
        d3r: Box<RiskFn>,
        sigma2: Box<RiskFn>,
        r_star: Option<f64>,
    ) -> Self {
        Self { r, dr, d2r, d3r, sigma2, r_star }
    }

    /// Closed-form bundle for the linear regression model.
    ///
    /// Rejects `sigma_eps2 <= 0` (the noise variance floor `2 kappa R*`
    /// would vanish) and the parameter domain violations caught by
    /// [`LinRegParams::new`].
    pub fn linear_regression(p: &LinRegParams) -> Result<Self> {
        let p = LinRegParams::new(p.kappa, p.theta_star, p.sigma_eps2, p.kurtosis)?;
        if !(p.sigma_eps2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_eps2 = {} must be positive to build a risk spec",
                p.sigma_eps2
            )));
        }
        let LinRegParams { kappa, theta_star, sigma_eps2, kurtosis } = p;
        let r_star = p.r_star();
        Ok(Self {
            r: Box::new(move |theta| 0.5 * kappa * (theta - theta_star).powi(2) + r_star),
            dr: Box::new(move |theta| kappa * (theta - theta_star)),
            d2r: Box::new(move |_| kappa),
            d3r: Box::new(move |_| 0.0),
            sigma2: Box::new(move |theta| {
                kappa * kappa * (kurtosis - 1.0) * (theta - theta_star).powi(2) + kappa * sigma_eps2
            }),
            r_star: Some(r_star),
        })
    }

    /// Risk `R(theta)`.
    pub fn r(&self, theta: f64) -> f64 {
        (self.r)(theta)
    }

    /// Gradient `R'(theta)`.
    pub fn dr(&self, theta: f64) -> f64 {
        (self.dr)(theta)
    }

    /// Curvature `R''(theta)`.
    pub fn d2r(&self, theta: f64) -> f64 {
        (self.d2r)(theta)
    }

    /// Third derivative `R'''(theta)`.
    pub fn d3r(&self, theta: f64) -> f64 {
        (self.d3r)(theta)
    }

    /// Gradient noise variance `Sigma(theta)`.
    pub fn sigma2(&self, theta: f64) -> f64 {
        (self.sigma2)(theta)
    }

    /// Minimal risk `R*`, when known.
    pub fn r_star(&self) -> Option<f64> {
        self.r_star
    }

    /// Excess risk `R(theta) - R*`; errors when the bundle carries no `R*`.
    pub fn excess_risk(&self, theta: f64) -> Result<f64> {
        let r_star = self.r_star.ok_or(Error::MissingRStar)?;
        Ok(self.r(theta) - r_star)
    }

    /// Probes derivative consistency and noise positivity.
    ///
    /// Central differences with step `1e-4` on 100 uniform points of
    /// `[-20, 20]` must match each analytic derivative to a relative
    /// tolerance of `1e-5` (scale floor 1), and `sigma2` must be positive on
    /// the same probe grid.
    pub fn validate(&self) -> Result<()> {
        const EPS: f64 = 1e-4;
        const TOL: f64 = 1e-5;
        for i in 0..100 {
            let theta = -20.0 + 40.0 * (i as f64) / 99.0;
            let probes = [
                (1u8, (self.r(theta + EPS) - self.r(theta - EPS)) / (2.0 * EPS), self.dr(theta)),
                (2, (self.dr(theta + EPS) - self.dr(theta - EPS)) / (2.0 * EPS), self.d2r(theta)),
                (3, (self.d2r(theta + EPS) - self.d2r(theta - EPS)) / (2.0 * EPS), self.d3r(theta)),
            ];
            for (order, numeric, analytic) in probes {
                let scale = 1.0f64.max(analytic.abs()).max(numeric.abs());
                if !((analytic - numeric).abs() <= TOL * scale) {
                    return Err(Error::InconsistentDerivative { order, theta, analytic, numeric });
                }
            }
            let s = self.sigma2(theta);
            if !(s > 0.0) {
                return Err(Error::NonpositiveSigma { at: theta, value: s });
            }
        }
        Ok(())
    }
}

/// Effective noise ratio `gamma = (R0e / R*)(Kurt - 1)` of an initialisation,
/// where `R0e = R(chi0) - R*` is the initial excess risk.
///
/// `gamma` compares curvature noise injected far from the optimum against the
/// noise floor at the optimum; it is the only model constant the closed-form
/// linear regression schedule depends on besides `kappa`. Requires
/// `sigma_eps2 > 0` (returns `+inf` otherwise).
pub fn gamma_of(p: &LinRegParams, chi0: f64) -> f64 {
    let excess0 = 0.5 * p.kappa * (chi0 - p.theta_star).powi(2);
    excess0 / p.r_star() * (p.kurtosis - 1.0)
}
