//! Quasi-optimal batch-size schedules for one-dimensional SGD.
//!
//! Mini-batch SGD with step size `h` and per-step batch size `B_n` is modelled
//! by the SDE `dX = -R'(X) dt + sqrt(h a_t S(X)) dW`, where `R` is the
//! population risk, `S` the gradient noise variance, and `a_t = 1/B_t` in
//! `(0, 1]` the *volatility schedule*. Solving a Pontryagin problem for the
//! first-order perturbation of the terminal risk under the sample budget
//! `int 1/a dt = c` yields the bang-off control
//!
//! ```text
//! a*_t = min(1, sqrt(2 lambda / (delta_t * S(X0_t))))
//! ```
//!
//! with `X0` the gradient flow started at the SGD initialisation and
//! `delta_t` a sensitivity weight computed from flow linearisation integrals.
//!
//! The crate is organised bottom-up:
//!
//! * [`risk`]: risk-function bundles (generic callables plus the linear
//!   regression closed forms).
//! * [`ode`]: uniform time grids, RK4 gradient-flow integration, adaptive
//!   Simpson quadrature, and the flow sensitivity quantities.
//! * [`moments`]: the first-order perturbation moment system, the expanded
//!   terminal-risk functional, and the closed-form adjoint (costate) pair.
//! * [`control`]: volatility schedules, the optimal control, budget
//!   evaluation, and the Lagrange-multiplier solver.
//! * [`sim`]: dataset generation, integer batch schedules, SGD and
//!   Euler-Maruyama runs, and the exact moment recursions used as oracles.
//!
//! The crate is `no_std` (with `alloc`); all floating-point special functions
//! go through `num_traits::Float`, so results are bit-stable across targets.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;

pub mod control;
pub mod moments;
pub mod ode;
pub mod risk;
pub mod sim;

pub use error::{Error, Result};
