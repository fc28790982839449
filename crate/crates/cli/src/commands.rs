//! The three `volsched` commands: schedule export, the constant-vs-adaptive
//! batch-size experiment, and the verification suites.
//!
//! Commands return artifact structs describing what was written, so
//! integration tests can drive them directly; the binary only prints the
//! summaries. All randomness flows through [`RngSpec`] streams derived from
//! the configured seed, which is what makes reruns byte-identical.

use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;

use volsched_core::control::{
    budget_antiderivative, budget_of, generic_lambda_from_linreg, linreg_alpha, linreg_budget,
    linreg_lambda_closed_form, lipschitz_bound, optimal_alpha, solve_lambda, switch_time,
    VolatilityControl,
};
use volsched_core::moments::{adjoint_solution, risk_expansion, solve_moments};
use volsched_core::ode::{
    flow_sensitivities, integrate_gradient_flow, quadrature, TimeGrid, DEFAULT_STEPS,
};
use volsched_core::risk::RiskSpec;
use volsched_core::sim::{
    exact_sde_second_moment, exact_sgd_moments, generate_dataset, mean_and_sem, run_sde_em,
    run_sgd, schedule_from_alpha, BatchSchedule, RngSpec, SgdRun,
};

use crate::config::ExperimentConfig;
use crate::csvio;
use crate::{CliError, Result};

type CoreResult<T> = core::result::Result<T, volsched_core::Error>;

/// Stream offsets keeping the RNG consumers disjoint: replication `r` draws
/// its dataset from stream `r`, its SDE path from `EM_STREAM + r`, and the
/// perturbation sampler owns a stream of its own.
const EM_STREAM: u64 = 1 << 32;
const PERTURB_STREAM: u64 = 1 << 33;

/// Runs `job` on a pool of the requested width; `None` keeps the default
/// pool (hardware parallelism).
fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// How `schedule` picks the multiplier: directly, or by solving for a budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    Lambda(f64),
    Budget(f64),
}

/// Schedule-command inputs beyond the shared config.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScheduleRequest {
    /// `None` solves for the config's own budget `c = N h`.
    pub mode: Option<ScheduleMode>,
    /// Overrides the `gamma` derived from the config's model and `chi0`.
    pub gamma: Option<f64>,
    /// Overrides the config horizon `T = M h`.
    pub horizon: Option<f64>,
}

/// What `schedule` wrote and the headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleArtifacts {
    pub lambda: f64,
    /// Clamp release time, clipped into `[0, T]`.
    pub switch_time: f64,
    pub budget: f64,
    pub lipschitz_bound: f64,
    pub schedule_path: PathBuf,
    pub metadata_path: PathBuf,
}

/// Computes the optimal volatility schedule and exports it.
///
/// `schedule.csv` holds the schedule on the export grid (`DEFAULT_STEPS`
/// intervals) as `t, alpha, batch_size_real` with `batch_size_real = 1/alpha`;
/// `metadata.txt` records the multiplier, switch time, achieved budget, and
/// the Lipschitz bound as `key=value` lines. An infeasible budget (below the
/// horizon) surfaces the core error carrying both numbers.
pub fn cmd_schedule(cfg: &ExperimentConfig, req: &ScheduleRequest) -> Result<ScheduleArtifacts> {
    let p = cfg.params()?;
    let gamma = match req.gamma {
        Some(g) => g,
        None => cfg.gamma()?,
    };
    let horizon = req.horizon.unwrap_or_else(|| cfg.horizon());
    let grid = TimeGrid::new(horizon, DEFAULT_STEPS)?;
    let factory = |l: f64| linreg_alpha(gamma, p.kappa, l, grid);
    let (lambda, ctrl) = match req.mode {
        Some(ScheduleMode::Lambda(l)) => (l, factory(l)?),
        Some(ScheduleMode::Budget(c)) => solve_lambda(c, factory)?,
        None => solve_lambda(cfg.budget(), factory)?,
    };

    std::fs::create_dir_all(&cfg.out)?;
    let schedule_path = cfg.out.join("schedule.csv");
    let rows = (0..grid.num_points()).map(|k| {
        let a = ctrl.alpha[k];
        vec![csvio::float(grid.point(k)), csvio::float(a), csvio::float(1.0 / a)]
    });
    csvio::write_csv(&schedule_path, &["t", "alpha", "batch_size_real"], rows)?;

    let ts = ctrl
        .switch_time
        .unwrap_or_else(|| switch_time(gamma, p.kappa, lambda))
        .clamp(0.0, horizon);
    let metadata_path = cfg.out.join("metadata.txt");
    csvio::write_key_values(
        &metadata_path,
        &[
            ("lambda", csvio::float(lambda)),
            ("switch_time", csvio::float(ts)),
            ("budget", csvio::float(ctrl.budget)),
            ("lipschitz_bound", csvio::float(ctrl.lipschitz_bound)),
            ("gamma", csvio::float(gamma)),
            ("kappa", csvio::float(p.kappa)),
            ("horizon", csvio::float(horizon)),
            ("grid_steps", DEFAULT_STEPS.to_string()),
        ],
    )?;

    Ok(ScheduleArtifacts {
        lambda,
        switch_time: ts,
        budget: ctrl.budget,
        lipschitz_bound: ctrl.lipschitz_bound,
        schedule_path,
        metadata_path,
    })
}

/// What `experiment` wrote, plus the per-step statistics so tests can check
/// the contract without re-parsing the CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentArtifacts {
    /// Multiplier behind the adaptive schedule.
    pub lambda: f64,
    /// Adaptive batch sizes `B_0 .. B_{M-1}` (they sum to `N`).
    pub batch_sizes: Vec<u64>,
    /// Samples consumed after each step under the adaptive schedule
    /// (`M + 1` entries, `0 .. N`).
    pub optimal_cumulative: Vec<u64>,
    /// `(mean, stderr)` of the excess risk per step, constant schedule.
    pub constant_stats: Vec<(f64, f64)>,
    /// `(mean, stderr)` of the excess risk per step, adaptive schedule.
    pub optimal_stats: Vec<(f64, f64)>,
    pub risk_constant_path: PathBuf,
    pub risk_optimal_path: PathBuf,
    pub batches_path: PathBuf,
}

impl ExperimentArtifacts {
    pub fn final_constant_risk(&self) -> f64 {
        self.constant_stats.last().unwrap().0
    }

    pub fn final_optimal_risk(&self) -> f64 {
        self.optimal_stats.last().unwrap().0
    }
}

/// Runs the two-schedule comparison: a constant batch size `N/M` against the
/// budget-matched adaptive schedule, `replications` times each.
///
/// Every replication draws one dataset of `N` points (stream `r`) and trains
/// both schedules on it, single pass over consecutive blocks, so the two
/// risk curves differ only through the batch allocation. Outputs:
/// `risk_constant.csv` and `risk_optimal.csv` with columns
/// `samples_processed, mean_excess_risk, stderr` (`M + 1` rows from 0 to
/// `N`), and `batches_optimal.csv` with `samples_processed, batch_size`
/// (`M` rows; the sample count includes the batch it describes).
pub fn cmd_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentArtifacts> {
    let p = cfg.params()?;
    let gamma = cfg.gamma()?;
    let (n, m, h) = (cfg.n, cfg.m, cfg.h);
    let sgd_grid = TimeGrid::new(cfg.horizon(), m)?;
    let optimal = schedule_from_alpha(|l| linreg_alpha(gamma, p.kappa, l, sgd_grid), n, m, h)?;
    let constant = BatchSchedule::constant(cfg.constant_batch(), m)?;
    let lambda = optimal.lambda.expect("solved schedules record their multiplier");

    let excess_path = |run: &SgdRun| -> Vec<f64> {
        run.iterates
            .iter()
            .map(|&th| 0.5 * p.kappa * (th - p.theta_star) * (th - p.theta_star))
            .collect()
    };
    let reps = cfg.replications as u64;
    let paths: CoreResult<Vec<(Vec<f64>, Vec<f64>)>> = with_pool(threads, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let data = generate_dataset(&p, n as usize, RngSpec::new(cfg.seed, r));
                let run_c = run_sgd(&data, &constant, h, cfg.chi0)?;
                let run_o = run_sgd(&data, &optimal, h, cfg.chi0)?;
                Ok((excess_path(&run_c), excess_path(&run_o)))
            })
            .collect()
    })?;
    let paths = paths?;

    // Fixed-order column reduction; replication order is the stream order
    // regardless of the pool's scheduling.
    let column = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, step: usize| -> (f64, f64) {
        let col: Vec<f64> = paths.iter().map(|pair| pick(pair)[step]).collect();
        mean_and_sem(&col)
    };
    let constant_stats: Vec<(f64, f64)> = (0..=m).map(|v| column(|pr| &pr.0, v)).collect();
    let optimal_stats: Vec<(f64, f64)> = (0..=m).map(|v| column(|pr| &pr.1, v)).collect();

    let mut optimal_cumulative = Vec::with_capacity(m + 1);
    optimal_cumulative.push(0u64);
    for &b in &optimal.sizes {
        optimal_cumulative.push(optimal_cumulative.last().unwrap() + b);
    }
    let constant_cumulative: Vec<u64> =
        (0..=m as u64).map(|v| v * cfg.constant_batch()).collect();

    std::fs::create_dir_all(&cfg.out)?;
    let risk_header = ["samples_processed", "mean_excess_risk", "stderr"];
    let risk_rows = |samples: &[u64], stats: &[(f64, f64)]| -> Vec<Vec<String>> {
        samples
            .iter()
            .zip(stats)
            .map(|(&s, &(mean, sem))| vec![s.to_string(), csvio::float(mean), csvio::float(sem)])
            .collect()
    };
    let risk_constant_path = cfg.out.join("risk_constant.csv");
    csvio::write_csv(&risk_constant_path, &risk_header, risk_rows(&constant_cumulative, &constant_stats))?;
    let risk_optimal_path = cfg.out.join("risk_optimal.csv");
    csvio::write_csv(&risk_optimal_path, &risk_header, risk_rows(&optimal_cumulative, &optimal_stats))?;

    let batches_path = cfg.out.join("batches_optimal.csv");
    let batch_rows = (0..m).map(|v| {
        vec![optimal_cumulative[v + 1].to_string(), optimal.sizes[v].to_string()]
    });
    csvio::write_csv(&batches_path, &["samples_processed", "batch_size"], batch_rows)?;

    Ok(ExperimentArtifacts {
        lambda,
        batch_sizes: optimal.sizes,
        optimal_cumulative,
        constant_stats,
        optimal_stats,
        risk_constant_path,
        risk_optimal_path,
        batches_path,
    })
}

/// The four verification suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifySuite {
    Orders,
    Optimality,
    Oracles,
    ClosedForms,
}

impl VerifySuite {
    pub fn name(self) -> &'static str {
        match self {
            VerifySuite::Orders => "orders",
            VerifySuite::Optimality => "optimality",
            VerifySuite::Oracles => "oracles",
            VerifySuite::ClosedForms => "closed_forms",
        }
    }
}

/// One verified property: what was measured and what it had to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub requirement: String,
    pub pass: bool,
}

fn check_in(name: &'static str, measured: f64, lo: f64, hi: f64) -> Check {
    Check {
        name,
        measured,
        requirement: format!("in [{lo}, {hi}]"),
        pass: measured >= lo && measured <= hi,
    }
}

fn check_le(name: &'static str, measured: f64, bound: f64) -> Check {
    Check { name, measured, requirement: format!("<= {bound:e}"), pass: measured <= bound }
}

/// Outcome of one suite run; the report file is already on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
    pub report_path: PathBuf,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    /// The report text: one line per check plus a verdict line.
    pub fn render(&self) -> String {
        let mut out = format!("suite={}\n", self.suite);
        for c in &self.checks {
            out.push_str(&format!(
                "{} {} measured={} required={}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                csvio::float(c.measured),
                c.requirement
            ));
        }
        let failures = self.failures();
        out.push_str(&format!(
            "result={} checks={} failures={}\n",
            if failures == 0 { "PASS" } else { "FAIL" },
            self.checks.len(),
            failures
        ));
        out
    }

    /// Maps a failed report to the error the binary turns into exit code 1.
    pub fn into_result(self) -> Result<VerifyReport> {
        if self.passed() {
            Ok(self)
        } else {
            Err(CliError::VerificationFailed { suite: self.suite, failures: self.failures() })
        }
    }
}

/// Runs one verification suite and writes `verify_<suite>.txt` into the
/// output directory. Returns the report; callers decide whether a failed
/// report is fatal (the binary does, via [`VerifyReport::into_result`]).
pub fn cmd_verify(
    cfg: &ExperimentConfig,
    suite: VerifySuite,
    threads: Option<usize>,
) -> Result<VerifyReport> {
    let checks = match suite {
        VerifySuite::Orders => suite_orders(cfg)?,
        VerifySuite::Optimality => suite_optimality(cfg)?,
        VerifySuite::Oracles => suite_oracles(cfg, threads)?,
        VerifySuite::ClosedForms => suite_closed_forms(cfg)?,
    };
    std::fs::create_dir_all(&cfg.out)?;
    let report_path = cfg.out.join(format!("verify_{}.txt", suite.name()));
    let report = VerifyReport { suite: suite.name(), checks, report_path };
    std::fs::write(&report.report_path, report.render())?;
    Ok(report)
}

/// Step-size ladder shared by the order suites; it tiles the desk horizon
/// exactly.
const LADDER: [f64; 4] = [0.08, 0.04, 0.02, 0.01];
const DESK_HORIZON: f64 = 2.56;

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Order-of-accuracy ladder: the SDE models SGD to second order, the bare
/// flow only to first, and the moment expansion tracks the SDE to second.
fn suite_orders(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let p = cfg.params()?;
    let spec = RiskSpec::linear_regression(&p)?;
    let b = cfg.constant_batch();
    let chi0 = cfg.chi0;
    let fine = TimeGrid::new(DESK_HORIZON, DEFAULT_STEPS)?;
    let alpha = vec![1.0 / b as f64; fine.num_points()];
    let ctrl = VolatilityControl::new(fine, alpha, 1.0)?;

    let x0 = integrate_gradient_flow(&spec, chi0, fine)?;
    let expansion = risk_expansion(&spec, &x0, &solve_moments(&spec, &x0, &ctrl)?);
    let flow_excess =
        0.5 * p.kappa * (chi0 - p.theta_star) * (chi0 - p.theta_star)
            * (-2.0 * p.kappa * DESK_HORIZON).exp();

    let mut log_h = Vec::new();
    let (mut gap_sde, mut gap_flow, mut gap_exp) = (Vec::new(), Vec::new(), Vec::new());
    for h in LADDER {
        let steps = (DESK_HORIZON / h).round() as usize;
        let schedule = BatchSchedule::constant(b, steps)?;
        let sgd = exact_sgd_moments(&p, &schedule, h, chi0).last().unwrap().excess_risk(&p);
        let sde = 0.5 * p.kappa * exact_sde_second_moment(&p, &ctrl, h, chi0, fine)?.terminal();
        log_h.push(h.ln());
        gap_sde.push((sgd - sde).abs().ln());
        gap_flow.push((sgd - flow_excess).abs().ln());
        gap_exp.push((sde + p.r_star() - expansion.at(h)).abs().ln());
    }
    Ok(vec![
        check_in("sgd_vs_sde_order", fit_slope(&log_h, &gap_sde), 1.8, 2.3),
        check_in("flow_baseline_order", fit_slope(&log_h, &gap_flow), 0.8, 1.3),
        check_in("expansion_vs_sde_order", fit_slope(&log_h, &gap_exp), 1.8, 2.3),
    ])
}

/// Pontryagin optimality on a desk-scale problem built from the config's
/// model: pointwise stationarity off the clamp (against the pipeline costate
/// and against the closed-form one), and no improvement from 50 random
/// feasible smooth perturbations of the schedule.
fn suite_optimality(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    const T: f64 = 2.8;
    let p = cfg.params()?;
    let gamma = cfg.gamma()?;
    let spec = RiskSpec::linear_regression(&p)?;
    let grid = TimeGrid::new(T, DEFAULT_STEPS)?;
    let (lambda_r, _) = solve_lambda(2.0 * T, |l| linreg_alpha(gamma, p.kappa, l, grid))?;
    let lambda = generic_lambda_from_linreg(&p, T, lambda_r);

    let x0 = integrate_gradient_flow(&spec, cfg.chi0, grid)?;
    let sens = flow_sensitivities(&spec, &x0)?;
    let ctrl = optimal_alpha(&sens, &spec, &x0, lambda)?;
    let adj = adjoint_solution(&spec, &sens, x0.terminal())?;

    let mut pipeline_residual = 0.0f64;
    let mut analytic_residual = 0.0f64;
    for k in 0..grid.num_points() {
        let a = ctrl.alpha[k];
        if a >= 1.0 - 1e-9 {
            continue;
        }
        let cost = lambda / (a * a);
        let sigma2 = spec.sigma2(x0.values[k]);
        let value = sigma2 * adj.y1.values[k];
        pipeline_residual = pipeline_residual.max(((value - cost) / cost).abs());
        let y1 = 0.5 * p.kappa * (-2.0 * p.kappa * (T - grid.point(k))).exp();
        analytic_residual = analytic_residual.max(((sigma2 * y1 - cost) / cost).abs());
    }

    let objective = |c: &VolatilityControl| -> Result<f64> {
        let m = solve_moments(&spec, &x0, c)?;
        Ok(risk_expansion(&spec, &x0, &m).correction + lambda * budget_of(c))
    };
    let j_star = objective(&ctrl)?;
    let mut rng = RngSpec::new(cfg.seed, PERTURB_STREAM).rng();
    let mut best_improvement = f64::NEG_INFINITY;
    for _ in 0..50 {
        let amp = (0.005 + 0.045 * rng.gen::<f64>()) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let centre = T * rng.gen::<f64>();
        let width = 0.15 + 0.45 * rng.gen::<f64>();
        let perturbed: Vec<f64> = (0..grid.num_points())
            .map(|k| {
                let t = grid.point(k);
                let bump = amp * (-0.5 * ((t - centre) / width).powi(2)).exp();
                (ctrl.alpha[k] + bump).clamp(0.01, 1.0)
            })
            .collect();
        let j = objective(&VolatilityControl::new(grid, perturbed, lambda)?)?;
        best_improvement = best_improvement.max(j_star - j);
    }

    Ok(vec![
        check_le("stationarity_residual", pipeline_residual, 1e-8),
        check_le("analytic_costate_residual", analytic_residual, 1e-6),
        check_le("perturbation_improvement", best_improvement, 1e-8),
    ])
}

/// Monte Carlo against the exact oracles: SGD under both experiment
/// schedules against the discrete moment recursion, and the Euler-Maruyama
/// SDE paths against the exact second-moment ODE, each within 3 standard
/// errors at the final step.
fn suite_oracles(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<Check>> {
    let p = cfg.params()?;
    let spec = RiskSpec::linear_regression(&p)?;
    let gamma = cfg.gamma()?;
    let (n, m, h, chi0) = (cfg.n, cfg.m, cfg.h, cfg.chi0);
    let reps = cfg.replications as u64;

    let sgd_grid = TimeGrid::new(cfg.horizon(), m)?;
    let optimal = schedule_from_alpha(|l| linreg_alpha(gamma, p.kappa, l, sgd_grid), n, m, h)?;
    let constant = BatchSchedule::constant(cfg.constant_batch(), m)?;
    let exact_const = exact_sgd_moments(&p, &constant, h, chi0).last().unwrap().excess_risk(&p);
    let exact_opt = exact_sgd_moments(&p, &optimal, h, chi0).last().unwrap().excess_risk(&p);

    let fine = TimeGrid::new(cfg.horizon(), DEFAULT_STEPS)?;
    let (_, ctrl) = solve_lambda(cfg.budget(), |l| linreg_alpha(gamma, p.kappa, l, fine))?;
    let substeps = ((20.0 * fine.dt() / h).ceil() as usize).max(1);
    let exact_em = 0.5 * p.kappa * exact_sde_second_moment(&p, &ctrl, h, chi0, fine)?.terminal();

    let excess = |theta: f64| 0.5 * p.kappa * (theta - p.theta_star) * (theta - p.theta_star);
    let sgd_finals: CoreResult<Vec<(f64, f64)>> = with_pool(threads, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let data = generate_dataset(&p, n as usize, RngSpec::new(cfg.seed, r));
                let fc = excess(run_sgd(&data, &constant, h, chi0)?.final_theta());
                let fo = excess(run_sgd(&data, &optimal, h, chi0)?.final_theta());
                Ok((fc, fo))
            })
            .collect()
    })?;
    let sgd_finals = sgd_finals?;
    let em_finals: CoreResult<Vec<f64>> = with_pool(threads, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = RngSpec::new(cfg.seed, EM_STREAM + r).rng();
                let path = run_sde_em(&spec, &ctrl, h, chi0, substeps, &mut rng)?;
                Ok(excess(path.terminal()))
            })
            .collect()
    })?;
    let em_finals = em_finals?;

    let z = |finals: &[f64], exact: f64| {
        let (mean, sem) = mean_and_sem(finals);
        (mean - exact).abs() / sem
    };
    let const_finals: Vec<f64> = sgd_finals.iter().map(|f| f.0).collect();
    let opt_finals: Vec<f64> = sgd_finals.iter().map(|f| f.1).collect();
    Ok(vec![
        check_le("sgd_constant_z_score", z(&const_finals, exact_const), 3.0),
        check_le("sgd_optimal_z_score", z(&opt_finals, exact_opt), 3.0),
        check_le("sde_em_z_score", z(&em_finals, exact_em), 3.0),
    ])
}

/// Closed forms against their independent evaluations: the noise gain along
/// the flow, the reference switch time, the clamp-exit identity, the
/// Lipschitz bound, the budget antiderivative against quadrature, the
/// unclamped multiplier closed form, and the budget round trip.
fn suite_closed_forms(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let p = cfg.params()?;
    let gamma = cfg.gamma()?;
    let kappa = p.kappa;
    let horizon = cfg.horizon();
    let spec = RiskSpec::linear_regression(&p)?;
    let grid = TimeGrid::new(horizon, DEFAULT_STEPS)?;

    let x0 = integrate_gradient_flow(&spec, cfg.chi0, grid)?;
    let sens = flow_sensitivities(&spec, &x0)?;
    let mut gain_err = 0.0f64;
    for k in 0..grid.num_points() {
        let exact = kappa * (-2.0 * kappa * (horizon - grid.point(k))).exp();
        gain_err = gain_err.max(((sens.noise_gain.values[k] - exact) / exact).abs());
    }

    let reference_ts = (switch_time(280.0, 1.0, 300.0) - 0.5 * 20.0f64.ln()).abs();

    let factory = |l: f64| linreg_alpha(gamma, kappa, l, grid);
    let (lambda, ctrl) = solve_lambda(cfg.budget(), factory)?;
    let ts = ctrl.switch_time.unwrap_or(0.0);
    let clamp_identity = if ts > 0.0 {
        ((gamma + (2.0 * kappa * ts).exp() - lambda) / lambda).abs()
    } else {
        0.0
    };
    let budget_roundtrip = ((ctrl.budget - cfg.budget()) / cfg.budget()).abs();

    let bound = lipschitz_bound(kappa, lambda, horizon);
    let mut empirical = 0.0f64;
    for k in 0..grid.steps {
        let slope = (ctrl.alpha[k + 1].sqrt() - ctrl.alpha[k].sqrt()).abs() / grid.dt();
        empirical = empirical.max(slope);
    }

    let span = budget_antiderivative(gamma, kappa, horizon) - budget_antiderivative(gamma, kappa, 0.0);
    let quad = quadrature(
        |t| (gamma + (2.0 * kappa * t).exp()).sqrt(),
        0.0,
        horizon,
        (1e-9 * span.abs()).max(1e-12),
    )?;
    let antideriv_err = ((span - quad) / quad).abs();

    let lambda_probe = 0.5 * (gamma + 1.0);
    let c_probe = linreg_budget(gamma, kappa, lambda_probe, horizon);
    let (solved, _) = solve_lambda(c_probe, factory)?;
    let closed = linreg_lambda_closed_form(gamma, kappa, horizon, c_probe);
    let closed_form_err = ((solved - closed) / closed).abs();

    Ok(vec![
        check_le("noise_gain_rel_error", gain_err, 1e-9),
        check_le("switch_time_reference_error", reference_ts, 1e-9),
        check_le("clamp_exit_identity", clamp_identity, 1e-12),
        check_le("sqrt_alpha_lipschitz_ratio", empirical / bound, 1.0),
        check_le("antiderivative_vs_quadrature", antideriv_err, 1e-8),
        check_le("unclamped_lambda_closed_form", closed_form_err, 1e-6),
        check_le("budget_roundtrip", budget_roundtrip, 1e-8),
    ])
}
