//! Binary entry point: flag parsing and dispatch. All real work lives in
//! the library so tests can call it directly.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use volsched::commands::{
    cmd_experiment, cmd_schedule, cmd_verify, ScheduleMode, ScheduleRequest, VerifySuite,
};
use volsched::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "volsched",
    version,
    about = "Batch-size schedules for SGD: compute, simulate, verify"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the optimal volatility schedule and export it as CSV.
    Schedule(ScheduleCmd),
    /// Compare constant and adaptive batch-size schedules by Monte Carlo.
    Experiment(CommonArgs),
    /// Run a verification suite and write its report.
    Verify(VerifyCmd),
}

/// Flags shared by every subcommand; each overrides the config file, which
/// overrides the built-in defaults.
#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all hardware threads).
    #[arg(long)]
    threads: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Total samples per replication.
    #[arg(long)]
    n: Option<u64>,
    /// Number of SGD steps.
    #[arg(long)]
    m: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    h: Option<f64>,
    /// Input second moment E[x^2].
    #[arg(long)]
    kappa: Option<f64>,
    /// True regression coefficient.
    #[arg(long)]
    theta_star: Option<f64>,
    /// Observation noise variance.
    #[arg(long)]
    sigma_eps2: Option<f64>,
    /// Input kurtosis.
    #[arg(long)]
    kurtosis: Option<f64>,
    /// Common starting iterate.
    #[arg(long)]
    chi0: Option<f64>,
}

impl CommonArgs {
    fn resolve(&self) -> volsched::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.replications {
            cfg.replications = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.h {
            cfg.h = v;
        }
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = self.theta_star {
            cfg.theta_star = v;
        }
        if let Some(v) = self.sigma_eps2 {
            cfg.sigma_eps2 = v;
        }
        if let Some(v) = self.kurtosis {
            cfg.kurtosis = v;
        }
        if let Some(v) = self.chi0 {
            cfg.chi0 = v;
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct ScheduleCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Lagrange multiplier for the schedule.
    #[arg(long, conflicts_with = "budget_c")]
    lambda: Option<f64>,
    /// Sample budget to solve the multiplier for (default: the config's N*h).
    #[arg(long)]
    budget_c: Option<f64>,
    /// Override the initial-condition ratio gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Override the schedule horizon T.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct VerifyCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Property suite to run.
    #[arg(value_enum)]
    suite: SuiteArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Orders,
    Optimality,
    Oracles,
    #[value(name = "closed_forms", alias = "closed-forms")]
    ClosedForms,
}

impl From<SuiteArg> for VerifySuite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Orders => VerifySuite::Orders,
            SuiteArg::Optimality => VerifySuite::Optimality,
            SuiteArg::Oracles => VerifySuite::Oracles,
            SuiteArg::ClosedForms => VerifySuite::ClosedForms,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> volsched::Result<()> {
    match cli.cmd {
        Cmd::Schedule(args) => {
            let cfg = args.common.resolve()?;
            let mode = match (args.lambda, args.budget_c) {
                (Some(l), None) => Some(ScheduleMode::Lambda(l)),
                (None, Some(c)) => Some(ScheduleMode::Budget(c)),
                (None, None) => None,
                (Some(_), Some(_)) => unreachable!("clap rejects --lambda with --budget-c"),
            };
            let req = ScheduleRequest { mode, gamma: args.gamma, horizon: args.horizon };
            let art = cmd_schedule(&cfg, &req)?;
            println!("wrote {}", art.schedule_path.display());
            println!("wrote {}", art.metadata_path.display());
            println!(
                "lambda={} switch_time={} budget={} lipschitz_bound={}",
                art.lambda, art.switch_time, art.budget, art.lipschitz_bound
            );
            Ok(())
        }
        Cmd::Experiment(common) => {
            let cfg = common.resolve()?;
            let art = cmd_experiment(&cfg, common.threads)?;
            println!("wrote {}", art.risk_constant_path.display());
            println!("wrote {}", art.risk_optimal_path.display());
            println!("wrote {}", art.batches_path.display());
            println!(
                "final mean excess risk: constant={} optimal={} (lambda={})",
                art.final_constant_risk(),
                art.final_optimal_risk(),
                art.lambda
            );
            Ok(())
        }
        Cmd::Verify(args) => {
            let cfg = args.common.resolve()?;
            let report = cmd_verify(&cfg, args.suite.into(), args.common.threads)?;
            print!("{}", report.render());
            println!("report: {}", report.report_path.display());
            report.into_result().map(|_| ())
        }
    }
}
