//! Experiment configuration: defaults, flat `key=value` config files, and
//! flag overrides.
//!
//! Precedence is defaults < config file < command-line flags; the binary
//! applies flags after [`ExperimentConfig::from_file`] so a flag always wins.

use std::path::{Path, PathBuf};

use volsched_core::risk::{gamma_of, LinRegParams};

use crate::{CliError, Result};

/// Full description of one experiment: sample size `N`, step count `M`,
/// learning rate `h`, the regression model, the start point, and run
/// plumbing (replications, seed, output directory).
///
/// Derived quantities: horizon `T = M h` and sample budget `c = N h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Total samples consumed per replication.
    pub n: u64,
    /// Number of SGD steps.
    pub m: usize,
    /// Learning rate.
    pub h: f64,
    /// Monte Carlo replications per schedule.
    pub replications: usize,
    /// Base RNG seed; replication `r` uses stream `r`.
    pub seed: u64,
    /// Input second moment `E[x^2]`.
    pub kappa: f64,
    /// True regression coefficient.
    pub theta_star: f64,
    /// Observation noise variance.
    pub sigma_eps2: f64,
    /// Input kurtosis.
    pub kurtosis: f64,
    /// Common starting iterate for every run.
    pub chi0: f64,
    /// Directory the CSV/report files are written into.
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    /// The larger reference setup: `N = 2^13`, `M = 2^10`, `h = 0.01`
    /// (constant batch size 8), unit Gaussian regression data, and a start
    /// point chosen so the initial excess-risk ratio `gamma` is 280.
    fn default() -> Self {
        let p = LinRegParams::unit_gaussian();
        Self {
            n: 8192,
            m: 1024,
            h: 0.01,
            replications: 1000,
            seed: 0,
            kappa: p.kappa,
            theta_star: p.theta_star,
            sigma_eps2: p.sigma_eps2,
            kurtosis: p.kurtosis,
            chi0: p.theta_star + 140.0_f64.sqrt(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a flat `key=value` file over the defaults.
    ///
    /// Blank lines and `#` comments are skipped; keys match the CLI flag
    /// names (`n`, `m`, `h`, `replications`, `seed`, `kappa`, `theta_star`,
    /// `sigma_eps2`, `kurtosis`, `chi0`, `out`). Unknown keys and malformed
    /// values are errors, not warnings, so typos cannot silently fall back
    /// to defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(cut) => &raw[..cut],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected key=value, got '{raw}'", path.display(), idx + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                CliError::Config(msg) => {
                    CliError::Config(format!("{}:{}: {msg}", path.display(), idx + 1))
                }
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Assigns one `key=value` pair; shared by the file parser and tests.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                CliError::Config(format!("invalid value '{value}' for key '{key}'"))
            })
        }
        match key {
            "n" => self.n = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "h" => self.h = parse(key, value)?,
            "replications" => self.replications = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "theta_star" => self.theta_star = parse(key, value)?,
            "sigma_eps2" => self.sigma_eps2 = parse(key, value)?,
            "kurtosis" => self.kurtosis = parse(key, value)?,
            "chi0" => self.chi0 = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Checks the cross-field invariants; returns `self` for chaining.
    ///
    /// `N` must be a positive multiple of `M` (the constant comparator batch
    /// size is `N/M`), `h` must lie in `(0, 1)`, and at least two
    /// replications are required so the standard-error column is defined.
    /// Model-parameter domains are delegated to the core constructor.
    pub fn validate(self) -> Result<Self> {
        if self.m == 0 {
            return Err(CliError::Config("m must be positive".into()));
        }
        if self.n == 0 || self.n % self.m as u64 != 0 {
            return Err(CliError::Config(format!(
                "n = {} must be a positive multiple of m = {}",
                self.n, self.m
            )));
        }
        if !(self.h > 0.0 && self.h < 1.0) {
            return Err(CliError::Config(format!("h = {} must lie in (0, 1)", self.h)));
        }
        if self.replications < 2 {
            return Err(CliError::Config(format!(
                "replications = {} must be at least 2 (standard errors need a sample)",
                self.replications
            )));
        }
        if !self.chi0.is_finite() {
            return Err(CliError::Config(format!("chi0 = {} must be finite", self.chi0)));
        }
        self.params()?;
        Ok(self)
    }

    /// Regression model parameters (validated by the core constructor).
    pub fn params(&self) -> Result<LinRegParams> {
        Ok(LinRegParams::new(self.kappa, self.theta_star, self.sigma_eps2, self.kurtosis)?)
    }

    /// Time horizon `T = M h`.
    pub fn horizon(&self) -> f64 {
        self.m as f64 * self.h
    }

    /// Sample budget `c = N h`.
    pub fn budget(&self) -> f64 {
        self.n as f64 * self.h
    }

    /// Constant comparator batch size `N / M`.
    pub fn constant_batch(&self) -> u64 {
        self.n / self.m as u64
    }

    /// Initial-condition ratio `gamma` entering the schedule closed form.
    pub fn gamma(&self) -> Result<f64> {
        Ok(gamma_of(&self.params()?, self.chi0))
    }
}
