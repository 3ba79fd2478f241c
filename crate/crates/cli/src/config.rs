//! TOML configuration. Every key is optional; command-line flags take
//! precedence over the file, which takes precedence over built-in defaults.
//!
//! ```toml
//! family = "ar1"          # or "arma11"
//!
//! [solver]
//! m = 100
//! eta = 0.1
//! n_max = 2000
//! tol = 1e-4
//! early_stopping = true
//! init_b = 1
//! seed = 0
//! trace_every = 10
//!
//! [box]
//! sigma2_min = 1e-4
//! sigma2_max = 25.0
//! rho_abs_max = 0.99
//! phi_abs_max = 1.0
//! ```

use std::path::Path;

use clap::Args;
use hcpanel::{CovarianceFamily, SolverConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::panel_io::read_text;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub m: Option<usize>,
    pub eta: Option<f64>,
    pub n_max: Option<usize>,
    pub tol: Option<f64>,
    pub early_stopping: Option<bool>,
    pub init_b: Option<usize>,
    pub seed: Option<u64>,
    pub trace_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub sigma2_min: Option<f64>,
    pub sigma2_max: Option<f64>,
    pub rho_abs_max: Option<f64>,
    pub phi_abs_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub family: Option<CovarianceFamily>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, rename = "box")]
    pub bounds: BoxSection,
}

impl FileConfig {
    pub fn parse(text: &str, source: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("{source}: {e}")))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::parse(&read_text(p)?, &p.display().to_string()),
            None => Ok(FileConfig::default()),
        }
    }
}

/// Solver flags shared by `fit` and `mc`.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverFlags {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Number of atoms
    #[arg(long)]
    pub m: Option<usize>,
    /// Step size in (0, 1]
    #[arg(long)]
    pub eta: Option<f64>,
    /// Iteration cap
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    /// FOC-gap tolerance for early stopping
    #[arg(long)]
    pub tol: Option<f64>,
    /// Run all n_max iterations
    #[arg(long = "no-early-stop")]
    pub no_early_stop: bool,
    /// Units per initialization subsample
    #[arg(long = "init-b")]
    pub init_b: Option<usize>,
    /// Solver seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace stride (0 = first and last only)
    #[arg(long = "trace-every")]
    pub trace_every: Option<usize>,
}

impl SolverFlags {
    /// Defaults, then the file, then the flags.
    pub fn resolve(&self, file: &FileConfig, defaults: SolverConfig) -> CliResult<SolverConfig> {
        let s = &file.solver;
        let b = &file.bounds;
        let mut c = defaults;
        c.m = self.m.or(s.m).unwrap_or(c.m);
        c.eta = self.eta.or(s.eta).unwrap_or(c.eta);
        c.n_max = self.n_max.or(s.n_max).unwrap_or(c.n_max);
        c.tol = self.tol.or(s.tol).unwrap_or(c.tol);
        c.init_b = self.init_b.or(s.init_b).unwrap_or(c.init_b);
        c.seed = self.seed.or(s.seed).unwrap_or(c.seed);
        c.trace_every = self.trace_every.or(s.trace_every).unwrap_or(c.trace_every);
        let stop = if self.no_early_stop {
            false
        } else {
            s.early_stopping.unwrap_or(c.early_stopping() || self.tol.or(s.tol).is_some())
        };
        if !stop {
            c.tol = f64::NEG_INFINITY;
        }
        c.bounds.sigma2_min = b.sigma2_min.unwrap_or(c.bounds.sigma2_min);
        c.bounds.sigma2_max = b.sigma2_max.unwrap_or(c.bounds.sigma2_max);
        c.bounds.rho_abs_max = b.rho_abs_max.unwrap_or(c.bounds.rho_abs_max);
        if b.phi_abs_max.is_some() {
            c.bounds.phi_abs_max = b.phi_abs_max;
        }
        c.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(c)
    }
}
