//! NPMLE solvers: the Wasserstein-Fisher-Rao particle flow, EM, and the
//! per-unit and subsample maximum likelihood routines they rely on.

mod em;
mod init;
mod mle;
mod wfr;

pub use em::{em_fit, em_weight_update};
pub use init::init_subsample_mle;
pub use mle::{gls_beta, individual_mle, weighted_mle, weighted_mle_from, GRAD_TOL, GRID_POINTS, MAX_STEPS};
pub use wfr::{fr_step, w_step, wfr_fit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixingDistribution;
use crate::model::{Theta, ThetaBox};

/// Tuning of the WFR and EM solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of atoms.
    pub m: usize,
    /// Step size in `(0, 1]`.
    pub eta: f64,
    /// Iteration cap.
    pub n_max: usize,
    /// FOC tolerance; `f64::NEG_INFINITY` disables early stopping.
    pub tol: f64,
    pub bounds: ThetaBox,
    /// Units per subsample in the initialization.
    pub init_b: usize,
    pub seed: u64,
    /// Trace stride; `0` keeps only the first and last records.
    pub trace_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::hivd()
    }
}

impl SolverConfig {
    /// Settings for short panels with intercept-only means.
    pub fn hivd() -> Self {
        SolverConfig {
            m: 100,
            eta: 0.1,
            n_max: 2000,
            tol: 1e-4,
            bounds: ThetaBox::default(),
            init_b: 1,
            seed: 0,
            trace_every: 10,
        }
    }

    /// Settings for the covariate design: small steps, no early stopping.
    pub fn hivdx() -> Self {
        SolverConfig {
            m: 500,
            eta: 0.005,
            n_max: 10_000,
            tol: f64::NEG_INFINITY,
            ..Self::hivd()
        }
    }

    pub fn early_stopping(&self) -> bool {
        self.tol > f64::NEG_INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.tol >= 0.0 || self.tol == f64::NEG_INFINITY) {
            return Err(Error::Config(format!("tol must be >= 0 or disabled, got {}", self.tol)));
        }
        if self.init_b == 0 {
            return Err(Error::Config("init_b must be at least 1".into()));
        }
        self.bounds.validate()
    }
}

/// One trace record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
    pub foc_gap: f64,
}

/// Solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub g_hat: MixingDistribution,
    /// Completed iterations.
    pub n_stop: usize,
    pub trace: Vec<TracePoint>,
    /// `foc_gap(g_hat) <= tol`.
    pub converged: bool,
    /// Objective and FOC gap at `g_hat`.
    pub objective: f64,
    pub foc_gap: f64,
}

/// Euclidean projection onto `R^{d_beta} x box`: coordinatewise clipping.
pub fn project_theta(theta: &Theta, bounds: &ThetaBox) -> Theta {
    let mut t = *theta;
    t.sigma2 = t.sigma2.max(bounds.sigma2_min).min(bounds.sigma2_max);
    t.rho = t.rho.clamp(-bounds.rho_abs_max, bounds.rho_abs_max);
    if let Some(p) = t.phi {
        let m = bounds.phi_abs_max.unwrap_or(1.0);
        t.phi = Some(p.clamp(-m, m));
    }
    t
}

pub(crate) fn record_trace(every: usize, n: usize, last: bool) -> bool {
    if every == 0 {
        n == 0 || last
    } else {
        n.is_multiple_of(every) || last
    }
}
