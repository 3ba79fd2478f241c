//! Simulation designs, the replication runner, and the aggregation of
//! per-replication error metrics and prior-moment estimates.

mod aggregate;
pub mod priors;
mod runner;

pub use aggregate::{aggregate, moment_table, MomentRow};
pub use priors::{
    bundled_hivdx_prior, hivd_prior, hivdr_prior, hivdx_covariate_path, hivdx_prior, intercept_quadrature,
    SimulationPrior,
};
pub use runner::{
    run_oracle_replication, run_replication, run_replication_detailed, simulate_panel, Design, DgpSpec, MetricsRow,
    ReplicationOutcome, SimulatedPanel, Target,
};

use serde::Serialize;

use crate::error::Result;
use crate::parallel;
use crate::solvers::SolverConfig;

/// Settings the simulation study leaves open, recorded with every run.
#[derive(Debug, Clone, Serialize)]
pub struct OpenDefaults {
    pub gamma_convention: &'static str,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    pub init_b: usize,
    pub m: usize,
    pub oracle_quadrature_points: usize,
    pub oracle_tail_mass: f64,
    pub hivdx_prior: &'static str,
}

/// Run description written next to the tables.
#[derive(Debug, Clone, Serialize)]
pub struct McManifest {
    pub spec: DgpSpec,
    pub solver: SolverConfig,
    pub defaults: OpenDefaults,
    pub replications_ok: usize,
    pub replications_failed: usize,
    pub failures: Vec<(u64, String)>,
    pub not_converged: usize,
    pub mle_skipped_units: usize,
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub outcomes: Vec<ReplicationOutcome>,
    pub failures: Vec<(u64, String)>,
    /// Mean metrics over the successful replications.
    pub table: Vec<MetricsRow>,
    pub moments: Vec<MomentRow>,
    pub manifest: McManifest,
}

/// Runs `spec.reps` replications. Failed replications are listed and
/// excluded from the averages.
pub fn run_mc(spec: &DgpSpec, solver: &SolverConfig) -> Result<McReport> {
    spec.validate()?;
    solver.validate()?;
    let results = parallel::map_indexed(spec.reps, |r| run_replication_detailed(spec, solver, r as u64));
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                failures.push((r as u64, e.to_string()));
            }
        }
    }
    let rows: Vec<Vec<MetricsRow>> = outcomes.iter().map(|o| o.rows.clone()).collect();
    let estimated: Vec<_> = outcomes.iter().map(|o| o.estimated_moments.clone()).collect();
    let moments = if estimated.is_empty() {
        Vec::new()
    } else {
        moment_table(&spec.prior().moments(), &estimated)
    };
    let manifest = McManifest {
        spec: spec.clone(),
        solver: *solver,
        defaults: OpenDefaults {
            gamma_convention: "shape-scale",
            gamma_shape: priors::GAMMA_SHAPE,
            gamma_scale: priors::GAMMA_SCALE,
            init_b: solver.init_b,
            m: solver.m,
            oracle_quadrature_points: priors::QUADRATURE_POINTS,
            oracle_tail_mass: priors::TAIL_MASS,
            hivdx_prior: if spec.prior_override.is_some() {
                "override"
            } else {
                "bundled 16-atom moment-matched"
            },
        },
        replications_ok: outcomes.len(),
        replications_failed: failures.len(),
        failures: failures.clone(),
        not_converged: outcomes.iter().filter(|o| !o.converged).count(),
        mle_skipped_units: outcomes.iter().map(|o| o.mle_skipped).sum(),
    };
    Ok(McReport {
        table: aggregate(&rows),
        outcomes,
        failures,
        moments,
        manifest,
    })
}
