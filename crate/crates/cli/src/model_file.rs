//! `g_hat.json`: a fitted prior together with the settings that produced it.

use std::path::Path;

use hcpanel::{CovarianceFamily, CovariateMode, MixingDistribution, SolverConfig, Theta, ThetaBox};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::panel_io::{read_text, write_atomic};

pub const MODEL_VERSION: u32 = 1;

/// Solver settings stored with a model; `tol` is `null` when early stopping
/// was disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverRecord {
    pub m: usize,
    pub eta: f64,
    pub n_max: usize,
    pub tol: Option<f64>,
    pub init_b: usize,
    pub trace_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub family: CovarianceFamily,
    pub covariate_mode: CovariateMode,
    #[serde(rename = "box")]
    pub bounds: ThetaBox,
    pub atoms: Vec<Theta>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub solver: SolverRecord,
}

impl ModelFile {
    pub fn new(g: &MixingDistribution, family: CovarianceFamily, mode: CovariateMode, cfg: &SolverConfig) -> Self {
        ModelFile {
            version: MODEL_VERSION,
            family,
            covariate_mode: mode,
            bounds: cfg.bounds,
            atoms: g.atoms().to_vec(),
            weights: g.weights().to_vec(),
            seed: cfg.seed,
            solver: SolverRecord {
                m: cfg.m,
                eta: cfg.eta,
                n_max: cfg.n_max,
                tol: cfg.early_stopping().then_some(cfg.tol),
                init_b: cfg.init_b,
                trace_every: cfg.trace_every,
            },
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            m: self.solver.m,
            eta: self.solver.eta,
            n_max: self.solver.n_max,
            tol: self.solver.tol.unwrap_or(f64::NEG_INFINITY),
            bounds: self.bounds,
            init_b: self.solver.init_b,
            seed: self.seed,
            trace_every: self.solver.trace_every,
        }
    }

    /// Checked prior; atoms must match the declared family.
    pub fn mixing(&self) -> CliResult<MixingDistribution> {
        let g = MixingDistribution::new(self.atoms.clone(), self.weights.clone())?;
        if g.family() != self.family {
            return Err(CliError::usage(format!(
                "model declares family {} but its atoms are {}",
                self.family.name(),
                g.family().name()
            )));
        }
        for t in g.atoms() {
            t.validate(self.family)?;
        }
        Ok(g)
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::numeric(format!("cannot serialize model: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, source: &str) -> CliResult<Self> {
        let m: ModelFile = serde_json::from_str(text)
            .map_err(|e| CliError::usage(format!("{source}: invalid model file: {e}")))?;
        if m.version != MODEL_VERSION {
            return Err(CliError::usage(format!(
                "{source}: model version {} is not supported (expected {MODEL_VERSION})",
                m.version
            )));
        }
        m.bounds.validate()?;
        m.mixing()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::from_json(&read_text(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}
