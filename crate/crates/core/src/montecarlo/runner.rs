use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::priors::{hivd_prior, hivdr_prior, hivdx_covariate_path, hivdx_prior, SimulationPrior};
use crate::eb::{eb_estimates, mle_estimates, oracle_estimates, predict_one_step, Method, UnitEstimates};
use crate::error::{Error, Result};
use crate::mixture::{prior_moments, MixingDistribution, PriorMoments};
use crate::model::{simulate_unit_with_next, CovarianceFamily, CovariateMode, PanelDataset, Theta};
use crate::solvers::{wfr_fit, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Hivd,
    Hivdr,
    Hivdx,
}

impl Design {
    pub fn name(self) -> &'static str {
        match self {
            Design::Hivd => "hivd",
            Design::Hivdr => "hivdr",
            Design::Hivdx => "hivdx",
        }
    }

    pub fn covariate_mode(self) -> CovariateMode {
        match self {
            Design::Hivdx => CovariateMode::InterceptPlusX2,
            _ => CovariateMode::InterceptOnly,
        }
    }

    /// Default `(N, T)`.
    pub fn default_size(self) -> (usize, usize) {
        match self {
            Design::Hivdx => (1000, 13),
            _ => (1000, 5),
        }
    }

    /// Default solver settings for the design.
    pub fn default_solver(self) -> SolverConfig {
        match self {
            Design::Hivdx => SolverConfig::hivdx(),
            _ => SolverConfig::hivd(),
        }
    }
}

impl std::str::FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hivd" => Ok(Design::Hivd),
            "hivdr" => Ok(Design::Hivdr),
            "hivdx" => Ok(Design::Hivdx),
            other => Err(Error::Config(format!("unknown design {other:?} (expected hivd, hivdr or hivdx)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub design: Design,
    pub n: usize,
    pub t: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_override: Option<MixingDistribution>,
}

impl DgpSpec {
    pub fn new(design: Design, reps: usize, seed: u64) -> Self {
        let (n, t) = design.default_size();
        DgpSpec {
            design,
            n,
            t,
            reps,
            seed,
            prior_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if self.t < 2 {
            return Err(Error::Config(format!("T must be at least 2, got {}", self.t)));
        }
        if self.reps < 1 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.prior_override.is_some() && self.design != Design::Hivdx {
            return Err(Error::Config("prior_override is only used by the hivdx design".into()));
        }
        if let Some(g) = &self.prior_override {
            if g.family() != CovarianceFamily::Ar1 {
                return Err(Error::Config("prior_override must be an ar1 prior".into()));
            }
        }
        Ok(())
    }

    /// True prior of the design.
    pub fn prior(&self) -> SimulationPrior {
        match self.design {
            Design::Hivd => hivd_prior(),
            Design::Hivdr => hivdr_prior(),
            Design::Hivdx => hivdx_prior(self.prior_override.clone()),
        }
    }

    /// Generator for replication `rep_index`: the master seed with stream `rep_index`.
    pub fn rng(&self, rep_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep_index);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "sigma2")]
    Sigma2,
    #[serde(rename = "rho")]
    Rho,
    #[serde(rename = "y_next")]
    YNext,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::A => "a",
            Target::B => "b",
            Target::Sigma2 => "sigma2",
            Target::Rho => "rho",
            Target::YNext => "y_next",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub target: Target,
    pub method: Method,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

impl MetricsRow {
    /// Bias, population SD and RMSE of the errors; `r2` uses `var_y` when given.
    pub fn from_errors(target: Target, method: Method, errors: &[f64], var_y: Option<f64>) -> Self {
        let n = errors.len() as f64;
        let bias = errors.iter().sum::<f64>() / n;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let sd = (errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / n).sqrt();
        MetricsRow {
            target,
            method,
            bias,
            sd,
            rmse: mse.sqrt(),
            r2: var_y.map(|v| 1.0 - mse / v),
        }
    }
}

/// Simulated panel with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub data: PanelDataset,
    pub truth: Vec<Theta>,
    /// Realized `Y_{i,T+1}`.
    pub y_next: Vec<f64>,
}

/// Draws `N` units of length `T` plus one extra period. Each unit's
/// `x2_next` is set for covariate designs.
pub fn simulate_panel<R: Rng + ?Sized>(spec: &DgpSpec, prior: &SimulationPrior, rng: &mut R) -> Result<SimulatedPanel> {
    spec.validate()?;
    let width = spec.n.to_string().len();
    let mut units = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    let mut y_next = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let theta = prior.sample(rng);
        let path = match spec.design {
            Design::Hivdx => Some(hivdx_covariate_path(rng, spec.t + 1)),
            _ => None,
        };
        let id = format!("{:0width$}", i + 1);
        let (unit, next) = simulate_unit_with_next(id, &theta, path.as_deref(), spec.t, rng)?;
        units.push(unit);
        truth.push(theta);
        y_next.push(next);
    }
    Ok(SimulatedPanel {
        data: PanelDataset::new(units, spec.design.covariate_mode())?,
        truth,
        y_next,
    })
}

/// Everything computed in one replication.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub rep_index: u64,
    pub rows: Vec<MetricsRow>,
    /// Moments of the fitted prior.
    pub estimated_moments: PriorMoments,
    pub n_stop: usize,
    pub converged: bool,
    pub foc_gap: f64,
    /// Units without an MLE.
    pub mle_skipped: usize,
}

fn targets(design: Design) -> &'static [Target] {
    match design {
        Design::Hivdx => &[Target::A, Target::B, Target::Sigma2, Target::Rho],
        _ => &[Target::A, Target::Sigma2, Target::Rho],
    }
}

fn metric_rows(
    design: Design,
    panel: &SimulatedPanel,
    method: Method,
    estimates: &[UnitEstimates],
) -> Result<Vec<MetricsRow>> {
    let kept: Vec<usize> = (0..estimates.len()).filter(|&i| estimates[i].estimate.is_some()).collect();
    if kept.is_empty() {
        return Err(Error::InvalidData(format!("no {method} estimates in replication")));
    }
    let mut rows = Vec::new();
    for &target in targets(design) {
        let errors: Vec<f64> = kept
            .iter()
            .map(|&i| {
                let e = estimates[i].estimate.unwrap();
                let t = &panel.truth[i];
                match target {
                    Target::A => e.a - t.a,
                    Target::B => e.b - t.b,
                    Target::Sigma2 => e.sigma2 - t.sigma2,
                    _ => e.rho - t.rho,
                }
            })
            .collect();
        rows.push(MetricsRow::from_errors(target, method, &errors, None));
    }
    let mut errors = Vec::with_capacity(kept.len());
    for &i in &kept {
        let p = predict_one_step(&estimates[i], &panel.data.units[i])?;
        errors.push(p.y_hat - panel.y_next[i]);
    }
    let ys: Vec<f64> = kept.iter().map(|&i| panel.y_next[i]).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var_y = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
    rows.push(MetricsRow::from_errors(Target::YNext, method, &errors, Some(var_y)));
    Ok(rows)
}

/// Simulates, fits, and scores one replication.
///
/// The solver's initialization seed is drawn from the replication stream
/// after simulation, so the result depends only on `(spec.seed, rep_index)`
/// and the solver settings.
pub fn run_replication_detailed(spec: &DgpSpec, solver: &SolverConfig, rep_index: u64) -> Result<ReplicationOutcome> {
    spec.validate()?;
    solver.validate()?;
    let prior = spec.prior();
    let mut rng = spec.rng(rep_index);
    let panel = simulate_panel(spec, &prior, &mut rng)?;
    let mut cfg = *solver;
    cfg.seed = rng.random();
    let family = CovarianceFamily::Ar1;
    let fit = wfr_fit(&panel.data, &cfg, family, None)?;
    let oracle = oracle_estimates(&prior.oracle(), &panel.data, family);
    let eb = eb_estimates(&fit.g_hat, &panel.data, family);
    let mle = mle_estimates(&panel.data, &cfg.bounds, family);
    let mle_skipped = mle.iter().filter(|e| e.estimate.is_none()).count();
    let mut rows = Vec::new();
    for (method, est) in [(Method::Oracle, &oracle), (Method::Mle, &mle), (Method::Eb, &eb)] {
        rows.extend(metric_rows(spec.design, &panel, method, est)?);
    }
    Ok(ReplicationOutcome {
        rep_index,
        rows,
        estimated_moments: prior_moments(&fit.g_hat),
        n_stop: fit.n_stop,
        converged: fit.converged,
        foc_gap: fit.foc_gap,
        mle_skipped,
    })
}

/// Metric rows of one replication.
pub fn run_replication(spec: &DgpSpec, solver: &SolverConfig, rep_index: u64) -> Result<Vec<MetricsRow>> {
    run_replication_detailed(spec, solver, rep_index).map(|o| o.rows)
}

/// Oracle-only metrics for one replication (no fitting).
pub fn run_oracle_replication(spec: &DgpSpec, prior: &SimulationPrior, rep_index: u64) -> Result<Vec<MetricsRow>> {
    let mut rng = spec.rng(rep_index);
    let panel = simulate_panel(spec, prior, &mut rng)?;
    let oracle = oracle_estimates(&prior.oracle(), &panel.data, CovarianceFamily::Ar1);
    metric_rows(spec.design, &panel, Method::Oracle, &oracle)
}
