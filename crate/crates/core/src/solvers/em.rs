use super::{init_subsample_mle, mle, project_theta, record_trace, FitResult, SolverConfig, TracePoint};
use crate::error::Result;
use crate::mixture::{self, log_weights, mean_likelihood_ratios, normalize_rows, MixingDistribution};
use crate::model::{CovarianceFamily, PanelDataset, PanelUnit, Theta};
use crate::parallel;

/// EM weight update: column means of the posterior matrix.
pub fn em_weight_update(g: &MixingDistribution, data: &PanelDataset, family: CovarianceFamily) -> Vec<f64> {
    mixture::posterior_weights(g, data, family).column_means()
}

/// EM for the NPMLE with `m` atoms.
///
/// The atom update maximizes `sum_i pi_ij log l(Y_i | theta)` locally from
/// the current atom and is kept only when it raises that sum, so the
/// objective never decreases.
pub fn em_fit(
    data: &PanelDataset,
    config: &SolverConfig,
    family: CovarianceFamily,
    init: Option<MixingDistribution>,
) -> Result<FitResult> {
    config.validate()?;
    let g0 = match init {
        Some(g) => g,
        None => init_subsample_mle(data, config, family)?,
    };
    let mut g = MixingDistribution::normalized(
        g0.atoms().iter().map(|a| project_theta(a, &config.bounds)).collect(),
        g0.weights().to_vec(),
    )?;
    let units: Vec<&PanelUnit> = data.units.iter().collect();
    let m = g.len();
    let mut trace = Vec::new();
    let mut n = 0;
    loop {
        let table = mixture::loglik_table(&g, data);
        let mut pi = table.clone();
        let log_f = normalize_rows(&mut pi, &log_weights(g.weights()));
        let objective = log_f.iter().sum::<f64>() / data.len() as f64;
        let gap = mean_likelihood_ratios(&table, &log_f, m)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
            - 1.0;
        let stop = gap <= config.tol;
        let last = stop || n >= config.n_max;
        if record_trace(config.trace_every, n, last) {
            log::debug!("em iteration {n}: objective {objective:.10} foc_gap {gap:.3e}");
            trace.push(TracePoint {
                iteration: n,
                objective,
                foc_gap: gap,
            });
        }
        if last {
            return Ok(FitResult {
                g_hat: g,
                n_stop: n,
                trace,
                converged: stop,
                objective,
                foc_gap: gap,
            });
        }
        let pm = mixture::PosteriorMatrix::from_raw(data.len(), m, pi);
        let weights = pm.column_means();
        let atoms: Vec<Theta> = parallel::map_indexed(m, |j| {
            let col: Vec<f64> = (0..data.len()).map(|i| pm.get(i, j)).collect();
            let current = g.atoms()[j];
            if col.iter().all(|p| *p == 0.0) {
                return current;
            }
            match mle::weighted_mle_from(&units, &col, &config.bounds, family, &current) {
                Ok(Some((t, _))) => t,
                Ok(None) => current,
                Err(e) => {
                    log::warn!("em: atom {j} left unchanged ({e})");
                    current
                }
            }
        });
        g = MixingDistribution::normalized(atoms, weights)?;
        n += 1;
    }
}
