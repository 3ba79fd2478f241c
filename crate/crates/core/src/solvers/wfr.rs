//! Wasserstein-Fisher-Rao particle flow for the NPMLE.
//!
//! Each iteration evaluates the `N x m` log-likelihood and score tables once
//! at the current atoms. The FR-step reweights the atoms by
//! `w' = (1 - eta) w + eta * colmeans(pi)`; the W-step moves each atom along
//! `(eta / N) sum_i pi'_ij d/dtheta log l(Y_i | theta_j)`, where `pi'` are the
//! responsibilities under the new weights, and projects onto the box.
//! Since the atoms do not move between the half-steps,
//! `pi'_ij = pi_ij (w'_j / w_j) / sum_k pi_ik (w'_k / w_k)` exactly.

use super::{init_subsample_mle, project_theta, record_trace, FitResult, SolverConfig, TracePoint};
use crate::error::Result;
use crate::mixture::{self, log_weights, normalize_rows, MixingDistribution};
use crate::model::{
    loglik_and_score_fast, AtomCache, CovarianceFamily, PanelDataset, Theta, ThetaBox, ThetaGradient, UnitStats,
};
use crate::parallel;

/// Rows per parallel task; fixed so reductions do not depend on the pool size.
const ROW_CHUNK: usize = 16;

/// Below this weight the likelihood ratio is recomputed from logs.
const TINY_WEIGHT: f64 = 1e-200;

/// Log-likelihoods and scores at every `(unit, atom)` pair, row-major;
/// allocated once per fit and refilled each iteration.
struct Tables {
    ll: Vec<f64>,
    grad: Vec<ThetaGradient>,
}

/// Per-unit sufficient statistics for AR(1) fits.
fn unit_stats(data: &PanelDataset, family: CovarianceFamily) -> Option<Vec<UnitStats>> {
    (family == CovarianceFamily::Ar1).then(|| data.units.iter().map(UnitStats::new).collect())
}

impl Tables {
    fn new(n: usize, m: usize) -> Self {
        Tables {
            ll: vec![0.0; n * m],
            grad: vec![ThetaGradient::default(); n * m],
        }
    }

    fn fill(&mut self, caches: &[AtomCache], data: &PanelDataset, stats: Option<&[UnitStats]>) {
        let m = caches.len();
        let rows = ROW_CHUNK * m;
        parallel::fill_chunks2(&mut self.ll, &mut self.grad, rows, rows, |k, ll, grad| {
            let i0 = k * ROW_CHUNK;
            for (r, (lrow, grow)) in ll.chunks_mut(m).zip(grad.chunks_mut(m)).enumerate() {
                let i = i0 + r;
                for ((l, g), c) in lrow.iter_mut().zip(grow.iter_mut()).zip(caches) {
                    (*l, *g) = match stats {
                        Some(st) => c.ar1_loglik_and_score_stats(&st[i]),
                        None => loglik_and_score_fast(&data.units[i], c),
                    };
                }
            }
        });
    }
}

/// Column means of the posterior matrix, objective and FOC gap at
/// `(atoms, weights)`.
struct Evaluation {
    col_means: Vec<f64>,
    objective: f64,
    gap: f64,
}

/// Turns `ll` into the posterior matrix in place.
fn evaluate(ll: &mut [f64], weights: &[f64]) -> Evaluation {
    let m = weights.len();
    let n = ll.len() / m;
    let tiny: Vec<(usize, Vec<f64>)> = (0..m)
        .filter(|&j| weights[j] <= TINY_WEIGHT)
        .map(|j| (j, (0..n).map(|i| ll[i * m + j]).collect()))
        .collect();
    let log_f = normalize_rows(ll, &log_weights(weights));
    let cm = col_means(ll, m);
    // mean_i l_ij / f_i = colmean_j(pi) / w_j, recomputed from logs for tiny weights
    let mut ratio: Vec<f64> = cm.iter().zip(weights).map(|(c, w)| c / w).collect();
    for (j, col) in &tiny {
        ratio[*j] = col.iter().zip(&log_f).map(|(l, f)| (l - f).exp()).sum::<f64>() / n as f64;
    }
    let gap = ratio.into_iter().fold(f64::NEG_INFINITY, f64::max) - 1.0;
    Evaluation {
        col_means: cm,
        objective: log_f.iter().sum::<f64>() / n as f64,
        gap,
    }
}

fn fr_update(weights: &[f64], col_means: &[f64], eta: f64) -> Vec<f64> {
    let mut w: Vec<f64> = weights
        .iter()
        .zip(col_means)
        .map(|(w, p)| (1.0 - eta) * w + eta * p)
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn col_means(pi: &[f64], m: usize) -> Vec<f64> {
    let n = pi.len() / m;
    let mut out = vec![0.0; m];
    for row in pi.chunks(m) {
        for (o, p) in out.iter_mut().zip(row) {
            *o += p;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

/// `sum_i pi_ij S_ij` per atom, with per-unit rows of `pi` given by `row_pi`.
fn weighted_scores<F>(grad: &[ThetaGradient], m: usize, row_pi: F) -> Vec<ThetaGradient>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let n = grad.len() / m;
    let n_chunks = n.div_ceil(ROW_CHUNK);
    let partial = parallel::map_indexed(n_chunks, |k| {
        let mut acc = vec![ThetaGradient::default(); m];
        let mut p = vec![0.0; m];
        for i in k * ROW_CHUNK..((k + 1) * ROW_CHUNK).min(n) {
            row_pi(i, &mut p);
            for j in 0..m {
                if p[j] != 0.0 {
                    acc[j].add_scaled(&grad[i * m + j], p[j]);
                }
            }
        }
        acc
    });
    let mut total = vec![ThetaGradient::default(); m];
    for acc in &partial {
        for (t, a) in total.iter_mut().zip(acc) {
            t.add_scaled(a, 1.0);
        }
    }
    total
}

fn move_atoms(atoms: &[Theta], sums: &[ThetaGradient], eta: f64, n: usize, bounds: &ThetaBox) -> Vec<Theta> {
    let s = eta / n as f64;
    atoms
        .iter()
        .zip(sums)
        .map(|(t, g)| {
            if *g == ThetaGradient::default() {
                return *t;
            }
            let mut u = *t;
            u.a += s * g.a;
            u.b += s * g.b;
            u.sigma2 += s * g.sigma2;
            u.rho += s * g.rho;
            if let Some(p) = u.phi.as_mut() {
                *p += s * g.phi;
            }
            project_theta(&u, bounds)
        })
        .collect()
}

/// FR-step: `(1 - eta) w_j + (eta / N) sum_i pi_ij`, renormalized.
pub fn fr_step(g: &MixingDistribution, data: &PanelDataset, eta: f64, family: CovarianceFamily) -> Vec<f64> {
    let pi = mixture::posterior_weights(g, data, family);
    fr_update(g.weights(), &pi.column_means(), eta)
}

/// W-step: moves each atom by the average score weighted by the posterior
/// under `new_weights`, then projects onto the box.
pub fn w_step(
    g: &MixingDistribution,
    new_weights: &[f64],
    data: &PanelDataset,
    eta: f64,
    bounds: &ThetaBox,
    family: CovarianceFamily,
) -> Result<Vec<Theta>> {
    let reweighted = MixingDistribution::normalized(g.atoms().to_vec(), new_weights.to_vec())?;
    let pi = mixture::posterior_weights(&reweighted, data, family);
    let stats = unit_stats(data, family);
    let caches = g.atoms().iter().map(|a| AtomCache::new(*a, family)).collect::<Vec<_>>();
    let mut tab = Tables::new(data.len(), g.len());
    tab.fill(&caches, data, stats.as_deref());
    let sums = weighted_scores(&tab.grad, g.len(), |i, out| out.copy_from_slice(pi.row(i)));
    Ok(move_atoms(g.atoms(), &sums, eta, data.len(), bounds))
}

/// Runs the WFR flow from `init`, or from [`init_subsample_mle`] when absent.
///
/// Stops at the first iteration whose FOC gap is `<= tol`, or after `n_max`
/// iterations.
pub fn wfr_fit(
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
    let mut atoms: Vec<Theta> = g0.atoms().iter().map(|a| project_theta(a, &config.bounds)).collect();
    let mut weights = g0.weights().to_vec();
    let m = atoms.len();
    let n_units = data.len();
    let stats = unit_stats(data, family);
    let mut tab = Tables::new(n_units, m);
    let mut trace = Vec::new();
    let mut n = 0;
    loop {
        let caches: Vec<AtomCache> = atoms.iter().map(|a| AtomCache::new(*a, family)).collect();
        tab.fill(&caches, data, stats.as_deref());
        let ev = evaluate(&mut tab.ll, &weights);
        let stop = ev.gap <= config.tol;
        let last = stop || n >= config.n_max;
        if record_trace(config.trace_every, n, last) {
            log::debug!("wfr iteration {n}: objective {:.10} foc_gap {:.3e}", ev.objective, ev.gap);
            trace.push(TracePoint {
                iteration: n,
                objective: ev.objective,
                foc_gap: ev.gap,
            });
        }
        if last {
            return Ok(FitResult {
                g_hat: MixingDistribution::normalized(atoms, weights)?,
                n_stop: n,
                trace,
                converged: stop,
                objective: ev.objective,
                foc_gap: ev.gap,
            });
        }
        let new_w = fr_update(&weights, &ev.col_means, config.eta);
        let scale: Vec<f64> = new_w
            .iter()
            .zip(&weights)
            .map(|(nw, w)| if *w > 0.0 { nw / w } else { 0.0 })
            .collect();
        let pi = &tab.ll;
        let sums = weighted_scores(&tab.grad, m, |i, out| {
            let row = &pi[i * m..(i + 1) * m];
            let mut s = 0.0;
            for j in 0..m {
                out[j] = row[j] * scale[j];
                s += out[j];
            }
            out.iter_mut().for_each(|v| *v /= s);
        });
        atoms = move_atoms(&atoms, &sums, config.eta, n_units, &config.bounds);
        weights = new_w;
        n += 1;
    }
}
