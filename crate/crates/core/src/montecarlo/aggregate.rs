use serde::{Deserialize, Serialize};

use super::runner::MetricsRow;
use crate::mixture::PriorMoments;

/// Mean of every metric per `(target, method)`, in first-appearance order.
/// `r2` is averaged over the replications that report it.
pub fn aggregate(reps: &[Vec<MetricsRow>]) -> Vec<MetricsRow> {
    let mut out: Vec<(MetricsRow, usize, usize)> = Vec::new();
    for row in reps.iter().flatten() {
        let slot = match out.iter().position(|(r, _, _)| r.target == row.target && r.method == row.method) {
            Some(k) => k,
            None => {
                out.push((
                    MetricsRow {
                        bias: 0.0,
                        sd: 0.0,
                        rmse: 0.0,
                        r2: None,
                        ..*row
                    },
                    0,
                    0,
                ));
                out.len() - 1
            }
        };
        let (acc, n, n_r2) = &mut out[slot];
        acc.bias += row.bias;
        acc.sd += row.sd;
        acc.rmse += row.rmse;
        *n += 1;
        if let Some(r) = row.r2 {
            acc.r2 = Some(acc.r2.unwrap_or(0.0) + r);
            *n_r2 += 1;
        }
    }
    out.into_iter()
        .map(|(mut r, n, n_r2)| {
            let n = n as f64;
            r.bias /= n;
            r.sd /= n;
            r.rmse /= n;
            r.r2 = r.r2.map(|v| v / n_r2 as f64);
            r
        })
        .collect()
}

/// One line of the prior-moment recovery table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub moment: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

/// Means, variances and covariances of the fitted priors against the truth.
/// `sd` is the population SD over replications, so `rmse^2 = bias^2 + sd^2`.
pub fn moment_table(truth: &PriorMoments, estimates: &[PriorMoments]) -> Vec<MomentRow> {
    let k = truth.names.len();
    type Cell = (String, Box<dyn Fn(&PriorMoments) -> f64>);
    let mut cells: Vec<Cell> = Vec::new();
    for i in 0..k {
        cells.push((format!("E[{}]", truth.names[i]), Box::new(move |m| m.mean[i])));
    }
    for i in 0..k {
        cells.push((format!("Var({})", truth.names[i]), Box::new(move |m| m.cov[(i, i)])));
    }
    for i in 0..k {
        for j in i + 1..k {
            cells.push((
                format!("Cov({},{})", truth.names[i], truth.names[j]),
                Box::new(move |m| m.cov[(i, j)]),
            ));
        }
    }
    let r = estimates.len() as f64;
    cells
        .into_iter()
        .map(|(moment, f)| {
            let t = f(truth);
            let errs: Vec<f64> = estimates.iter().map(|m| f(m) - t).collect();
            let bias = errs.iter().sum::<f64>() / r;
            let mse = errs.iter().map(|e| e * e).sum::<f64>() / r;
            let sd = (errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / r).sqrt();
            MomentRow {
                moment,
                truth: t,
                bias,
                sd,
                rmse: mse.sqrt(),
            }
        })
        .collect()
}
