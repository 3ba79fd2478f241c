//! Posterior-mean decision rules, one-step-ahead prediction and shrinkage
//! summaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{posterior_weights, MixingDistribution, TargetFunctional};
use crate::model::{CovarianceFamily, PanelDataset, PanelUnit, ThetaBox};
use crate::parallel;
use crate::solvers::individual_mle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "EB")]
    Eb,
    #[serde(rename = "MLE")]
    Mle,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Eb => "EB",
            Method::Mle => "MLE",
            Method::Oracle => "Oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Point estimates of `(a, b, sigma2, rho, rho*a, rho*b)` for one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub a: f64,
    pub b: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub rho_a: f64,
    pub rho_b: f64,
}

/// Estimates for one unit; `estimate` is `None` when the unit was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEstimates {
    pub unit_id: String,
    pub method: Method,
    pub estimate: Option<PointEstimate>,
    pub skip_reason: Option<String>,
}

/// One-step-ahead prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub unit_id: String,
    pub method: Method,
    pub y_hat: f64,
    pub y_actual: Option<f64>,
}

const FUNCTIONALS: [TargetFunctional; 6] = [
    TargetFunctional::A,
    TargetFunctional::B,
    TargetFunctional::Sigma2,
    TargetFunctional::Rho,
    TargetFunctional::RhoA,
    TargetFunctional::RhoB,
];

fn posterior_estimates(
    g: &MixingDistribution,
    data: &PanelDataset,
    family: CovarianceFamily,
    method: Method,
) -> Vec<UnitEstimates> {
    let pi = posterior_weights(g, data, family);
    let values: Vec<Vec<f64>> = g
        .atoms()
        .iter()
        .map(|t| FUNCTIONALS.iter().map(|f| f.eval(t)).collect())
        .collect();
    parallel::map_indexed(data.len(), |i| {
        let mut acc = [0.0; 6];
        for (p, v) in pi.row(i).iter().zip(&values) {
            for k in 0..6 {
                acc[k] += p * v[k];
            }
        }
        UnitEstimates {
            unit_id: data.units[i].id.clone(),
            method,
            estimate: Some(PointEstimate {
                a: acc[0],
                b: acc[1],
                sigma2: acc[2],
                rho: acc[3],
                rho_a: acc[4],
                rho_b: acc[5],
            }),
            skip_reason: None,
        }
    })
}

/// Posterior means under the fitted prior, including `E[rho a]` and
/// `E[rho b]` as posterior means of the products.
pub fn eb_estimates(g: &MixingDistribution, data: &PanelDataset, family: CovarianceFamily) -> Vec<UnitEstimates> {
    posterior_estimates(g, data, family, Method::Eb)
}

/// Posterior means under the true prior.
pub fn oracle_estimates(
    g_true: &MixingDistribution,
    data: &PanelDataset,
    family: CovarianceFamily,
) -> Vec<UnitEstimates> {
    posterior_estimates(g_true, data, family, Method::Oracle)
}

/// Per-unit MLE with plug-in products; units without an MLE are skipped.
pub fn mle_estimates(data: &PanelDataset, bounds: &ThetaBox, family: CovarianceFamily) -> Vec<UnitEstimates> {
    parallel::map_indexed(data.len(), |i| {
        let unit = &data.units[i];
        match individual_mle(unit, bounds, family) {
            Ok(t) => UnitEstimates {
                unit_id: unit.id.clone(),
                method: Method::Mle,
                estimate: Some(PointEstimate {
                    a: t.a,
                    b: t.b,
                    sigma2: t.sigma2,
                    rho: t.rho,
                    rho_a: t.rho * t.a,
                    rho_b: t.rho * t.b,
                }),
                skip_reason: None,
            },
            Err(e) => UnitEstimates {
                unit_id: unit.id.clone(),
                method: Method::Mle,
                estimate: None,
                skip_reason: Some(e.to_string()),
            },
        }
    })
}

/// `a + b x2_next + rho y_T - (rho a) - (rho b) x2_T`; the `b` terms vanish
/// for units without a covariate.
pub fn predict_one_step(est: &UnitEstimates, unit: &PanelUnit) -> Result<PredictionRecord> {
    let e = est.estimate.as_ref().ok_or_else(|| {
        Error::InvalidData(format!("unit {} has no estimate to predict from", est.unit_id))
    })?;
    let t = unit
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidData(format!("unit {} is empty", unit.id)))?;
    let slope = match &unit.x2 {
        Some(x) => {
            let next = unit.x2_next.ok_or_else(|| {
                Error::Config(format!("unit {} has no x2_next for prediction", unit.id))
            })?;
            e.b * next - e.rho_b * x[t]
        }
        None => 0.0,
    };
    Ok(PredictionRecord {
        unit_id: unit.id.clone(),
        method: est.method,
        y_hat: e.a + slope + e.rho * unit.y[t] - e.rho_a,
        y_actual: None,
    })
}

/// Cross-sectional variance ratios `Var_EB / Var_MLE`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageReport {
    /// `(component, ratio)`; the ratio is `None` when the MLE variance is zero.
    pub ratios: Vec<(&'static str, Option<f64>)>,
    /// Units with both estimates.
    pub n_units: usize,
    /// Units skipped by either method.
    pub n_skipped: usize,
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Compares the spread of EB and MLE estimates over the units present in both.
pub fn shrinkage_report(eb: &[UnitEstimates], mle: &[UnitEstimates]) -> Result<ShrinkageReport> {
    if eb.len() != mle.len() || eb.iter().zip(mle).any(|(a, b)| a.unit_id != b.unit_id) {
        return Err(Error::InvalidData("EB and MLE estimates cover different units".into()));
    }
    let pairs: Vec<(&PointEstimate, &PointEstimate)> = eb
        .iter()
        .zip(mle)
        .filter_map(|(a, b)| Some((a.estimate.as_ref()?, b.estimate.as_ref()?)))
        .collect();
    let n_skipped = eb.len() - pairs.len();
    type Getter = (&'static str, fn(&PointEstimate) -> f64);
    let get: [Getter; 4] = [
        ("a", |e| e.a),
        ("b", |e| e.b),
        ("sigma2", |e| e.sigma2),
        ("rho", |e| e.rho),
    ];
    let ratios = get
        .iter()
        .map(|(name, f)| {
            if pairs.is_empty() {
                return (*name, None);
            }
            let ve = population_variance(&pairs.iter().map(|(e, _)| f(e)).collect::<Vec<_>>());
            let vm = population_variance(&pairs.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
            (*name, if vm > 0.0 { Some(ve / vm) } else { None })
        })
        .collect();
    Ok(ShrinkageReport {
        ratios,
        n_units: pairs.len(),
        n_skipped,
    })
}
