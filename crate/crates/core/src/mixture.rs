//! Discrete mixing distributions and the quantities derived from them:
//! marginal densities, posterior responsibilities, posterior means, the
//! NPMLE objective and its first-order-condition gap.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AtomCache, CovarianceFamily, PanelDataset, PanelUnit, Theta, UnitStats};
use crate::parallel;

/// Weight sums must equal one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Default threshold below which atoms are dropped at export.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// Discrete distribution over `Theta`: `sum_j w_j delta_{theta_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixing", into = "RawMixing")]
pub struct MixingDistribution {
    atoms: Vec<Theta>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMixing {
    atoms: Vec<Theta>,
    weights: Vec<f64>,
}

impl TryFrom<RawMixing> for MixingDistribution {
    type Error = Error;
    fn try_from(r: RawMixing) -> Result<Self> {
        MixingDistribution::new(r.atoms, r.weights)
    }
}

impl From<MixingDistribution> for RawMixing {
    fn from(g: MixingDistribution) -> Self {
        RawMixing {
            atoms: g.atoms,
            weights: g.weights,
        }
    }
}

impl MixingDistribution {
    /// Validates atoms and weights; weights must already sum to one.
    pub fn new(atoms: Vec<Theta>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidDistribution(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let has_phi = atoms[0].phi.is_some();
        let family = if has_phi {
            CovarianceFamily::Arma11
        } else {
            CovarianceFamily::Ar1
        };
        for (j, a) in atoms.iter().enumerate() {
            if a.phi.is_some() != has_phi {
                return Err(Error::InvalidDistribution(format!(
                    "atom {j} mixes AR(1) and ARMA(1,1) parameterizations"
                )));
            }
            a.validate(family)?;
        }
        Ok(MixingDistribution { atoms, weights })
    }

    /// Like [`new`](Self::new) but rescales nonnegative weights to sum to one.
    pub fn normalized(atoms: Vec<Theta>, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        for w in &mut weights {
            *w /= total;
        }
        Self::new(atoms, weights)
    }

    pub fn point_mass(theta: Theta) -> Result<Self> {
        Self::new(vec![theta], vec![1.0])
    }

    pub fn uniform(atoms: Vec<Theta>) -> Result<Self> {
        let m = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / m as f64; m])
    }

    pub fn atoms(&self) -> &[Theta] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Family implied by the atoms' parameterization.
    pub fn family(&self) -> CovarianceFamily {
        if self.atoms[0].phi.is_some() {
            CovarianceFamily::Arma11
        } else {
            CovarianceFamily::Ar1
        }
    }

    /// Copy with atoms of weight `< threshold` removed and weights rescaled.
    /// The largest atom is always kept.
    pub fn pruned(&self, threshold: f64) -> Self {
        let best = self
            .weights
            .iter()
            .enumerate()
            .fold(0, |b, (j, w)| if *w > self.weights[b] { j } else { b });
        let (atoms, weights): (Vec<_>, Vec<_>) = self
            .atoms
            .iter()
            .zip(&self.weights)
            .enumerate()
            .filter(|(j, (_, w))| **w >= threshold || *j == best)
            .map(|(_, (a, w))| (*a, *w))
            .unzip();
        Self::normalized(atoms, weights).expect("pruning keeps a valid distribution")
    }

    /// Caches for the O(T) likelihood kernel, one per atom.
    pub(crate) fn caches(&self) -> Vec<AtomCache> {
        let family = self.family();
        self.atoms.iter().map(|a| AtomCache::new(*a, family)).collect()
    }
}

/// Scalar functional `tau(theta)` whose posterior mean is reported.
#[derive(Clone)]
pub enum TargetFunctional {
    A,
    B,
    Sigma2,
    Rho,
    /// `rho * a`
    RhoA,
    /// `rho * b`
    RhoB,
    Custom(Arc<dyn Fn(&Theta) -> f64 + Send + Sync>),
}

impl fmt::Debug for TargetFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetFunctional::A => write!(f, "A"),
            TargetFunctional::B => write!(f, "B"),
            TargetFunctional::Sigma2 => write!(f, "Sigma2"),
            TargetFunctional::Rho => write!(f, "Rho"),
            TargetFunctional::RhoA => write!(f, "RhoA"),
            TargetFunctional::RhoB => write!(f, "RhoB"),
            TargetFunctional::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl TargetFunctional {
    #[inline]
    pub fn eval(&self, t: &Theta) -> f64 {
        match self {
            TargetFunctional::A => t.a,
            TargetFunctional::B => t.b,
            TargetFunctional::Sigma2 => t.sigma2,
            TargetFunctional::Rho => t.rho,
            TargetFunctional::RhoA => t.rho * t.a,
            TargetFunctional::RhoB => t.rho * t.b,
            TargetFunctional::Custom(f) => f(t),
        }
    }
}

/// Row-stochastic `N x m` matrix of posterior responsibilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl PosteriorMatrix {
    pub(crate) fn from_raw(n: usize, m: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * m);
        PosteriorMatrix { n, m, values }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `(1/N) sum_i pi_ij` for each `j`, summed in row order.
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for i in 0..self.n {
            for (o, p) in out.iter_mut().zip(self.row(i)) {
                *o += p;
            }
        }
        let nf = self.n as f64;
        out.iter_mut().for_each(|o| *o /= nf);
        out
    }
}

/// `log sum_k exp(x_k)` with max-shift; `-inf` for an empty or all-`-inf` input.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// `N x m` table of `log l(Y_i | theta_j)`, row-major. AR(1) tables go
/// through per-unit sufficient statistics.
pub fn loglik_table(g: &MixingDistribution, data: &PanelDataset) -> Vec<f64> {
    let caches = g.caches();
    let m = caches.len();
    let stats: Option<Vec<UnitStats>> =
        (g.family() == CovarianceFamily::Ar1).then(|| data.units.iter().map(UnitStats::new).collect());
    let mut out = vec![0.0; data.len() * m];
    let rows_per_chunk = 16;
    parallel::fill_chunks(&mut out, rows_per_chunk * m, |start, chunk| {
        let i0 = start / m;
        for (r, row) in chunk.chunks_mut(m).enumerate() {
            let i = i0 + r;
            match &stats {
                Some(st) => row.iter_mut().zip(&caches).for_each(|(v, c)| *v = c.ar1_loglik_stats(&st[i])),
                None => row.iter_mut().zip(&caches).for_each(|(v, c)| *v = c.loglik(&data.units[i])),
            }
        }
    });
    out
}

/// Per-row normalization of `L_ij + log w_j`: writes `pi_ij` over `table`
/// in place and returns `log f_G(Y_i)` per row.
pub(crate) fn normalize_rows(table: &mut [f64], log_w: &[f64]) -> Vec<f64> {
    let m = log_w.len();
    table
        .chunks_mut(m)
        .map(|row| {
            let mut mx = f64::NEG_INFINITY;
            for (v, lw) in row.iter_mut().zip(log_w) {
                *v += lw;
                mx = mx.max(*v);
            }
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
            mx + s.ln()
        })
        .collect()
}

pub(crate) fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|w| w.ln()).collect()
}

fn family_check(g: &MixingDistribution, family: CovarianceFamily) {
    debug_assert_eq!(g.family(), family, "distribution and family disagree");
}

/// `log f_G(Y, X) = log sum_j w_j l(Y | X, theta_j)`.
pub fn log_marginal_density(g: &MixingDistribution, unit: &PanelUnit, family: CovarianceFamily) -> f64 {
    family_check(g, family);
    let terms: Vec<f64> = g
        .caches()
        .iter()
        .zip(g.weights())
        .map(|(c, w)| c.loglik(unit) + w.ln())
        .collect();
    log_sum_exp(&terms)
}

/// Posterior probabilities of the atoms for one unit.
pub fn posterior_row(g: &MixingDistribution, unit: &PanelUnit, family: CovarianceFamily) -> Vec<f64> {
    family_check(g, family);
    let mut row: Vec<f64> = g.caches().iter().map(|c| c.loglik(unit)).collect();
    normalize_rows(&mut row, &log_weights(g.weights()));
    row
}

/// Posterior responsibilities `pi_ij` for every unit.
pub fn posterior_weights(g: &MixingDistribution, data: &PanelDataset, family: CovarianceFamily) -> PosteriorMatrix {
    family_check(g, family);
    let mut table = loglik_table(g, data);
    normalize_rows(&mut table, &log_weights(g.weights()));
    PosteriorMatrix::from_raw(data.len(), g.len(), table)
}

/// `E_G[tau(theta) | Y, X] = sum_j pi_j tau(theta_j)`.
pub fn posterior_mean(
    g: &MixingDistribution,
    unit: &PanelUnit,
    tau: &TargetFunctional,
    family: CovarianceFamily,
) -> f64 {
    let row = posterior_row(g, unit, family);
    row.iter().zip(g.atoms()).map(|(p, a)| p * tau.eval(a)).sum()
}

/// Average log marginal likelihood `F_N(G)`.
pub fn objective(g: &MixingDistribution, data: &PanelDataset, family: CovarianceFamily) -> f64 {
    family_check(g, family);
    let mut table = loglik_table(g, data);
    let lf = normalize_rows(&mut table, &log_weights(g.weights()));
    lf.iter().sum::<f64>() / data.len() as f64
}

/// Column means of `l_ij / f_G(Y_i)` from a log-likelihood table and the
/// per-row log marginals.
pub(crate) fn mean_likelihood_ratios(loglik: &[f64], log_f: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (row, lf) in loglik.chunks(m).zip(log_f) {
        for (o, l) in out.iter_mut().zip(row) {
            *o += (l - lf).exp();
        }
    }
    let n = log_f.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// `max_j (1/N) sum_i l(Y_i | theta_j) / f_G(Y_i) - 1`; zero at the NPMLE
/// on its support and nonpositive everywhere.
pub fn foc_gap(g: &MixingDistribution, data: &PanelDataset, family: CovarianceFamily) -> f64 {
    family_check(g, family);
    let table = loglik_table(g, data);
    let mut scratch = table.clone();
    let lf = normalize_rows(&mut scratch, &log_weights(g.weights()));
    mean_likelihood_ratios(&table, &lf, g.len())
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
        - 1.0
}

/// Mean and covariance of `theta` under `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMoments {
    /// Component labels, `a, b, sigma2, rho[, phi]`.
    pub names: Vec<&'static str>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn components(t: &Theta, with_phi: bool) -> Vec<f64> {
    let mut v = vec![t.a, t.b, t.sigma2, t.rho];
    if with_phi {
        v.push(t.phi_or_zero());
    }
    v
}

/// Exact weighted moments of the atoms.
pub fn prior_moments(g: &MixingDistribution) -> PriorMoments {
    let with_phi = g.family() == CovarianceFamily::Arma11;
    let mut names = vec!["a", "b", "sigma2", "rho"];
    if with_phi {
        names.push("phi");
    }
    let d = names.len();
    let mut mean = DVector::zeros(d);
    for (a, w) in g.atoms().iter().zip(g.weights()) {
        mean += DVector::from_vec(components(a, with_phi)) * *w;
    }
    let mut cov = DMatrix::zeros(d, d);
    for (a, w) in g.atoms().iter().zip(g.weights()) {
        let c = DVector::from_vec(components(a, with_phi)) - &mean;
        cov += &c * c.transpose() * *w;
    }
    PriorMoments { names, mean, cov }
}
