use std::f64::consts::SQRT_2;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::mixture::{prior_moments, MixingDistribution, PriorMoments};
use crate::model::Theta;

/// Intercept law `Gamma(shape 1/2, scale sqrt 2)`, i.e. `a = Z^2 / sqrt 2`.
pub const GAMMA_SHAPE: f64 = 0.5;
pub const GAMMA_SCALE: f64 = SQRT_2;
/// Gauss-Legendre nodes per `(sigma2, rho)` cell in the oracle representation.
pub const QUADRATURE_POINTS: usize = 256;
/// Upper-tail mass of the intercept law dropped by the quadrature.
pub const TAIL_MASS: f64 = 1e-8;

/// `(sigma2, rho, probability)` table of the short-panel design, with
/// `Corr(sigma2, rho) = -1/3`.
pub const HIVD_CELLS: [(f64, f64, f64); 4] = [
    (0.1, 0.8, 1.0 / 3.0),
    (0.3, 0.2, 1.0 / 3.0),
    (0.1, 0.2, 1.0 / 6.0),
    (0.3, 0.8, 1.0 / 6.0),
];

/// Restricted design: `rho = 0.5`, two equally likely variances.
pub const HIVDR_CELLS: [(f64, f64, f64); 2] = [(0.1, 0.5, 0.5), (0.3, 0.5, 0.5)];

/// Initial covariate values and probabilities of the covariate design.
pub const X2_INITIAL: [(f64, f64); 5] = [(0.3, 0.25), (0.4, 0.05), (0.5, 0.1), (0.6, 0.1), (0.7, 0.5)];
pub const X2_STEP: f64 = 0.1;

/// Target moments of the bundled covariate-design prior, order `(a, b, sigma2, rho)`.
pub const HIVDX_MEAN: [f64; 4] = [0.0134, -0.0166, 0.0787, 0.4219];
pub const HIVDX_COV: [[f64; 4]; 4] = [
    [0.2052, -0.1003, -0.0105, -0.0039],
    [-0.1003, 0.1007, -0.0104, 0.0074],
    [-0.0105, -0.0104, 0.0229, -0.0013],
    [-0.0039, 0.0074, -0.0013, 0.1052],
];
/// Lower support point of `sigma2` in the bundled prior.
pub const HIVDX_SIGMA2_LOW: f64 = 0.02;

/// Data-generating prior of a simulation design.
#[derive(Debug, Clone, PartialEq)]
pub enum SimulationPrior {
    /// `a ~ Gamma(shape, scale)` independent of a discrete `(sigma2, rho)`
    /// given as `(sigma2, rho, probability)` cells; `b = 0`.
    GammaIntercept {
        shape: f64,
        scale: f64,
        cells: Vec<(f64, f64, f64)>,
    },
    Discrete(MixingDistribution),
}

impl SimulationPrior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        match self {
            SimulationPrior::GammaIntercept { shape, scale, cells } => {
                let u: f64 = rng.random();
                let (s2, rho) = pick(cells.iter().map(|(s, r, p)| ((*s, *r), *p)), u);
                let a = Gamma::new(*shape, *scale).expect("valid gamma law").sample(rng);
                Theta::ar1(a, 0.0, s2, rho)
            }
            SimulationPrior::Discrete(g) => {
                let u: f64 = rng.random();
                pick(g.atoms().iter().copied().zip(g.weights().iter().copied()), u)
            }
        }
    }

    /// Discrete representation used for oracle posteriors: Gauss-Legendre
    /// quadrature of the intercept law, or the prior itself.
    pub fn oracle(&self) -> MixingDistribution {
        match self {
            SimulationPrior::GammaIntercept { shape, scale, cells } => {
                let nodes = intercept_quadrature(*shape, *scale, QUADRATURE_POINTS);
                let mut atoms = Vec::with_capacity(cells.len() * nodes.len());
                let mut weights = Vec::with_capacity(atoms.capacity());
                for (s2, rho, p) in cells {
                    for (a, w) in &nodes {
                        atoms.push(Theta::ar1(*a, 0.0, *s2, *rho));
                        weights.push(p * w);
                    }
                }
                MixingDistribution::normalized(atoms, weights).expect("valid quadrature prior")
            }
            SimulationPrior::Discrete(g) => g.clone(),
        }
    }

    /// Exact mean and covariance of `(a, b, sigma2, rho)`.
    pub fn moments(&self) -> PriorMoments {
        match self {
            SimulationPrior::GammaIntercept { shape, scale, cells } => {
                let atoms: Vec<Theta> = cells.iter().map(|(s, r, _)| Theta::ar1(0.0, 0.0, *s, *r)).collect();
                let g = MixingDistribution::normalized(atoms, cells.iter().map(|c| c.2).collect())
                    .expect("valid cell table");
                let mut m = prior_moments(&g);
                m.mean[0] = shape * scale;
                m.cov[(0, 0)] = shape * scale * scale;
                m
            }
            SimulationPrior::Discrete(g) => prior_moments(g),
        }
    }
}

fn pick<T: Copy>(items: impl Iterator<Item = (T, f64)>, u: f64) -> T {
    let mut acc = 0.0;
    let mut last = None;
    for (v, p) in items {
        acc += p;
        last = Some(v);
        if u < acc {
            return v;
        }
    }
    last.expect("nonempty table")
}

/// `(a, weight)` pairs approximating `Gamma(shape, scale)` on `[0, q]`,
/// `q` the `1 - TAIL_MASS` quantile, weights normalized.
///
/// The rule is applied in `s = sqrt(a)`, where the density is proportional
/// to `s^(2 shape - 1) exp(-s^2 / scale)`; for `shape = 1/2` this removes the
/// `a^(-1/2)` endpoint singularity entirely.
pub fn intercept_quadrature(shape: f64, scale: f64, points: usize) -> Vec<(f64, f64)> {
    let law = GammaDist::new(shape, 1.0 / scale).expect("valid gamma law");
    let s_max = law.inverse_cdf(1.0 - TAIL_MASS).sqrt();
    let rule = GaussLegendre::new(NonZeroUsize::new(points).expect("points >= 1"));
    let half = 0.5 * s_max;
    let raw: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|(x, w)| {
            let s = half * (x + 1.0);
            (s * s, w * half * s.powf(2.0 * shape - 1.0) * (-s * s / scale).exp())
        })
        .collect();
    let total: f64 = raw.iter().map(|p| p.1).sum();
    raw.into_iter().map(|(a, w)| (a, w / total)).collect()
}

pub fn hivd_prior() -> SimulationPrior {
    SimulationPrior::GammaIntercept {
        shape: GAMMA_SHAPE,
        scale: GAMMA_SCALE,
        cells: HIVD_CELLS.to_vec(),
    }
}

pub fn hivdr_prior() -> SimulationPrior {
    SimulationPrior::GammaIntercept {
        shape: GAMMA_SHAPE,
        scale: GAMMA_SCALE,
        cells: HIVDR_CELLS.to_vec(),
    }
}

/// The override when given, else [`bundled_hivdx_prior`].
pub fn hivdx_prior(prior_override: Option<MixingDistribution>) -> SimulationPrior {
    SimulationPrior::Discrete(prior_override.unwrap_or_else(bundled_hivdx_prior))
}

/// 16-atom prior whose mean and covariance equal [`HIVDX_MEAN`] and
/// [`HIVDX_COV`].
///
/// `sigma2` takes two values `v_lo < v_hi` with `P(v_hi) = p` fixed by the
/// `sigma2` mean and variance. Given the group, `(rho, a, b)` sits on the
/// eight vertices `mu_g + L s`, `s in {-1, 1}^3`, with equal weights, where
/// the group means `mu_g` reproduce `Cov(., sigma2)` and `L L'` is the
/// remaining within-group covariance.
pub fn bundled_hivdx_prior() -> MixingDistribution {
    let (mean_s2, var_s2) = (HIVDX_MEAN[2], HIVDX_COV[2][2]);
    let v_lo = HIVDX_SIGMA2_LOW;
    let pd = mean_s2 - v_lo;
    let d = pd + var_s2 / pd;
    let p = pd / d;
    let v_hi = v_lo + d;
    // (rho, a, b) ordering, indices into the (a, b, sigma2, rho) tables
    let idx = [3, 0, 1];
    let mu = Vector3::from_fn(|i, _| HIVDX_MEAN[idx[i]]);
    let c_xs = Vector3::from_fn(|i, _| HIVDX_COV[idx[i]][2]);
    let c_xx = Matrix3::from_fn(|i, j| HIVDX_COV[idx[i]][idx[j]]);
    let delta = c_xs / (p * (1.0 - p) * d);
    let within = c_xx - delta * delta.transpose() * (p * (1.0 - p));
    let l = within.cholesky().expect("within-group covariance is positive definite").l();
    let mut atoms = Vec::with_capacity(16);
    let mut weights = Vec::with_capacity(16);
    for (s2, prob, shift) in [(v_lo, 1.0 - p, -p), (v_hi, p, 1.0 - p)] {
        let centre = mu + delta * shift;
        for k in 0..8 {
            let s = Vector3::from_fn(|i, _| if k >> i & 1 == 1 { 1.0 } else { -1.0 });
            let x = centre + l * s;
            atoms.push(Theta::ar1(x[1], x[2], s2, x[0]));
            weights.push(prob / 8.0);
        }
    }
    MixingDistribution::normalized(atoms, weights).expect("valid bundled prior")
}

/// `X_{2,1}` from [`X2_INITIAL`], then `X_{2,t} = X_{2,t-1} + 0.1`.
pub fn hivdx_covariate_path<R: Rng + ?Sized>(rng: &mut R, t: usize) -> Vec<f64> {
    let u: f64 = rng.random();
    let x1 = pick(X2_INITIAL.iter().copied(), u);
    (0..t).map(|k| x1 + X2_STEP * k as f64).collect()
}

/// Table moments as nalgebra types, order `(a, b, sigma2, rho)`.
pub fn hivdx_target_moments() -> (DVector<f64>, DMatrix<f64>) {
    (
        DVector::from_row_slice(&HIVDX_MEAN),
        DMatrix::from_fn(4, 4, |i, j| HIVDX_COV[i][j]),
    )
}
