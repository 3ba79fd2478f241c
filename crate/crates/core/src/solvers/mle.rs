//! Maximum likelihood for one unit or a weighted pool of units sharing one
//! `theta`.
//!
//! For fixed correlation parameters `(rho[, phi])` the mean coefficients are
//! the GLS estimate and `sigma2` has the closed form `(weighted SSR) /
//! (weighted T)` clipped to the box; only `(rho[, phi])` is searched
//! numerically, first on a grid and then by projected Newton ascent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{cholesky_lower, covariance, score_trace_identity, CovarianceFamily, PanelUnit, Theta, ThetaBox, LN_2PI};

/// Grid points per correlation axis.
pub const GRID_POINTS: usize = 40;
/// Refinement stops once the projected gradient norm drops below this.
pub const GRAD_TOL: f64 = 1e-8;
/// Maximum refinement steps.
pub const MAX_STEPS: usize = 500;

/// `theta` at the concentrated optimum for given correlation parameters.
#[derive(Debug, Clone, Copy)]
struct ProfilePoint {
    value: f64,
    grad: [f64; 2],
    theta: Theta,
}

/// Weighted pool of units. Units with zero weight are dropped.
struct Pool<'a> {
    units: Vec<&'a PanelUnit>,
    weights: Vec<f64>,
    with_x2: bool,
    family: CovarianceFamily,
    bounds: ThetaBox,
    t_max: usize,
    w_sum: f64,
    wt_sum: f64,
}

fn d_beta(with_x2: bool) -> usize {
    if with_x2 {
        2
    } else {
        1
    }
}

impl<'a> Pool<'a> {
    fn new(
        units: &[&'a PanelUnit],
        weights: &[f64],
        bounds: &ThetaBox,
        family: CovarianceFamily,
    ) -> Result<Self> {
        let (units, weights): (Vec<&PanelUnit>, Vec<f64>) = units
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(u, w)| (*u, *w))
            .unzip();
        if units.is_empty() {
            return Err(Error::InvalidData("no unit carries positive weight".into()));
        }
        let with_x2 = units[0].x2.is_some();
        if units.iter().any(|u| u.x2.is_some() != with_x2) {
            return Err(Error::InvalidData("units mix covariate modes".into()));
        }
        let total_t: usize = units.iter().map(|u| u.len()).sum();
        let need = d_beta(with_x2);
        if total_t < need || (units.len() == 1 && units[0].len() < need) {
            return Err(Error::InsufficientData {
                unit: units[0].id.clone(),
                have: total_t,
                need,
            });
        }
        if with_x2 {
            let x0 = units[0].x2_at(0);
            let scale = units
                .iter()
                .flat_map(|u| u.x2.as_ref().unwrap().iter())
                .fold(0.0_f64, |m, v| m.max(v.abs()))
                .max(1.0);
            let varies = units
                .iter()
                .flat_map(|u| u.x2.as_ref().unwrap().iter())
                .any(|v| (v - x0).abs() > 1e-12 * scale);
            if !varies {
                return Err(Error::ReducedRank {
                    columns: vec!["intercept".into(), "x2".into()],
                });
            }
        }
        let t_max = units.iter().map(|u| u.len()).max().unwrap();
        let w_sum = weights.iter().sum();
        let wt_sum = units.iter().zip(&weights).map(|(u, w)| w * u.len() as f64).sum();
        Ok(Pool {
            units,
            weights,
            with_x2,
            family,
            bounds: *bounds,
            t_max,
            w_sum,
            wt_sum,
        })
    }

    fn dim(&self) -> usize {
        match self.family {
            CovarianceFamily::Ar1 => 1,
            CovarianceFamily::Arma11 => 2,
        }
    }

    fn lower(&self) -> [f64; 2] {
        [-self.bounds.rho_abs_max, -self.phi_max()]
    }

    fn upper(&self) -> [f64; 2] {
        [self.bounds.rho_abs_max, self.phi_max()]
    }

    fn phi_max(&self) -> f64 {
        self.bounds.phi_abs_max.unwrap_or(1.0)
    }

    fn solve_beta(&self, xx: [f64; 3], xy: [f64; 2]) -> Result<(f64, f64)> {
        if self.with_x2 {
            let det = xx[0] * xx[2] - xx[1] * xx[1];
            if !(det.abs() > 1e-14 * (xx[0] * xx[2]).abs()) {
                return Err(Error::ReducedRank {
                    columns: vec!["intercept".into(), "x2".into()],
                });
            }
            Ok((
                (xx[2] * xy[0] - xx[1] * xy[1]) / det,
                (xx[0] * xy[1] - xx[1] * xy[0]) / det,
            ))
        } else {
            Ok((xy[0] / xx[0], 0.0))
        }
    }

    fn sigma2_hat(&self, ssr: f64) -> f64 {
        (ssr / self.wt_sum).clamp(self.bounds.sigma2_min, self.bounds.sigma2_max)
    }

    fn profile(&self, x: &[f64]) -> Result<ProfilePoint> {
        match self.family {
            CovarianceFamily::Ar1 => self.profile_ar1(x[0]),
            CovarianceFamily::Arma11 => self.profile_arma(x[0], x[1]),
        }
    }

    /// Prais-Winsten whitening: `(1-rho^2)^{1/2} z_1`, then `z_t - rho z_{t-1}`.
    fn profile_ar1(&self, rho: f64) -> Result<ProfilePoint> {
        let q = (1.0 - rho * rho).sqrt();
        let mut xx = [0.0; 3];
        let mut xy = [0.0; 2];
        for (u, w) in self.units.iter().zip(&self.weights) {
            let add = |xx: &mut [f64; 3], xy: &mut [f64; 2], c: f64, x: f64, y: f64| {
                xx[0] += w * c * c;
                xx[1] += w * c * x;
                xx[2] += w * x * x;
                xy[0] += w * c * y;
                xy[1] += w * x * y;
            };
            add(&mut xx, &mut xy, q, q * u.x2_at(0), q * u.y[0]);
            for t in 1..u.len() {
                add(
                    &mut xx,
                    &mut xy,
                    1.0 - rho,
                    u.x2_at(t) - rho * u.x2_at(t - 1),
                    u.y[t] - rho * u.y[t - 1],
                );
            }
        }
        let (a, b) = self.solve_beta(xx, xy)?;
        let mut ssr = 0.0;
        let mut cross = 0.0;
        for (u, w) in self.units.iter().zip(&self.weights) {
            let mut prev = u.y[0] - a - b * u.x2_at(0);
            let mut s = (1.0 - rho * rho) * prev * prev;
            let mut c = rho * prev * prev;
            for t in 1..u.len() {
                let r = u.y[t] - a - b * u.x2_at(t);
                let e = r - rho * prev;
                s += e * e;
                c += e * prev;
                prev = r;
            }
            ssr += w * s;
            cross += w * c;
        }
        let sigma2 = self.sigma2_hat(ssr);
        let om = 1.0 - rho * rho;
        let value = 0.5 * self.w_sum * om.ln() - 0.5 * self.wt_sum * (LN_2PI + sigma2.ln()) - 0.5 * ssr / sigma2;
        let d_rho = -self.w_sum * rho / om + cross / sigma2;
        Ok(ProfilePoint {
            value,
            grad: [d_rho, 0.0],
            theta: Theta::ar1(a, b, sigma2, rho),
        })
    }

    /// Whitening by the Cholesky factor of the unit-variance correlation
    /// matrix at `T_max`; its leading blocks factor the shorter units.
    fn profile_arma(&self, rho: f64, phi: f64) -> Result<ProfilePoint> {
        let r = covariance(self.family, 1.0, rho, Some(phi), self.t_max)?;
        let l = cholesky_lower(&r)?;
        let whiten = |v: &mut Vec<f64>| {
            for i in 0..v.len() {
                let mut s = v[i];
                for k in 0..i {
                    s -= l[(i, k)] * v[k];
                }
                v[i] = s / l[(i, i)];
            }
        };
        let mut xx = [0.0; 3];
        let mut xy = [0.0; 2];
        let mut whitened = Vec::with_capacity(self.units.len());
        let mut log_det = 0.0;
        for (u, w) in self.units.iter().zip(&self.weights) {
            let n = u.len();
            let mut c = vec![1.0; n];
            let mut x: Vec<f64> = (0..n).map(|t| u.x2_at(t)).collect();
            let mut y = u.y.clone();
            whiten(&mut c);
            whiten(&mut x);
            whiten(&mut y);
            for t in 0..n {
                xx[0] += w * c[t] * c[t];
                xx[1] += w * c[t] * x[t];
                xx[2] += w * x[t] * x[t];
                xy[0] += w * c[t] * y[t];
                xy[1] += w * x[t] * y[t];
            }
            log_det += w * 2.0 * (0..n).map(|t| l[(t, t)].ln()).sum::<f64>();
            whitened.push((c, x, y));
        }
        let (a, b) = self.solve_beta(xx, xy)?;
        let ssr: f64 = whitened
            .iter()
            .zip(&self.weights)
            .map(|((c, x, y), w)| {
                w * (0..y.len())
                    .map(|t| (y[t] - a * c[t] - b * x[t]).powi(2))
                    .sum::<f64>()
            })
            .sum();
        let sigma2 = self.sigma2_hat(ssr);
        let value = -0.5 * self.wt_sum * (LN_2PI + sigma2.ln()) - 0.5 * log_det - 0.5 * ssr / sigma2;
        let theta = Theta::arma11(a, b, sigma2, rho, phi);
        let mut grad = [0.0; 2];
        for (u, w) in self.units.iter().zip(&self.weights) {
            let g = score_trace_identity(u, &theta, self.family)?;
            grad[0] += w * g.rho;
            grad[1] += w * g.phi;
        }
        Ok(ProfilePoint { value, grad, theta })
    }

    fn grid_start(&self) -> Result<ProfilePoint> {
        let lo = self.lower();
        let hi = self.upper();
        let axis = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (GRID_POINTS - 1) as f64;
        let mut best: Option<ProfilePoint> = None;
        let mut consider = |x: &[f64]| {
            if let Ok(p) = self.profile(x) {
                if p.value.is_finite() && best.as_ref().is_none_or(|b| p.value > b.value) {
                    best = Some(p);
                }
            }
        };
        match self.dim() {
            1 => (0..GRID_POINTS).for_each(|i| consider(&[axis(0, i)])),
            _ => {
                for i in 0..GRID_POINTS {
                    for j in 0..GRID_POINTS {
                        consider(&[axis(0, i), axis(1, j)]);
                    }
                }
            }
        }
        best.ok_or_else(|| Error::InvalidData("likelihood is not finite anywhere on the grid".into()))
    }

    fn coords(&self, p: &ProfilePoint) -> Vec<f64> {
        match self.family {
            CovarianceFamily::Ar1 => vec![p.theta.rho],
            CovarianceFamily::Arma11 => vec![p.theta.rho, p.theta.phi_or_zero()],
        }
    }

    fn project(&self, x: &mut [f64]) {
        let (lo, hi) = (self.lower(), self.upper());
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(lo[k], hi[k]);
        }
    }

    /// Projected Newton ascent with Armijo backtracking. The Newton system
    /// uses a finite-difference Hessian of the analytic gradient over the
    /// free (non-active) coordinates; a negative-definite failure falls back
    /// to a diagonally scaled gradient step.
    fn refine(&self, start: ProfilePoint) -> ProfilePoint {
        let k = self.dim();
        let (lo, hi) = (self.lower(), self.upper());
        let mut cur = start;
        let mut x = self.coords(&cur);
        for _ in 0..MAX_STEPS {
            let g = &cur.grad[..k];
            let free: Vec<bool> = (0..k)
                .map(|i| !((x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0)))
                .collect();
            let pg_norm = (0..k).filter(|i| free[*i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
            if pg_norm <= GRAD_TOL {
                break;
            }
            let mut hess = DMatrix::<f64>::zeros(k, k);
            let mut hess_ok = true;
            for j in 0..k {
                let mut h = 1e-6 * x[j].abs().max(1e-2);
                if x[j] + h > hi[j] {
                    h = -h;
                }
                let mut xh = x.clone();
                xh[j] += h;
                match self.profile(&xh) {
                    Ok(p) if p.value.is_finite() => {
                        for i in 0..k {
                            hess[(i, j)] = (p.grad[i] - g[i]) / h;
                        }
                    }
                    _ => hess_ok = false,
                }
            }
            let hess = (&hess + hess.transpose()) * 0.5;
            let idx: Vec<usize> = (0..k).filter(|i| free[*i]).collect();
            let nf = idx.len();
            let neg_h = DMatrix::from_fn(nf, nf, |r, c| -hess[(idx[r], idx[c])]);
            let g_free = DVector::from_iterator(nf, idx.iter().map(|i| g[*i]));
            let newton = if hess_ok {
                neg_h.clone().cholesky().map(|c| c.solve(&g_free))
            } else {
                None
            };
            let step_free = newton.unwrap_or_else(|| {
                DVector::from_iterator(
                    nf,
                    (0..nf).map(|r| g_free[r] / neg_h[(r, r)].abs().max(pg_norm * 10.0).max(1e-12)),
                )
            });
            let mut d = vec![0.0; k];
            for (r, i) in idx.iter().enumerate() {
                d[*i] = step_free[r];
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut xn: Vec<f64> = (0..k).map(|i| x[i] + t * d[i]).collect();
                self.project(&mut xn);
                if let Ok(p) = self.profile(&xn) {
                    let dir: f64 = (0..k).map(|i| g[i] * (xn[i] - x[i])).sum();
                    if p.value.is_finite() && p.value >= cur.value + 1e-4 * dir && p.value >= cur.value {
                        accepted = Some((xn, p));
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((xn, p)) => {
                    let moved = (0..k).any(|i| xn[i] != x[i]);
                    x = xn;
                    cur = p;
                    if !moved {
                        break;
                    }
                }
                None => break,
            }
        }
        cur
    }

    /// Weighted `sum_i w_i log l(Y_i | theta)` at an arbitrary `theta`.
    fn value_at(&self, theta: &Theta) -> f64 {
        self.units
            .iter()
            .zip(&self.weights)
            .map(|(u, w)| {
                w * match self.family {
                    CovarianceFamily::Ar1 => crate::model::AtomCache::new(*theta, self.family).loglik(u),
                    CovarianceFamily::Arma11 => crate::model::loglik(u, theta, self.family).unwrap_or(f64::NEG_INFINITY),
                }
            })
            .sum()
    }
}

/// Maximizer of `sum_i w_i log l(Y_i | theta)` over `R^{d_beta} x box`,
/// started from the best correlation grid point.
pub fn weighted_mle(
    units: &[&PanelUnit],
    weights: &[f64],
    bounds: &ThetaBox,
    family: CovarianceFamily,
) -> Result<Theta> {
    let pool = Pool::new(units, weights, bounds, family)?;
    let start = pool.grid_start()?;
    Ok(pool.refine(start).theta)
}

/// Local ascent of the weighted log-likelihood from `start`, without a grid.
/// Returns the improved `theta` and its value, or `None` when no
/// improvement over `start` was found.
pub fn weighted_mle_from(
    units: &[&PanelUnit],
    weights: &[f64],
    bounds: &ThetaBox,
    family: CovarianceFamily,
    start: &Theta,
) -> Result<Option<(Theta, f64)>> {
    let pool = Pool::new(units, weights, bounds, family)?;
    let mut x = match family {
        CovarianceFamily::Ar1 => vec![start.rho],
        CovarianceFamily::Arma11 => vec![start.rho, start.phi_or_zero()],
    };
    pool.project(&mut x);
    let base = pool.value_at(start);
    let p = pool.refine(pool.profile(&x)?);
    if p.value > base {
        Ok(Some((p.theta, p.value)))
    } else {
        Ok(None)
    }
}

/// `argmax_theta l(Y_i | X_i, theta)` over `R^{d_beta} x box`.
pub fn individual_mle(unit: &PanelUnit, bounds: &ThetaBox, family: CovarianceFamily) -> Result<Theta> {
    let need = d_beta(unit.x2.is_some());
    if unit.len() < need {
        return Err(Error::InsufficientData {
            unit: unit.id.clone(),
            have: unit.len(),
            need,
        });
    }
    weighted_mle(&[unit], &[1.0], bounds, family)
        .map_err(|e| match e {
            Error::InsufficientData { have, need, .. } => Error::InsufficientData {
                unit: unit.id.clone(),
                have,
                need,
            },
            other => other,
        })
}

/// `(a, b)` by GLS for fixed `(sigma2, rho[, phi])`: `(X' S^-1 X)^-1 X' S^-1 y`.
pub fn gls_beta(unit: &PanelUnit, theta: &Theta, family: CovarianceFamily) -> Result<(f64, f64)> {
    let bounds = ThetaBox {
        sigma2_min: f64::MIN_POSITIVE,
        sigma2_max: f64::MAX,
        rho_abs_max: theta.rho.abs().clamp(0.5, 1.0 - 1e-15),
        phi_abs_max: Some(1.0),
    };
    let pool = Pool::new(&[unit], &[1.0], &bounds, family)?;
    let p = match family {
        CovarianceFamily::Ar1 => pool.profile_ar1(theta.rho)?,
        CovarianceFamily::Arma11 => pool.profile_arma(theta.rho, theta.phi_or_zero())?,
    };
    Ok((p.theta.a, p.theta.b))
}
