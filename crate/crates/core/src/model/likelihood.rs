//! Exact Gaussian log-likelihoods and scores for a single unit.
//!
//! Three routes are provided:
//! - [`loglik`] / [`score_trace_identity`]: dense, through the Cholesky factor
//!   of `Sigma`; valid for both families.
//! - [`loglik_ar1_closed_form`]: the AR(1) prediction-error decomposition.
//! - [`loglik_and_score_fast`]: O(T) fused value and gradient for AR(1),
//!   used by the solvers' inner loops. Falls back to the dense route for
//!   ARMA(1,1).

use nalgebra::{DMatrix, DVector};

use super::{cholesky_lower, covariance, covariance_derivatives, CovarianceFamily, PanelUnit, Theta};
use crate::error::Result;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gradient of `log l(y | theta)` in `(a, b, sigma2, rho, phi)`.
///
/// `b` is zero for units without `x2`; `phi` is zero for AR(1).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThetaGradient {
    pub a: f64,
    pub b: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub phi: f64,
}

impl ThetaGradient {
    pub fn to_vec(&self, family: CovarianceFamily) -> Vec<f64> {
        let mut v = vec![self.a, self.b, self.sigma2, self.rho];
        if family == CovarianceFamily::Arma11 {
            v.push(self.phi);
        }
        v
    }

    #[inline]
    pub fn add_scaled(&mut self, other: &ThetaGradient, w: f64) {
        self.a += w * other.a;
        self.b += w * other.b;
        self.sigma2 += w * other.sigma2;
        self.rho += w * other.rho;
        self.phi += w * other.phi;
    }
}

fn residuals(unit: &PanelUnit, theta: &Theta) -> DVector<f64> {
    DVector::from_iterator(
        unit.len(),
        unit.y
            .iter()
            .enumerate()
            .map(|(t, y)| y - theta.a - theta.b * unit.x2_at(t)),
    )
}

/// Solves `L z = r` for lower-triangular `L`.
fn forward_solve(l: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let n = r.len();
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let mut s = r[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// `log l(y | X, theta)` through the Cholesky factor of `Sigma(delta)`.
pub fn loglik(unit: &PanelUnit, theta: &Theta, family: CovarianceFamily) -> Result<f64> {
    theta.validate(family)?;
    let t = unit.len();
    let sigma = covariance(family, theta.sigma2, theta.rho, theta.phi, t)?;
    let p = cholesky_lower(&sigma)?;
    let z = forward_solve(&p, &residuals(unit, theta));
    let log_det_p: f64 = (0..t).map(|i| p[(i, i)].ln()).sum();
    Ok(-0.5 * t as f64 * LN_2PI - log_det_p - 0.5 * z.norm_squared())
}

/// AR(1) log-likelihood by the prediction-error decomposition:
/// `(1-rho^2)^{1/2} (2 pi sigma2)^{-T/2} exp(-[(1-rho^2) r_1^2 + sum (r_t - rho r_{t-1})^2] / (2 sigma2))`
/// with `r_t = y_t - a - b x2_t`.
pub fn loglik_ar1_closed_form(unit: &PanelUnit, theta: &Theta) -> Result<f64> {
    theta.validate(CovarianceFamily::Ar1)?;
    let (s2, rho) = (theta.sigma2, theta.rho);
    let t = unit.len() as f64;
    let r: Vec<f64> = residuals(unit, theta).iter().copied().collect();
    let first = (1.0 - rho * rho) * r[0] * r[0];
    let rest: f64 = r.windows(2).map(|w| (w[1] - rho * w[0]).powi(2)).sum();
    Ok(0.5 * (1.0 - rho * rho).ln() - 0.5 * t * (LN_2PI + s2.ln()) - (first + rest) / (2.0 * s2))
}

/// Analytic score by the trace identity
/// `d/d delta_k = -1/2 tr(Sigma^-1 dSigma_k) + 1/2 r' Sigma^-1 dSigma_k Sigma^-1 r`
/// and `d/d beta = X' Sigma^-1 r`.
pub fn score_trace_identity(
    unit: &PanelUnit,
    theta: &Theta,
    family: CovarianceFamily,
) -> Result<ThetaGradient> {
    theta.validate(family)?;
    let t = unit.len();
    let d = covariance_derivatives(family, theta.sigma2, theta.rho, theta.phi, t)?;
    let p = cholesky_lower(&d.sigma)?;
    // Sigma^-1 = P^-T P^-1
    let p_inv = {
        let mut inv = DMatrix::<f64>::zeros(t, t);
        for j in 0..t {
            let mut e = DVector::zeros(t);
            e[j] = 1.0;
            inv.set_column(j, &forward_solve(&p, &e));
        }
        inv
    };
    let sigma_inv = p_inv.transpose() * &p_inv;
    let r = residuals(unit, theta);
    let alpha = &sigma_inv * &r;
    let delta_component = |ds: &DMatrix<f64>| -> f64 {
        let trace: f64 = sigma_inv.component_mul(ds).sum();
        let quad = alpha.dot(&(ds * &alpha));
        -0.5 * trace + 0.5 * quad
    };
    let g_b = if unit.x2.is_some() {
        (0..t).map(|i| alpha[i] * unit.x2_at(i)).sum()
    } else {
        0.0
    };
    Ok(ThetaGradient {
        a: alpha.sum(),
        b: g_b,
        sigma2: delta_component(&d.d_sigma2),
        rho: delta_component(&d.d_rho),
        phi: d.d_phi.as_ref().map(delta_component).unwrap_or(0.0),
    })
}

/// Analytic score of `log l` in `(a, b, sigma2, rho[, phi])`.
pub fn score(unit: &PanelUnit, theta: &Theta, family: CovarianceFamily) -> Result<ThetaGradient> {
    score_trace_identity(unit, theta, family)
}

/// Per-atom quantities reused across every unit in an N x m sweep.
#[derive(Debug, Clone, Copy)]
pub struct AtomCache {
    pub theta: Theta,
    family: CovarianceFamily,
    inv_s2: f64,
    one_m_rho2: f64,
    ln_s2: f64,
    half_ln_one_m_rho2: f64,
}

impl AtomCache {
    /// `theta` must already satisfy the domain constraints of `family`.
    pub fn new(theta: Theta, family: CovarianceFamily) -> Self {
        let one_m = 1.0 - theta.rho * theta.rho;
        AtomCache {
            theta,
            family,
            inv_s2: 1.0 / theta.sigma2,
            one_m_rho2: one_m,
            ln_s2: theta.sigma2.ln(),
            half_ln_one_m_rho2: 0.5 * one_m.ln(),
        }
    }

    /// Log-likelihood only; AR(1) in O(T), ARMA(1,1) through the dense route.
    #[inline]
    pub fn loglik(&self, unit: &PanelUnit) -> f64 {
        match self.family {
            CovarianceFamily::Ar1 => self.ar1_value(unit),
            CovarianceFamily::Arma11 => loglik(unit, &self.theta, self.family).unwrap_or(f64::NEG_INFINITY),
        }
    }

    #[inline]
    fn ar1_value(&self, unit: &PanelUnit) -> f64 {
        let Theta { a, b, rho, .. } = self.theta;
        let y = &unit.y;
        let n = y.len();
        let (r1, sum_e2) = match &unit.x2 {
            Some(x) => {
                let mut prev = y[0] - a - b * x[0];
                let r1 = prev;
                let mut acc = 0.0;
                for t in 1..n {
                    let r = y[t] - a - b * x[t];
                    let e = r - rho * prev;
                    acc += e * e;
                    prev = r;
                }
                (r1, acc)
            }
            None => {
                let mut prev = y[0] - a;
                let r1 = prev;
                let mut acc = 0.0;
                for &yt in &y[1..] {
                    let r = yt - a;
                    let e = r - rho * prev;
                    acc += e * e;
                    prev = r;
                }
                (r1, acc)
            }
        };
        let ssq = self.one_m_rho2 * r1 * r1 + sum_e2;
        self.half_ln_one_m_rho2 - 0.5 * n as f64 * (LN_2PI + self.ln_s2) - 0.5 * ssq * self.inv_s2
    }

    #[inline]
    fn ar1_value_and_score(&self, unit: &PanelUnit) -> (f64, ThetaGradient) {
        let Theta { a, b, rho, .. } = self.theta;
        let y = &unit.y;
        let n = y.len();
        let mut sum_e = 0.0;
        let mut sum_e2 = 0.0;
        let mut sum_e_prev = 0.0;
        let mut sum_e_dx = 0.0;
        let r1;
        let mut x1 = 0.0;
        match &unit.x2 {
            Some(x) => {
                x1 = x[0];
                let mut prev = y[0] - a - b * x[0];
                r1 = prev;
                for t in 1..n {
                    let r = y[t] - a - b * x[t];
                    let e = r - rho * prev;
                    sum_e += e;
                    sum_e2 += e * e;
                    sum_e_prev += e * prev;
                    sum_e_dx += e * (x[t] - rho * x[t - 1]);
                    prev = r;
                }
            }
            None => {
                let mut prev = y[0] - a;
                r1 = prev;
                for &yt in &y[1..] {
                    let r = yt - a;
                    let e = r - rho * prev;
                    sum_e += e;
                    sum_e2 += e * e;
                    sum_e_prev += e * prev;
                    prev = r;
                }
            }
        }
        let om = self.one_m_rho2;
        let inv = self.inv_s2;
        let ssq = om * r1 * r1 + sum_e2;
        let value = self.half_ln_one_m_rho2 - 0.5 * n as f64 * (LN_2PI + self.ln_s2) - 0.5 * ssq * inv;
        let grad = ThetaGradient {
            a: (om * r1 + (1.0 - rho) * sum_e) * inv,
            b: if unit.x2.is_some() {
                (om * r1 * x1 + sum_e_dx) * inv
            } else {
                0.0
            },
            sigma2: 0.5 * inv * (ssq * inv - n as f64),
            rho: -rho / om + (rho * r1 * r1 + sum_e_prev) * inv,
            phi: 0.0,
        };
        (value, grad)
    }
}

/// Per-unit moments that make the AR(1) log-likelihood O(1) per atom.
///
/// With `z_t = (y_t - c, 1, x_t - d)` centred at the unit means and
/// `w = (1, -(a - c + b d), -b)`, the quadratic form of the AR(1) density is
/// `w' (Q0 + rho Q1 + rho^2 Q2) w`. Each `Q` is stored as the upper triangle
/// `[00, 01, 02, 11, 12, 22]`.
#[derive(Debug, Clone, Copy)]
pub struct UnitStats {
    n: f64,
    c: f64,
    d: f64,
    has_x: bool,
    q: [[f64; 6]; 3],
}

const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

impl UnitStats {
    pub fn new(unit: &PanelUnit) -> Self {
        let n = unit.y.len();
        let c = unit.y.iter().sum::<f64>() / n as f64;
        let d = unit.x2.as_ref().map_or(0.0, |x| x.iter().sum::<f64>() / n as f64);
        let z = |t: usize| [unit.y[t] - c, 1.0, unit.x2.as_ref().map_or(0.0, |x| x[t] - d)];
        let mut q0 = [0.0; 6];
        let mut q1 = [0.0; 6];
        let mut q2 = [0.0; 6];
        let z1 = z(0);
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            q2[k] -= z1[i] * z1[j];
            q0[k] += z1[i] * z1[j];
        }
        let mut prev = z1;
        for t in 1..n {
            let cur = z(t);
            for (k, &(i, j)) in PAIRS.iter().enumerate() {
                q0[k] += cur[i] * cur[j];
                q1[k] -= cur[i] * prev[j] + prev[i] * cur[j];
                q2[k] += prev[i] * prev[j];
            }
            prev = cur;
        }
        UnitStats {
            n: n as f64,
            c,
            d,
            has_x: unit.x2.is_some(),
            q: [q0, q1, q2],
        }
    }

    #[inline]
    fn form(&self, rho: f64) -> [f64; 6] {
        let [q0, q1, q2] = &self.q;
        let mut out = [0.0; 6];
        for k in 0..6 {
            out[k] = q0[k] + rho * (q1[k] + rho * q2[k]);
        }
        out
    }
}

#[inline]
fn sym_mul(q: &[f64; 6], w: &[f64; 3]) -> [f64; 3] {
    [
        q[0] * w[0] + q[1] * w[1] + q[2] * w[2],
        q[1] * w[0] + q[3] * w[1] + q[4] * w[2],
        q[2] * w[0] + q[4] * w[1] + q[5] * w[2],
    ]
}

#[inline]
fn quad(q: &[f64; 6], w: &[f64; 3]) -> f64 {
    let v = sym_mul(q, w);
    w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
}

impl AtomCache {
    /// Two-dimensional specialization of the sufficient-statistic kernel.
    #[inline]
    fn ar1_intercept_stats(&self, s: &UnitStats) -> (f64, ThetaGradient) {
        let rho = self.theta.rho;
        let [q0, q1, q2] = &s.q;
        let w1 = s.c - self.theta.a;
        let f = |k: usize| q0[k] + rho * (q1[k] + rho * q2[k]);
        let (f00, f01, f11) = (f(0), f(1), f(3));
        let qw1 = f01 + f11 * w1;
        let ssq = f00 + w1 * (2.0 * f01 + f11 * w1);
        let d = |k: usize| q1[k] + 2.0 * rho * q2[k];
        let dssq = d(0) + w1 * (2.0 * d(1) + d(3) * w1);
        let inv = self.inv_s2;
        let value = self.half_ln_one_m_rho2 - 0.5 * s.n * (LN_2PI + self.ln_s2) - 0.5 * ssq * inv;
        let grad = ThetaGradient {
            a: qw1 * inv,
            b: 0.0,
            sigma2: 0.5 * inv * (ssq * inv - s.n),
            rho: -rho / self.one_m_rho2 - 0.5 * dssq * inv,
            phi: 0.0,
        };
        (value, grad)
    }

    #[inline]
    fn suff_w(&self, s: &UnitStats) -> [f64; 3] {
        let Theta { a, b, .. } = self.theta;
        [1.0, -(a - s.c + b * s.d), -b]
    }

    /// AR(1) log-likelihood from [`UnitStats`]; agrees with the O(T) route up
    /// to rounding.
    #[inline]
    pub fn ar1_loglik_stats(&self, s: &UnitStats) -> f64 {
        let w = self.suff_w(s);
        let ssq = quad(&s.form(self.theta.rho), &w);
        self.half_ln_one_m_rho2 - 0.5 * s.n * (LN_2PI + self.ln_s2) - 0.5 * ssq * self.inv_s2
    }

    /// AR(1) log-likelihood and score from [`UnitStats`].
    #[inline]
    pub fn ar1_loglik_and_score_stats(&self, s: &UnitStats) -> (f64, ThetaGradient) {
        if !s.has_x {
            return self.ar1_intercept_stats(s);
        }
        let rho = self.theta.rho;
        let w = self.suff_w(s);
        let q = s.form(rho);
        let qw = sym_mul(&q, &w);
        let ssq = w[0] * qw[0] + w[1] * qw[1] + w[2] * qw[2];
        let dq: [f64; 6] = std::array::from_fn(|k| s.q[1][k] + 2.0 * rho * s.q[2][k]);
        let inv = self.inv_s2;
        let value = self.half_ln_one_m_rho2 - 0.5 * s.n * (LN_2PI + self.ln_s2) - 0.5 * ssq * inv;
        let grad = ThetaGradient {
            a: qw[1] * inv,
            b: if s.has_x { (s.d * qw[1] + qw[2]) * inv } else { 0.0 },
            sigma2: 0.5 * inv * (ssq * inv - s.n),
            rho: -rho / self.one_m_rho2 - 0.5 * quad(&dq, &w) * inv,
            phi: 0.0,
        };
        (value, grad)
    }
}

/// Value and gradient of `log l` for a cached atom.
#[inline]
pub fn loglik_and_score_fast(unit: &PanelUnit, atom: &AtomCache) -> (f64, ThetaGradient) {
    match atom.family {
        CovarianceFamily::Ar1 => atom.ar1_value_and_score(unit),
        CovarianceFamily::Arma11 => {
            let v = loglik(unit, &atom.theta, atom.family).unwrap_or(f64::NEG_INFINITY);
            let g = score_trace_identity(unit, &atom.theta, atom.family).unwrap_or_default();
            (v, g)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, t: usize, with_x2: bool) -> PanelUnit {
        let y: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        if with_x2 {
            let x: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..2.0)).collect();
            PanelUnit::with_x2("r", y, x)
        } else {
            PanelUnit::new("r", y)
        }
    }

    fn random_theta(rng: &mut ChaCha8Rng, family: CovarianceFamily) -> Theta {
        let mut th = Theta::ar1(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.05..3.0),
            rng.random_range(-0.9..0.9),
        );
        if family == CovarianceFamily::Arma11 {
            th.phi = Some(rng.random_range(-0.9..0.9));
        }
        th
    }

    #[test]
    fn standard_normal_at_mean() {
        let u = PanelUnit::new("1", vec![0.7]);
        // sigma2 / (1 - rho^2) = 1
        let th = Theta::ar1(0.7, 0.0, 0.75, 0.5);
        let v = loglik(&u, &th, CovarianceFamily::Ar1).unwrap();
        assert!((v + 0.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn zero_residual_identity_covariance() {
        let u = PanelUnit::with_x2("1", vec![1.2, 1.4, 1.6], vec![1.0, 2.0, 3.0]);
        let th = Theta::ar1(1.0, 0.2, 1.0, 0.0);
        let v = loglik(&u, &th, CovarianceFamily::Ar1).unwrap();
        assert!((v + 1.5 * LN_2PI).abs() < 1e-13);
    }

    #[test]
    fn closed_form_hand_value() {
        let u = PanelUnit::new("1", vec![0.0, 0.0, 0.0]);
        let th = Theta::ar1(0.0, 0.0, 1.0, 0.5);
        let want = 0.5 * 0.75_f64.ln() - 1.5 * LN_2PI;
        assert!((loglik_ar1_closed_form(&u, &th).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn closed_form_white_noise_is_sum_of_normals() {
        let u = PanelUnit::new("1", vec![0.3, -1.0, 2.0]);
        let th = Theta::ar1(0.5, 0.0, 2.0, 0.0);
        let want: f64 = u
            .y
            .iter()
            .map(|y| -0.5 * (LN_2PI + 2.0_f64.ln()) - (y - 0.5).powi(2) / 4.0)
            .sum();
        assert!((loglik_ar1_closed_form(&u, &th).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn three_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..1000 {
            let t = rng.random_range(1..=13);
            let u = random_unit(&mut rng, t, k % 2 == 0);
            let th = random_theta(&mut rng, CovarianceFamily::Ar1);
            let dense = loglik(&u, &th, CovarianceFamily::Ar1).unwrap();
            let closed = loglik_ar1_closed_form(&u, &th).unwrap();
            let cache = AtomCache::new(th, CovarianceFamily::Ar1);
            let (fast, _) = loglik_and_score_fast(&u, &cache);
            assert!((dense - closed).abs() <= 1e-10, "{dense} vs {closed}");
            assert!((fast - closed).abs() <= 1e-10);
            assert!((cache.loglik(&u) - fast).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_residual_gives_zero_beta_score() {
        let u = PanelUnit::with_x2("1", vec![1.0, 1.5, 2.0], vec![0.0, 1.0, 2.0]);
        let th = Theta::ar1(1.0, 0.5, 0.4, 0.3);
        for family in [CovarianceFamily::Ar1, CovarianceFamily::Arma11] {
            let mut th = th;
            if family == CovarianceFamily::Arma11 {
                th.phi = Some(0.2);
            }
            let g = score(&u, &th, family).unwrap();
            assert_eq!(g.a.abs() + g.b.abs(), 0.0);
        }
    }

    #[test]
    fn single_period_intercept_score() {
        let u = PanelUnit::new("1", vec![1.3]);
        let th = Theta::ar1(0.4, 0.0, 0.7, 0.6);
        let g = score(&u, &th, CovarianceFamily::Ar1).unwrap();
        let want = (1.3 - 0.4) * (1.0 - 0.36) / 0.7;
        assert!((g.a - want).abs() < 1e-12);
    }

    #[test]
    fn fast_score_matches_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..300 {
            let t = rng.random_range(1..=13);
            let u = random_unit(&mut rng, t, k % 3 != 0);
            let th = random_theta(&mut rng, CovarianceFamily::Ar1);
            let slow = score(&u, &th, CovarianceFamily::Ar1).unwrap();
            let (_, fast) = loglik_and_score_fast(&u, &AtomCache::new(th, CovarianceFamily::Ar1));
            for (s, f) in slow
                .to_vec(CovarianceFamily::Ar1)
                .iter()
                .zip(fast.to_vec(CovarianceFamily::Ar1))
            {
                assert!((s - f).abs() <= 1e-9 * (1.0 + s.abs()), "{s} vs {f}");
            }
        }
    }

    #[test]
    fn sufficient_statistics_match_direct_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 0..500 {
            let t = rng.random_range(1..=13);
            let u = random_unit(&mut rng, t, k % 2 == 0);
            let th = random_theta(&mut rng, CovarianceFamily::Ar1);
            let c = AtomCache::new(th, CovarianceFamily::Ar1);
            let st = UnitStats::new(&u);
            let (v0, g0) = loglik_and_score_fast(&u, &c);
            let (v1, g1) = c.ar1_loglik_and_score_stats(&st);
            assert!((v0 - v1).abs() <= 1e-9 * (1.0 + v0.abs()), "{v0} vs {v1}");
            assert!((c.ar1_loglik_stats(&st) - v1).abs() <= 1e-12 * (1.0 + v1.abs()));
            for (x, y) in g0.to_vec(CovarianceFamily::Ar1).iter().zip(g1.to_vec(CovarianceFamily::Ar1)) {
                assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }
}
