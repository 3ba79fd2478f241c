//! Stationary AR(1) and ARMA(1,1) covariance matrices.

use nalgebra::DMatrix;

use super::{check_delta, CovarianceFamily};
use crate::error::{Error, Result};

/// Autocovariance coefficients `c_k` with `Sigma_ts = sigma2 c_|t-s| / (1 - rho^2)`.
fn ar1_coef(rho: f64, k: usize) -> f64 {
    rho.powi(k as i32)
}

fn arma_coef(rho: f64, phi: f64, k: usize) -> f64 {
    match k {
        0 => 1.0 + phi * phi + 2.0 * phi * rho,
        _ => rho.powi(k as i32 - 1) * (rho + phi) * (1.0 + rho * phi),
    }
}

/// `Sigma_ts = sigma2 rho^|t-s| / (1 - rho^2)`.
pub fn ar1_covariance(sigma2: f64, rho: f64, t: usize) -> Result<DMatrix<f64>> {
    check_delta(CovarianceFamily::Ar1, sigma2, rho, None)?;
    check_t(t)?;
    let scale = sigma2 / (1.0 - rho * rho);
    Ok(DMatrix::from_fn(t, t, |i, j| scale * ar1_coef(rho, i.abs_diff(j))))
}

/// Stationary ARMA(1,1) covariance of `u_t = rho u_{t-1} + sigma (e_t + phi e_{t-1})`.
pub fn arma11_covariance(sigma2: f64, rho: f64, phi: f64, t: usize) -> Result<DMatrix<f64>> {
    check_delta(CovarianceFamily::Arma11, sigma2, rho, Some(phi))?;
    check_t(t)?;
    let scale = sigma2 / (1.0 - rho * rho);
    Ok(DMatrix::from_fn(t, t, |i, j| {
        scale * arma_coef(rho, phi, i.abs_diff(j))
    }))
}

/// Covariance for `family`; `phi` is ignored for AR(1).
pub fn covariance(
    family: CovarianceFamily,
    sigma2: f64,
    rho: f64,
    phi: Option<f64>,
    t: usize,
) -> Result<DMatrix<f64>> {
    match family {
        CovarianceFamily::Ar1 => ar1_covariance(sigma2, rho, t),
        CovarianceFamily::Arma11 => {
            let phi = phi.ok_or(Error::Domain {
                param: "phi",
                value: f64::NAN,
                reason: "ARMA(1,1) requires phi",
            })?;
            arma11_covariance(sigma2, rho, phi, t)
        }
    }
}

fn check_t(t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidData("covariance dimension must be >= 1".into()));
    }
    Ok(())
}

/// `Sigma` together with its termwise partial derivatives in `delta`.
#[derive(Debug, Clone)]
pub struct CovarianceDerivatives {
    pub sigma: DMatrix<f64>,
    pub d_sigma2: DMatrix<f64>,
    pub d_rho: DMatrix<f64>,
    pub d_phi: Option<DMatrix<f64>>,
}

/// Derivatives use the convention `k rho^(k-1) = 0` at `k = 0`, so they are
/// finite at `rho = 0`.
pub fn covariance_derivatives(
    family: CovarianceFamily,
    sigma2: f64,
    rho: f64,
    phi: Option<f64>,
    t: usize,
) -> Result<CovarianceDerivatives> {
    let sigma = covariance(family, sigma2, rho, phi, t)?;
    let one_m = 1.0 - rho * rho;
    // d/drho [1/(1-rho^2)] = 2 rho / (1-rho^2)^2
    let d_inv = 2.0 * rho / (one_m * one_m);
    type LagFn = Box<dyn Fn(usize) -> f64>;
    let (coef, d_rho_coef, d_phi_coef): (LagFn, LagFn, Option<LagFn>) = match family {
        CovarianceFamily::Ar1 => (
            Box::new(move |k| ar1_coef(rho, k)),
            Box::new(move |k| {
                if k == 0 {
                    0.0
                } else {
                    k as f64 * rho.powi(k as i32 - 1)
                }
            }),
            None,
        ),
        CovarianceFamily::Arma11 => {
            let p = phi.unwrap_or(0.0);
            let c1 = (rho + p) * (1.0 + rho * p);
            let c1_rho = 1.0 + 2.0 * rho * p + p * p;
            let c1_phi = 1.0 + 2.0 * rho * p + rho * rho;
            (
                Box::new(move |k| arma_coef(rho, p, k)),
                Box::new(move |k| match k {
                    0 => 2.0 * p,
                    1 => c1_rho,
                    _ => {
                        let lead = if k == 2 {
                            1.0
                        } else {
                            (k - 1) as f64 * rho.powi(k as i32 - 2)
                        };
                        lead * c1 + rho.powi(k as i32 - 1) * c1_rho
                    }
                }),
                Some(Box::new(move |k| match k {
                    0 => 2.0 * p + 2.0 * rho,
                    _ => rho.powi(k as i32 - 1) * c1_phi,
                })),
            )
        }
    };
    let d_sigma2 = DMatrix::from_fn(t, t, |i, j| coef(i.abs_diff(j)) / one_m);
    let d_rho = DMatrix::from_fn(t, t, |i, j| {
        let k = i.abs_diff(j);
        sigma2 * (d_rho_coef(k) / one_m + coef(k) * d_inv)
    });
    let d_phi = d_phi_coef.map(|f| DMatrix::from_fn(t, t, |i, j| sigma2 * f(i.abs_diff(j)) / one_m));
    Ok(CovarianceDerivatives {
        sigma,
        d_sigma2,
        d_rho,
        d_phi,
    })
}

/// Lower-triangular `P` with `P P' = sigma`.
///
/// Fails with the index of the first non-positive pivot.
pub fn cholesky_lower(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::InvalidData(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            sigma.ncols()
        )));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = sigma[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Factorization { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}
