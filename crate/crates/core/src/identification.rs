//! Identification diagnostics: annihilators of the mean design, covariances
//! of the annihilated errors, and closed-form recovery of the variance
//! parameters from them.
//!
//! For a design `X` with `M'X = 0`, `M'Y = M'u` has covariance
//! `V = M' Sigma(delta) M`, free of the mean coefficients.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{covariance, CovarianceFamily};

/// Design and a full-column-rank annihilator with `M'X = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnihilatorPair {
    pub x_design: DMatrix<f64>,
    pub m_matrix: DMatrix<f64>,
}

/// `V = M' Sigma M`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffCovariance {
    pub v: DMatrix<f64>,
}

impl DiffCovariance {
    pub fn new(v: DMatrix<f64>) -> Self {
        DiffCovariance { v }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.v[(i, j)]
    }
}

fn numeric_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    let tol = top * 1e-10 * (x.nrows().max(x.ncols()) as f64);
    sv.iter().filter(|s| **s > tol).count()
}

/// Orthonormal basis of the null space of `x'`, from the eigenvectors of the
/// residual-maker `I - X (X'X)^-1 X'` with eigenvalue one.
pub fn build_annihilator(x_design: &DMatrix<f64>) -> Result<AnnihilatorPair> {
    let (t, d) = x_design.shape();
    if d == 0 || d >= t {
        return Err(Error::IdentificationPrecondition(format!(
            "need 1 <= d_beta <= T - 1, got d_beta = {d}, T = {t}"
        )));
    }
    if numeric_rank(x_design) < d {
        return Err(Error::IdentificationPrecondition(format!(
            "design has rank below {d}"
        )));
    }
    let xtx_inv = (x_design.transpose() * x_design)
        .try_inverse()
        .ok_or_else(|| Error::IdentificationPrecondition("X'X is singular".into()))?;
    let resid = DMatrix::identity(t, t) - x_design * xtx_inv * x_design.transpose();
    let resid = (&resid + resid.transpose()) * 0.5;
    let eig = resid.symmetric_eigen();
    let mut cols: Vec<usize> = (0..t).filter(|k| eig.eigenvalues[*k] > 0.5).collect();
    cols.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    if cols.len() != t - d {
        return Err(Error::IdentificationPrecondition(format!(
            "null space has dimension {}, expected {}",
            cols.len(),
            t - d
        )));
    }
    let mut m = DMatrix::zeros(t, t - d);
    for (c, k) in cols.iter().enumerate() {
        let mut v = eig.eigenvectors.column(*k).into_owned();
        // sign convention: first entry of largest magnitude is positive
        let lead = v.iter().copied().fold(0.0_f64, |b, e| if e.abs() > b.abs() + 1e-12 { e } else { b });
        if lead < 0.0 {
            v = -v;
        }
        m.set_column(c, &v);
    }
    Ok(AnnihilatorPair {
        x_design: x_design.clone(),
        m_matrix: m,
    })
}

/// Orthogonal projector onto the column span of `a`.
pub fn column_projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let ata = a.transpose() * a;
    let inv = ata.pseudo_inverse(1e-12).expect("pseudo-inverse of a Gram matrix");
    a * inv * a.transpose()
}

/// `M' Sigma(delta) M` with `T = M.nrows()`.
pub fn diff_covariance(
    m: &DMatrix<f64>,
    sigma2: f64,
    rho: f64,
    phi: Option<f64>,
    family: CovarianceFamily,
) -> Result<DiffCovariance> {
    let sigma = covariance(family, sigma2, rho, phi, m.nrows())?;
    let v = m.transpose() * sigma * m;
    Ok(DiffCovariance::new((&v + v.transpose()) * 0.5))
}

fn from_rows(rows: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Intercept-only design of length `t`.
pub fn intercept_design(t: usize) -> DMatrix<f64> {
    DMatrix::from_element(t, 1, 1.0)
}

/// Intercept plus linear trend `x2 = (1, ..., t)`.
pub fn trend_design(t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, 2, |i, j| if j == 0 { 1.0 } else { (i + 1) as f64 })
}

/// Intercept plus level shift `x2_t = 1{t >= 3}`, `T = 5`.
pub fn level_shift_design() -> DMatrix<f64> {
    DMatrix::from_fn(5, 2, |i, j| if j == 0 || i >= 2 { 1.0 } else { 0.0 })
}

/// Columns `Delta y_2, Delta y_3` for `T = 3`.
pub fn first_difference_t3() -> DMatrix<f64> {
    from_rows(&[&[-1.0, 0.0], &[1.0, -1.0], &[0.0, 1.0]])
}

/// Second differences for `T = 4`.
pub fn second_difference_t4() -> DMatrix<f64> {
    from_rows(&[&[1.0, 0.0], &[-2.0, 1.0], &[1.0, -2.0], &[0.0, 1.0]])
}

/// Columns `Delta y_2, Delta y_4, Delta y_5` for the `T = 5` level shift.
pub fn level_shift_t5() -> DMatrix<f64> {
    from_rows(&[
        &[-1.0, 0.0, 0.0],
        &[1.0, 0.0, 0.0],
        &[0.0, -1.0, 0.0],
        &[0.0, 1.0, -1.0],
        &[0.0, 0.0, 1.0],
    ])
}

/// Columns `Delta y_2, Delta y_3, Delta y_4` for `T = 4`.
pub fn first_difference_t4() -> DMatrix<f64> {
    from_rows(&[
        &[-1.0, 0.0, 0.0],
        &[1.0, -1.0, 0.0],
        &[0.0, 1.0, -1.0],
        &[0.0, 0.0, 1.0],
    ])
}

/// Columns `Delta y_2, Delta y_4` for `T = 4`.
pub fn symmetric_difference_t4() -> DMatrix<f64> {
    from_rows(&[&[-1.0, 0.0], &[1.0, 0.0], &[0.0, -1.0], &[0.0, 1.0]])
}

fn check_shape(v: &DiffCovariance, k: usize, what: &str) -> Result<()> {
    if v.v.shape() != (k, k) {
        return Err(Error::IdentificationPrecondition(format!(
            "{what} expects a {k}x{k} covariance, got {}x{}",
            v.v.nrows(),
            v.v.ncols()
        )));
    }
    if !(v.at(0, 0) > 0.0) {
        return Err(Error::InconsistentMoments(format!("V11 = {} must be positive", v.at(0, 0))));
    }
    Ok(())
}

fn admissible(sigma2: f64, rho: f64) -> Result<(f64, f64)> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::InconsistentMoments(format!("recovered rho = {rho} is outside (-1, 1)")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InconsistentMoments(format!("recovered sigma2 = {sigma2} is not positive")));
    }
    Ok((sigma2, rho))
}

/// AR(1), `T = 3`, first differences: `rho = 1 + 2 V21 / V11`,
/// `sigma2 = V11 + V21`.
pub fn invert_ar1_firstdiff(v: &DiffCovariance) -> Result<(f64, f64)> {
    check_shape(v, 2, "first-difference inversion")?;
    let (v11, v21) = (v.at(0, 0), v.at(1, 0));
    admissible(v11 + v21, 1.0 + 2.0 * v21 / v11)
}

/// AR(1), `T = 4`, second differences. The forward map is
/// `V11 = 2(3 - rho) sigma2 / (1 + rho)` and
/// `V12 = -(rho^2 - 3 rho + 4) sigma2 / (1 + rho)`, so `r = V12 / V11` solves
/// `rho^2 - (3 + 2r) rho + (4 + 6r) = 0`. `r` is increasing in `rho` on
/// `(-1, 1)` and the admissible root is the smaller one; then
/// `sigma2 = V11 (1 + rho) / (2 (3 - rho))`.
pub fn invert_ar1_seconddiff(v: &DiffCovariance) -> Result<(f64, f64)> {
    check_shape(v, 2, "second-difference inversion")?;
    let r = v.at(0, 1) / v.at(0, 0);
    let disc = 4.0 * r * r - 12.0 * r - 7.0;
    if !(disc >= 0.0) {
        return Err(Error::InconsistentMoments(format!(
            "V12 / V11 = {r} has no admissible rho"
        )));
    }
    // smaller root of the quadratic, in a cancellation-free form
    let big = 0.5 * ((3.0 + 2.0 * r) + disc.sqrt());
    let rho = (4.0 + 6.0 * r) / big;
    admissible(0.5 * v.at(0, 0) * (1.0 + rho) / (3.0 - rho), rho)
}

/// AR(1), `T = 5` level shift: `rho = 2 V23 / V11 + 1`,
/// `sigma2 = V11 (1 + rho) / 2`.
pub fn invert_ar1_levelshift(v11: f64, v23: f64) -> Result<(f64, f64)> {
    if !(v11 > 0.0) {
        return Err(Error::InconsistentMoments(format!("V11 = {v11} must be positive")));
    }
    let rho = 2.0 * v23 / v11 + 1.0;
    admissible(0.5 * v11 * (1.0 + rho), rho)
}

/// Roots of `phi^2 - R phi + 1 = 0`, the one with `|phi| <= 1` first.
/// `|R|` slightly below 2 (by at most `1e-8` relative) is treated as 2.
pub fn arma_quadratic_roots(r: f64) -> Result<(f64, f64)> {
    let disc = r * r - 4.0;
    let disc = if disc < 0.0 {
        if r.abs() >= 2.0 * (1.0 - 1e-8) {
            0.0
        } else {
            return Err(Error::InconsistentMoments(format!("|R| = {} is below 2", r.abs())));
        }
    } else {
        disc
    };
    let big = 0.5 * (r + r.signum() * disc.sqrt());
    Ok((1.0 / big, big))
}

/// ARMA(1,1), `T = 4`, first differences:
/// `rho = 1 + V13 / (V11/2 + V12)`, then `phi sigma2 = rho V12 - V13` and
/// `(1 + phi^2) sigma2 = (1 + rho)/2 V11 + (1 - rho)(rho V12 - V13)`.
pub fn invert_arma11(v: &DiffCovariance) -> Result<(f64, f64, f64)> {
    check_shape(v, 3, "ARMA(1,1) inversion")?;
    let (v11, v12, v13) = (v.at(0, 0), v.at(0, 1), v.at(0, 2));
    let denom = 0.5 * v11 + v12;
    if denom.abs() <= 1e-12 * v11 {
        return Err(Error::InconsistentMoments(
            "V11/2 + V12 vanishes (rho + phi = 0)".into(),
        ));
    }
    let rho = 1.0 + v13 / denom;
    let s2 = rho * v12 - v13;
    let sys1 = 0.5 * (1.0 + rho) * v11 + (1.0 - rho) * s2;
    let (sigma2, phi) = if s2.abs() <= 1e-12 * v11 {
        (sys1, 0.0)
    } else {
        let (phi, _) = arma_quadratic_roots(sys1 / s2)?;
        (s2 / phi, phi)
    };
    let (sigma2, rho) = admissible(sigma2, rho)?;
    Ok((sigma2, rho, phi))
}

/// Outcome of comparing two AR(1) parameter pairs through the `T = 4`
/// symmetric-difference design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    pub max_discrepancy: f64,
}

/// Tolerance for declaring two covariance matrices equal.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

/// Whether `(sigma2, rho)` pairs give the same `V` for `(Delta y_2, Delta y_4)`.
pub fn verify_nonidentification_t4(theta1: (f64, f64), theta2: (f64, f64)) -> Result<EquivalenceReport> {
    let m = symmetric_difference_t4();
    let v1 = diff_covariance(&m, theta1.0, theta1.1, None, CovarianceFamily::Ar1)?;
    let v2 = diff_covariance(&m, theta2.0, theta2.1, None, CovarianceFamily::Ar1)?;
    let max_discrepancy = (v1.v - v2.v).abs().max();
    Ok(EquivalenceReport {
        equivalent: max_discrepancy <= EQUIVALENCE_TOL,
        max_discrepancy,
    })
}
