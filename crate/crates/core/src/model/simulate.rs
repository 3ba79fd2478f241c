use rand::Rng;
use rand_distr::StandardNormal;

use super::{CovarianceFamily, PanelUnit, Theta};
use crate::error::{Error, Result};

fn family_of(theta: &Theta) -> CovarianceFamily {
    if theta.phi.is_some() {
        CovarianceFamily::Arma11
    } else {
        CovarianceFamily::Ar1
    }
}

/// Draws `len` stationary error terms `u_1..u_len`.
///
/// The pre-sample `u_0` comes from the stationary law; for ARMA(1,1) it is
/// drawn jointly with the pre-sample shock `e_0` (`Cov(u_0, e_0) = sigma`).
fn draw_errors<R: Rng + ?Sized>(theta: &Theta, len: usize, rng: &mut R) -> Vec<f64> {
    let sigma = theta.sigma2.sqrt();
    let rho = theta.rho;
    let phi = theta.phi_or_zero();
    let one_m = 1.0 - rho * rho;
    let mut e_prev: f64 = rng.sample(StandardNormal);
    let v: f64 = rng.sample(StandardNormal);
    let mut u_prev = if theta.phi.is_some() {
        sigma * e_prev + sigma * (rho + phi).abs() / one_m.sqrt() * v
    } else {
        sigma / one_m.sqrt() * v
    };
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let e: f64 = rng.sample(StandardNormal);
        let u = rho * u_prev + sigma * (e + phi * e_prev);
        out.push(u);
        u_prev = u;
        e_prev = e;
    }
    out
}

/// Simulates `y_t = a + b x2_t + u_t`, `t = 1..T`, with stationary AR(1)
/// errors, or ARMA(1,1) errors when `theta.phi` is set.
pub fn simulate_unit<R: Rng + ?Sized>(
    id: impl Into<String>,
    theta: &Theta,
    x2_path: Option<&[f64]>,
    t: usize,
    rng: &mut R,
) -> Result<PanelUnit> {
    theta.validate(family_of(theta))?;
    if t == 0 {
        return Err(Error::InvalidData("simulation needs T >= 1".into()));
    }
    if let Some(x) = x2_path {
        if x.len() != t {
            return Err(Error::InvalidData(format!(
                "x2 path has length {} but T = {t}",
                x.len()
            )));
        }
    }
    let u = draw_errors(theta, t, rng);
    let y = u
        .iter()
        .enumerate()
        .map(|(s, u)| theta.a + theta.b * x2_path.map_or(0.0, |x| x[s]) + u)
        .collect();
    Ok(PanelUnit {
        id: id.into(),
        y,
        x2: x2_path.map(|x| x.to_vec()),
        x2_next: None,
    })
}

/// Simulates `T + 1` periods and returns the first `T` as a unit (with
/// `x2_next` set when a covariate path is given) plus the extra outcome.
///
/// `x2_path`, when present, must have length `T + 1`.
pub fn simulate_unit_with_next<R: Rng + ?Sized>(
    id: impl Into<String>,
    theta: &Theta,
    x2_path: Option<&[f64]>,
    t: usize,
    rng: &mut R,
) -> Result<(PanelUnit, f64)> {
    let full = simulate_unit(id, theta, x2_path, t + 1, rng)?;
    full.split_last()
}
