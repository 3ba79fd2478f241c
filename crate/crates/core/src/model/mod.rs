//! Panel data, parameter types and the Gaussian panel likelihood.

mod covariance;
mod likelihood;
mod simulate;

pub use covariance::{
    ar1_covariance, arma11_covariance, cholesky_lower, covariance, covariance_derivatives,
    CovarianceDerivatives,
};
pub use likelihood::{
    loglik, loglik_ar1_closed_form, loglik_and_score_fast, score, score_trace_identity, AtomCache,
    ThetaGradient, UnitStats, LN_2PI,
};
pub use simulate::{simulate_unit, simulate_unit_with_next};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error covariance structure shared by all units in a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceFamily {
    Ar1,
    Arma11,
}

impl CovarianceFamily {
    /// Number of variance parameters in `delta`.
    pub fn delta_dim(self) -> usize {
        match self {
            CovarianceFamily::Ar1 => 2,
            CovarianceFamily::Arma11 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CovarianceFamily::Ar1 => "ar1",
            CovarianceFamily::Arma11 => "arma11",
        }
    }
}

/// Which regressors enter the mean of each unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    /// Mean `a` (the HIVD model).
    InterceptOnly,
    /// Mean `a + b x2_t` (the HIVDX model).
    InterceptPlusX2,
}

impl CovariateMode {
    /// Number of mean coefficients.
    pub fn d_beta(self) -> usize {
        match self {
            CovariateMode::InterceptOnly => 1,
            CovariateMode::InterceptPlusX2 => 2,
        }
    }
}

/// One support point of the heterogeneity distribution.
///
/// `b` is inert (and kept at zero) in intercept-only fits; `phi` is present
/// only for the ARMA(1,1) family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub a: f64,
    pub b: f64,
    pub sigma2: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
}

impl Theta {
    pub fn ar1(a: f64, b: f64, sigma2: f64, rho: f64) -> Self {
        Theta {
            a,
            b,
            sigma2,
            rho,
            phi: None,
        }
    }

    pub fn arma11(a: f64, b: f64, sigma2: f64, rho: f64, phi: f64) -> Self {
        Theta {
            a,
            b,
            sigma2,
            rho,
            phi: Some(phi),
        }
    }

    /// Moving-average coefficient, zero when absent.
    pub fn phi_or_zero(&self) -> f64 {
        self.phi.unwrap_or(0.0)
    }

    /// Checks the parameter domain for `family`.
    pub fn validate(&self, family: CovarianceFamily) -> Result<()> {
        for (param, v) in [("a", self.a), ("b", self.b)] {
            if !v.is_finite() {
                return Err(Error::Domain {
                    param,
                    value: v,
                    reason: "must be finite",
                });
            }
        }
        check_delta(family, self.sigma2, self.rho, self.phi)
    }
}

pub(crate) fn check_delta(
    family: CovarianceFamily,
    sigma2: f64,
    rho: f64,
    phi: Option<f64>,
) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain {
            param: "sigma2",
            value: sigma2,
            reason: "must be positive",
        });
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain {
            param: "rho",
            value: rho,
            reason: "must satisfy |rho| < 1",
        });
    }
    match (family, phi) {
        (CovarianceFamily::Arma11, None) => Err(Error::Domain {
            param: "phi",
            value: f64::NAN,
            reason: "ARMA(1,1) requires phi",
        }),
        (CovarianceFamily::Arma11, Some(p)) if !(p.abs() <= 1.0) => Err(Error::Domain {
            param: "phi",
            value: p,
            reason: "must satisfy |phi| <= 1",
        }),
        _ => Ok(()),
    }
}

/// Compact set for the variance parameters `(sigma2, rho[, phi])`.
/// Mean coefficients are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub sigma2_min: f64,
    pub sigma2_max: f64,
    pub rho_abs_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_abs_max: Option<f64>,
}

impl Default for ThetaBox {
    fn default() -> Self {
        ThetaBox {
            sigma2_min: 1e-4,
            sigma2_max: 25.0,
            rho_abs_max: 0.99,
            phi_abs_max: None,
        }
    }
}

impl ThetaBox {
    /// Default box, with `|phi| <= 1` added for ARMA(1,1).
    pub fn default_for(family: CovarianceFamily) -> Self {
        let mut b = ThetaBox::default();
        if family == CovarianceFamily::Arma11 {
            b.phi_abs_max = Some(1.0);
        }
        b
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_min > 0.0 && self.sigma2_min < self.sigma2_max) {
            return Err(Error::Config(format!(
                "box requires 0 < sigma2_min < sigma2_max, got [{}, {}]",
                self.sigma2_min, self.sigma2_max
            )));
        }
        if !(self.rho_abs_max > 0.0 && self.rho_abs_max < 1.0) {
            return Err(Error::Config(format!(
                "box requires 0 < rho_abs_max < 1, got {}",
                self.rho_abs_max
            )));
        }
        if let Some(p) = self.phi_abs_max {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!(
                    "box requires 0 < phi_abs_max <= 1, got {p}"
                )));
            }
        }
        Ok(())
    }

    /// True when the variance parameters of `theta` lie in the box.
    pub fn contains(&self, theta: &Theta) -> bool {
        let phi_ok = match (self.phi_abs_max, theta.phi) {
            (Some(m), Some(p)) => p.abs() <= m,
            _ => true,
        };
        theta.sigma2 >= self.sigma2_min
            && theta.sigma2 <= self.sigma2_max
            && theta.rho.abs() <= self.rho_abs_max
            && phi_ok
    }
}

/// Outcome path of one cross-sectional unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelUnit {
    pub id: String,
    pub y: Vec<f64>,
    /// Exogenous covariate path, same length as `y` when present.
    pub x2: Option<Vec<f64>>,
    /// Covariate one period past the sample, used for prediction.
    pub x2_next: Option<f64>,
}

impl PanelUnit {
    pub fn new(id: impl Into<String>, y: Vec<f64>) -> Self {
        PanelUnit {
            id: id.into(),
            y,
            x2: None,
            x2_next: None,
        }
    }

    pub fn with_x2(id: impl Into<String>, y: Vec<f64>, x2: Vec<f64>) -> Self {
        PanelUnit {
            id: id.into(),
            y,
            x2: Some(x2),
            x2_next: None,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Covariate value at period `t` (zero-based); zero when absent.
    #[inline]
    pub fn x2_at(&self, t: usize) -> f64 {
        match &self.x2 {
            Some(x) => x[t],
            None => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::InvalidData(format!("unit {} has no observations", self.id)));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("unit {} has non-finite y", self.id)));
        }
        if let Some(x) = &self.x2 {
            if x.len() != self.y.len() {
                return Err(Error::InvalidData(format!(
                    "unit {}: x2 has length {} but y has length {}",
                    self.id,
                    x.len(),
                    self.y.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("unit {} has non-finite x2", self.id)));
            }
        }
        if let Some(v) = self.x2_next {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "unit {} has non-finite x2_next",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Copy of the unit without its last observation; the dropped covariate
    /// becomes `x2_next`. Returns the held-out outcome alongside.
    pub fn split_last(&self) -> Result<(PanelUnit, f64)> {
        if self.y.len() < 2 {
            return Err(Error::InsufficientData {
                unit: self.id.clone(),
                have: self.y.len(),
                need: 2,
            });
        }
        let t = self.y.len() - 1;
        let mut head = self.clone();
        head.y.truncate(t);
        if let Some(x) = &mut head.x2 {
            head.x2_next = Some(x[t]);
            x.truncate(t);
        }
        Ok((head, self.y[t]))
    }
}

/// Collection of units sharing a covariate mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub units: Vec<PanelUnit>,
    pub covariate_mode: CovariateMode,
}

impl PanelDataset {
    /// Validates every unit and the consistency of `x2` with `mode`.
    pub fn new(units: Vec<PanelUnit>, mode: CovariateMode) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::InvalidData("dataset has no units".into()));
        }
        for u in &units {
            u.validate()?;
            let has_x2 = u.x2.is_some();
            match (mode, has_x2) {
                (CovariateMode::InterceptOnly, true) => {
                    return Err(Error::InvalidData(format!(
                        "unit {} carries x2 in intercept-only mode",
                        u.id
                    )))
                }
                (CovariateMode::InterceptPlusX2, false) => {
                    return Err(Error::InvalidData(format!("unit {} lacks x2", u.id)))
                }
                _ => {}
            }
        }
        Ok(PanelDataset {
            units,
            covariate_mode: mode,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn max_t(&self) -> usize {
        self.units.iter().map(|u| u.len()).max().unwrap_or(0)
    }
}
