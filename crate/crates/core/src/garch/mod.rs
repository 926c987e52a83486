//! GARCH-family conditional variance models: standard GARCH, GJR-GARCH,
//! EGARCH and APARCH, each with a constant or AR(1) conditional mean and a
//! normal, Student-t or skewed Student-t innovation law.

mod estimate;
mod filter;
pub mod optimize;
mod simulate;

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionKind, DistributionSpec};
use crate::error::{Error, Result};

pub use estimate::forecast_one_step;
pub use estimate::{fit, FitOptions, FitSummary, GarchFit, ParamTransform};
pub use filter::{forecast_from_params, log_likelihood, sample_variance, variance_filter, FilterOutput, Forecast};
pub use simulate::{simulate, Simulated};

/// Default estimation window length (two trading years).
pub const DEFAULT_GARCH_WINDOW: usize = 504;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Garch,
    Gjr,
    Egarch,
    Aparch,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "garch" | "sgarch" => Ok(Family::Garch),
            "gjr" | "gjrgarch" | "gjr-garch" => Ok(Family::Gjr),
            "egarch" => Ok(Family::Egarch),
            "aparch" => Ok(Family::Aparch),
            other => Err(Error::Domain(format!("unknown GARCH family '{other}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Garch => "GARCH",
            Family::Gjr => "GJR",
            Family::Egarch => "EGARCH",
            Family::Aparch => "APARCH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeanModel {
    Constant,
    Ar1,
}

impl std::str::FromStr for MeanModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" | "const" => Ok(MeanModel::Constant),
            "ar1" | "ar(1)" => Ok(MeanModel::Ar1),
            other => Err(Error::Domain(format!("unknown mean model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GarchSpec {
    pub family: Family,
    /// Number of lagged variance terms.
    pub p: usize,
    /// Number of lagged shock terms.
    pub q: usize,
    pub mean_model: MeanModel,
    /// Innovation family; its shape parameters live in [`GarchParams`].
    pub distribution: DistributionKind,
}

impl GarchSpec {
    pub fn new(family: Family, mean_model: MeanModel, distribution: DistributionKind) -> Self {
        Self { family, p: 1, q: 1, mean_model, distribution }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::Constraint(format!("q must be >= 1, got {}", self.q)));
        }
        Ok(())
    }
}

/// Model coefficients. Fields a family does not use stay empty or zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub mu: f64,
    /// AR(1) coefficient; zero for a constant mean.
    pub phi: f64,
    pub alpha0: f64,
    /// Shock coefficients `alpha_1..alpha_q`. For EGARCH `alpha_1` is fixed at 1.
    pub alpha: Vec<f64>,
    /// Variance coefficients `beta_1..beta_p`.
    pub beta: Vec<f64>,
    /// GJR asymmetry terms `omega_1..omega_q`.
    pub omega: Vec<f64>,
    /// EGARCH sign effect.
    pub theta: f64,
    /// EGARCH size effect.
    pub gamma: f64,
    /// APARCH asymmetry `gamma_1..gamma_q`.
    pub asym: Vec<f64>,
    /// APARCH power.
    pub delta: f64,
    pub nu: Option<f64>,
    pub xi: Option<f64>,
}

impl GarchParams {
    /// GARCH(1,1) with a zero constant mean and normal innovations.
    pub fn garch11(alpha0: f64, alpha1: f64, beta1: f64) -> Self {
        Self {
            mu: 0.0,
            phi: 0.0,
            alpha0,
            alpha: vec![alpha1],
            beta: vec![beta1],
            omega: vec![],
            theta: 0.0,
            gamma: 0.0,
            asym: vec![],
            delta: 2.0,
            nu: None,
            xi: None,
        }
    }

    pub fn distribution(&self, kind: DistributionKind) -> DistributionSpec {
        DistributionSpec { kind, nu: self.nu, xi: self.xi }
    }

    /// Shock coefficient `i` (0-based); GJR/APARCH vectors default to zero
    /// when shorter than `q`.
    fn lag(v: &[f64], i: usize) -> f64 {
        v.get(i).copied().unwrap_or(0.0)
    }

    pub fn validate(&self, spec: &GarchSpec) -> Result<()> {
        spec.validate()?;
        let bad = |m: String| Err(Error::Constraint(m));
        if self.alpha.len() != spec.q || self.beta.len() != spec.p {
            return bad(format!(
                "expected {} alpha and {} beta coefficients, got {} and {}",
                spec.q,
                spec.p,
                self.alpha.len(),
                self.beta.len()
            ));
        }
        let all = [self.mu, self.phi, self.alpha0, self.theta, self.gamma, self.delta];
        if all.iter().chain(&self.alpha).chain(&self.beta).chain(&self.omega).chain(&self.asym).any(|v| !v.is_finite())
        {
            return bad("non-finite coefficient".into());
        }
        if spec.mean_model == MeanModel::Ar1 && self.phi.abs() >= 1.0 {
            return bad(format!("AR(1) coefficient must satisfy |phi| < 1, got {}", self.phi));
        }
        if spec.mean_model == MeanModel::Constant && self.phi != 0.0 {
            return bad("constant-mean model must have phi = 0".into());
        }
        let sum_a: f64 = self.alpha.iter().sum();
        let sum_b: f64 = self.beta.iter().sum();
        match spec.family {
            Family::Garch => {
                if self.alpha0 <= 0.0 || self.alpha.iter().chain(&self.beta).any(|v| *v < 0.0) {
                    return bad("GARCH requires alpha0 > 0 and non-negative alpha, beta".into());
                }
                if sum_a + sum_b >= 1.0 {
                    return bad(format!("GARCH persistence {} must be < 1", sum_a + sum_b));
                }
            }
            Family::Gjr => {
                if self.alpha0 <= 0.0 || self.alpha.iter().chain(&self.beta).any(|v| *v < 0.0) {
                    return bad("GJR requires alpha0 > 0 and non-negative alpha, beta".into());
                }
                for i in 0..spec.q {
                    if self.alpha[i] + Self::lag(&self.omega, i) < 0.0 {
                        return bad(format!("GJR requires alpha_{0} + omega_{0} >= 0", i + 1));
                    }
                }
                let persistence = sum_a + sum_b + 0.5 * self.omega.iter().sum::<f64>();
                if persistence >= 1.0 {
                    return bad(format!("GJR persistence {persistence} must be < 1"));
                }
            }
            Family::Egarch => {
                if self.alpha[0] != 1.0 {
                    return bad("EGARCH fixes alpha_1 = 1".into());
                }
                let s: f64 = self.beta.iter().map(|b| b.abs()).sum();
                if s >= 1.0 {
                    return bad(format!("EGARCH requires sum |beta| < 1, got {s}"));
                }
            }
            Family::Aparch => {
                if self.alpha0 <= 0.0 || self.alpha.iter().chain(&self.beta).any(|v| *v < 0.0) {
                    return bad("APARCH requires alpha0 > 0 and non-negative alpha, beta".into());
                }
                if self.delta.is_nan() || self.delta <= 0.0 {
                    return bad(format!("APARCH requires delta > 0, got {}", self.delta));
                }
                if (0..spec.q).any(|i| Self::lag(&self.asym, i).abs() >= 1.0) {
                    return bad("APARCH requires -1 < gamma_i < 1".into());
                }
            }
        }
        self.distribution(spec.distribution).validate()
    }
}
