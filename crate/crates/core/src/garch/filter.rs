use serde::{Deserialize, Serialize};

use super::{Family, GarchParams, GarchSpec, MeanModel};
use crate::distributions::Prepared;
use crate::error::{Error, Result};
use crate::market_data::ReturnSeries;

/// Residuals and conditional variances over a sample, plus the one-step
/// variance for the day after the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub residuals: Vec<f64>,
    pub h: Vec<f64>,
    pub h_next: f64,
}

/// One-step-ahead return and volatility forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub r_f: f64,
    pub sigma_f: f64,
}

/// Seed variance for a window: its sample variance, or 1 for a constant window.
pub(crate) fn seed_variance(x: &[f64]) -> f64 {
    let v = sample_variance(x);
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

/// Population variance of a sample, used to seed the recursions.
pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Conditional mean residuals. The AR(1) lag before the first observation
/// is the sample mean.
pub(crate) fn residuals(spec: &GarchSpec, params: &GarchParams, r: &[f64]) -> Vec<f64> {
    match spec.mean_model {
        MeanModel::Constant => r.iter().map(|v| v - params.mu).collect(),
        MeanModel::Ar1 => {
            let mut prev = r.iter().sum::<f64>() / r.len().max(1) as f64;
            r.iter()
                .map(|v| {
                    let e = v - params.mu - params.phi * prev;
                    prev = *v;
                    e
                })
                .collect()
        }
    }
}

/// Family-specific recursion on a transformed state: `h` for GARCH/GJR,
/// `ln h` for EGARCH, `h^(delta/2)` for APARCH. Pre-sample shocks are set so
/// that their contribution equals the one implied by `h_init`.
pub(crate) struct Recursion<'a> {
    family: Family,
    params: &'a GarchParams,
    h_init: f64,
    /// `E|z|`, EGARCH only.
    abs_moment: f64,
}

impl<'a> Recursion<'a> {
    pub(crate) fn new(spec: &GarchSpec, params: &'a GarchParams, h_init: f64, dist: &Prepared) -> Self {
        let abs_moment = if spec.family == Family::Egarch { dist.abs_moment() } else { 0.0 };
        Self { family: spec.family, params, h_init, abs_moment }
    }

    pub(crate) fn initial_state(&self) -> f64 {
        self.to_state(self.h_init)
    }

    pub(crate) fn to_state(&self, h: f64) -> f64 {
        match self.family {
            Family::Garch | Family::Gjr => h,
            Family::Egarch => h.ln(),
            Family::Aparch => h.powf(0.5 * self.params.delta),
        }
    }

    pub(crate) fn to_variance(&self, s: f64) -> f64 {
        match self.family {
            Family::Garch | Family::Gjr => s,
            Family::Egarch => s.exp(),
            Family::Aparch => s.powf(2.0 / self.params.delta),
        }
    }

    /// State at time `t` given residuals and states for `0..t`.
    pub(crate) fn state_at(&self, t: usize, eps: &[f64], state: &[f64], h: &[f64]) -> f64 {
        let p = self.params;
        let mut s = p.alpha0;
        for (i, a) in p.alpha.iter().enumerate() {
            let lag = i + 1;
            let shock = if t >= lag {
                let e = eps[t - lag];
                match self.family {
                    Family::Garch => a * e * e,
                    Family::Gjr => {
                        let w = GarchParams::lag(&p.omega, i);
                        let ind = if e <= 0.0 { 1.0 } else { 0.0 };
                        (a + w * ind) * e * e
                    }
                    Family::Egarch => {
                        let z = e / h[t - lag].sqrt();
                        a * (p.theta * z + p.gamma * (z.abs() - self.abs_moment))
                    }
                    Family::Aparch => {
                        let g = GarchParams::lag(&p.asym, i);
                        a * (e.abs() - g * e).powf(p.delta)
                    }
                }
            } else {
                match self.family {
                    Family::Garch => a * self.h_init,
                    Family::Gjr => (a + 0.5 * GarchParams::lag(&p.omega, i)) * self.h_init,
                    Family::Egarch => 0.0,
                    Family::Aparch => a * self.h_init.powf(0.5 * p.delta),
                }
            };
            s += shock;
        }
        let init = self.initial_state();
        for (j, b) in p.beta.iter().enumerate() {
            let lag = j + 1;
            s += b * if t >= lag { state[t - lag] } else { init };
        }
        s
    }
}

fn overflow(returns: &ReturnSeries, t: usize, what: String) -> Error {
    let dates = returns.dates();
    let date = dates.get(t).or(dates.last()).copied().unwrap_or_default();
    Error::NumericOverflow { date, message: what }
}

/// Runs the variance recursion over `returns`, starting from `h_init`.
pub fn variance_filter(
    spec: &GarchSpec,
    params: &GarchParams,
    returns: &ReturnSeries,
    h_init: f64,
) -> Result<FilterOutput> {
    params.validate(spec)?;
    if !(h_init > 0.0 && h_init.is_finite()) {
        return Err(Error::Domain(format!("initial variance must be positive, got {h_init}")));
    }
    let dist = params.distribution(spec.distribution).prepare()?;
    filter_prepared(spec, params, returns, h_init, &dist)
}

pub(crate) fn filter_prepared(
    spec: &GarchSpec,
    params: &GarchParams,
    returns: &ReturnSeries,
    h_init: f64,
    dist: &Prepared,
) -> Result<FilterOutput> {
    let r = returns.values();
    let eps = residuals(spec, params, r);
    let rec = Recursion::new(spec, params, h_init, dist);
    let n = r.len();
    let mut state = Vec::with_capacity(n + 1);
    let mut h = Vec::with_capacity(n + 1);
    for t in 0..=n {
        let s = rec.state_at(t, &eps, &state, &h);
        let v = rec.to_variance(s);
        if !(v > 0.0 && v.is_finite()) {
            return Err(overflow(returns, t, format!("{} variance became {v}", spec.family)));
        }
        state.push(s);
        h.push(v);
    }
    let h_next = h.pop().expect("n + 1 entries");
    Ok(FilterOutput { residuals: eps, h, h_next })
}

pub(crate) fn log_likelihood_terms(eps: &[f64], h: &[f64], dist: &Prepared) -> f64 {
    eps.iter().zip(h).map(|(e, v)| dist.ln_pdf(e / v.sqrt()) - 0.5 * v.ln()).sum()
}

/// Gaussian-quasi or exact log-likelihood, `Σ ln f(ε/√h) − ½ ln h`, with the
/// recursion seeded at the sample variance of `returns` (1 if `returns` is constant).
pub fn log_likelihood(spec: &GarchSpec, params: &GarchParams, returns: &ReturnSeries) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::InsufficientData("empty return series".into()));
    }
    let h_init = seed_variance(returns.values());
    let out = variance_filter(spec, params, returns, h_init)?;
    let dist = params.distribution(spec.distribution).prepare()?;
    let ll = log_likelihood_terms(&out.residuals, &out.h, &dist);
    if !ll.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood is {ll}")));
    }
    Ok(ll)
}

impl Forecast {
    /// Caps `sigma_f` at `ceiling`. Forecasts are left unclamped by default.
    pub fn clamped(self, ceiling: f64) -> Self {
        Self { sigma_f: self.sigma_f.min(ceiling), ..self }
    }
}

/// One-step forecast for the day after `returns`, seeding the recursion at
/// the sample variance of `returns` (1 if `returns` is constant).
pub fn forecast_from_params(spec: &GarchSpec, params: &GarchParams, returns: &ReturnSeries) -> Result<Forecast> {
    if returns.is_empty() {
        return Err(Error::InsufficientData("empty return series".into()));
    }
    let h_init = seed_variance(returns.values());
    let out = variance_filter(spec, params, returns, h_init)?;
    let last = *returns.values().last().expect("non-empty");
    let r_f = match spec.mean_model {
        MeanModel::Constant => params.mu,
        MeanModel::Ar1 => params.mu + params.phi * last,
    };
    Ok(Forecast { r_f, sigma_f: out.h_next.sqrt() })
}
