use serde::{Deserialize, Serialize};

use super::filter::{filter_prepared, log_likelihood_terms, sample_variance, Forecast};
use super::optimize::{bfgs, numeric_gradient, BfgsOptions};
use super::{Family, GarchParams, GarchSpec, MeanModel};
use crate::distributions::DistributionKind;
use crate::error::{Error, Result};
use crate::market_data::ReturnSeries;

const MARGIN: f64 = 1e-6;
const NU_MIN: f64 = 2.1;
const NU_MAX: f64 = 100.0;
const XI_MIN: f64 = 0.1;
const XI_MAX: f64 = 10.0;
const DELTA_MAX: f64 = 4.0;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn atanh_clamped(x: f64) -> f64 {
    x.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()
}

/// Weights summing to one from `n - 1` free logits (the last logit is 0).
fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = logits.to_vec();
    all.push(0.0);
    let m = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = all.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn inverse_softmax(w: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = w.iter().map(|v| v.max(1e-8)).collect();
    let last = w[w.len() - 1].ln();
    w[..w.len() - 1].iter().map(|v| v.ln() - last).collect()
}

/// Splits a total persistence `P < 1` across terms: returns `(s, logits)`.
fn encode_shares(terms: &[f64]) -> (f64, Vec<f64>) {
    let total: f64 = terms.iter().sum();
    let s = logit(total / (1.0 - MARGIN));
    let w: Vec<f64> = terms.iter().map(|t| t / total.max(1e-300)).collect();
    (s, inverse_softmax(&w))
}

fn decode_shares(s: f64, logits: &[f64]) -> Vec<f64> {
    let total = (1.0 - MARGIN) * logistic(s);
    softmax(logits).into_iter().map(|w| total * w).collect()
}

/// Bijection between an unconstrained vector and parameters satisfying the
/// family constraints.
///
/// Layout: `mu`, `phi` (AR(1) only), the family block, `nu` (t and skew-t),
/// `xi` (skew-t). Family blocks:
/// - GARCH: `ln alpha0`, persistence logit, `q + p - 1` share logits over
///   `alpha`, `beta`;
/// - GJR: `ln alpha0`, persistence logit, `2q + p - 1` share logits over
///   `alpha/2`, `(alpha + omega)/2`, `beta`;
/// - EGARCH: `alpha0`, `theta`, `gamma`, and `beta_j = (1 - m) tanh(u_j) / p`;
/// - APARCH: as GARCH, then `atanh gamma_i` and `logit(delta / 4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamTransform {
    spec: GarchSpec,
}

impl ParamTransform {
    pub fn new(spec: GarchSpec) -> Self {
        Self { spec }
    }

    fn share_terms(&self) -> usize {
        let (p, q) = (self.spec.p, self.spec.q);
        match self.spec.family {
            Family::Garch | Family::Aparch => q + p,
            Family::Gjr => 2 * q + p,
            Family::Egarch => 0,
        }
    }

    pub fn dim(&self) -> usize {
        let s = &self.spec;
        let mean = if s.mean_model == MeanModel::Ar1 { 2 } else { 1 };
        let family = match s.family {
            Family::Garch | Family::Gjr => 1 + self.share_terms(),
            Family::Egarch => 3 + s.p,
            Family::Aparch => 1 + self.share_terms() + s.q + 1,
        };
        let dist = match s.distribution {
            DistributionKind::Normal => 0,
            DistributionKind::StudentT => 1,
            DistributionKind::SkewStudentT => 2,
        };
        mean + family + dist
    }

    pub fn to_params(&self, x: &[f64]) -> GarchParams {
        let s = &self.spec;
        let (p, q) = (s.p, s.q);
        let mut it = x.iter().copied();
        let mut next = || it.next().expect("vector has dim() entries");
        let mut out = GarchParams::garch11(0.0, 0.0, 0.0);
        out.mu = next();
        if s.mean_model == MeanModel::Ar1 {
            out.phi = next().tanh();
        }
        match s.family {
            Family::Garch | Family::Gjr | Family::Aparch => {
                out.alpha0 = next().exp();
                let sp = next();
                let logits: Vec<f64> = (0..self.share_terms() - 1).map(|_| next()).collect();
                let shares = decode_shares(sp, &logits);
                if s.family == Family::Gjr {
                    out.alpha = shares[..q].iter().map(|v| 2.0 * v).collect();
                    out.omega = (0..q).map(|i| 2.0 * shares[q + i] - out.alpha[i]).collect();
                    out.beta = shares[2 * q..].to_vec();
                } else {
                    out.alpha = shares[..q].to_vec();
                    out.beta = shares[q..].to_vec();
                }
                if s.family == Family::Aparch {
                    out.asym = (0..q).map(|_| (1.0 - MARGIN) * next().tanh()).collect();
                    out.delta = DELTA_MAX * logistic(next());
                }
            }
            Family::Egarch => {
                out.alpha0 = next();
                out.alpha = vec![1.0; q];
                out.theta = next();
                out.gamma = next();
                out.beta = (0..p).map(|_| (1.0 - MARGIN) * next().tanh() / p as f64).collect();
            }
        }
        if s.distribution != DistributionKind::Normal {
            out.nu = Some(NU_MIN + (NU_MAX - NU_MIN) * logistic(next()));
        }
        if s.distribution == DistributionKind::SkewStudentT {
            let range = (XI_MAX / XI_MIN).ln();
            out.xi = Some((XI_MIN.ln() + range * logistic(next())).exp());
        }
        out
    }

    pub fn from_params(&self, params: &GarchParams) -> Vec<f64> {
        let s = &self.spec;
        let (p, q) = (s.p, s.q);
        let mut x = vec![params.mu];
        if s.mean_model == MeanModel::Ar1 {
            x.push(atanh_clamped(params.phi));
        }
        match s.family {
            Family::Garch | Family::Gjr | Family::Aparch => {
                x.push(params.alpha0.ln());
                let terms: Vec<f64> = if s.family == Family::Gjr {
                    let a = params.alpha.iter().map(|v| 0.5 * v);
                    let c = (0..q).map(|i| 0.5 * (params.alpha[i] + GarchParams::lag(&params.omega, i)));
                    a.chain(c).chain(params.beta.iter().copied()).collect()
                } else {
                    params.alpha.iter().chain(&params.beta).copied().collect()
                };
                let (sp, logits) = encode_shares(&terms);
                x.push(sp);
                x.extend(logits);
                if s.family == Family::Aparch {
                    x.extend((0..q).map(|i| atanh_clamped(GarchParams::lag(&params.asym, i) / (1.0 - MARGIN))));
                    x.push(logit(params.delta / DELTA_MAX));
                }
            }
            Family::Egarch => {
                x.push(params.alpha0);
                x.push(params.theta);
                x.push(params.gamma);
                x.extend((0..p).map(|j| atanh_clamped(params.beta[j] * p as f64 / (1.0 - MARGIN))));
            }
        }
        if s.distribution != DistributionKind::Normal {
            let nu = params.nu.unwrap_or(8.0);
            x.push(logit((nu - NU_MIN) / (NU_MAX - NU_MIN)));
        }
        if s.distribution == DistributionKind::SkewStudentT {
            let xi = params.xi.unwrap_or(1.0);
            x.push(logit((xi.ln() - XI_MIN.ln()) / (XI_MAX / XI_MIN).ln()));
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Minimum sample length.
    pub min_obs: usize,
    pub max_iter: usize,
    /// Gradient tolerance for the optimizer, in log-likelihood units.
    pub gtol: f64,
    /// Stop when an iteration improves the log-likelihood by less than this.
    pub ftol: f64,
    /// A fit is reported as converged when the largest gradient component
    /// on the transformed scale is below this.
    pub converge_tol: f64,
    /// Initial variance; the sample variance of the window when absent.
    pub h_init: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { min_obs: 100, max_iter: 500, gtol: 1e-4, ftol: 1e-8, converge_tol: 1e-3, h_init: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchFit {
    pub spec: GarchSpec,
    pub params: GarchParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub h_series: Vec<f64>,
    pub standardized_residuals: Vec<f64>,
    pub h_init: f64,
    /// Variance for the day after the sample.
    pub h_next: f64,
    pub iterations: usize,
    /// Largest log-likelihood gradient component at the solution.
    pub max_gradient: f64,
}

/// The JSON view of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub spec: GarchSpec,
    pub params: GarchParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub iterations: usize,
    pub max_gradient: f64,
}

impl GarchFit {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            spec: self.spec,
            params: self.params.clone(),
            log_likelihood: self.log_likelihood,
            converged: self.converged,
            n_obs: self.h_series.len(),
            iterations: self.iterations,
            max_gradient: self.max_gradient,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

/// Negative log-likelihood on the transformed scale; infeasible points map
/// to `+inf`.
pub(crate) fn objective<'a>(
    transform: &'a ParamTransform,
    returns: &'a ReturnSeries,
    h_init: f64,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |x: &[f64]| {
        let params = transform.to_params(x);
        if params.validate(&transform.spec).is_err() {
            return f64::INFINITY;
        }
        let Ok(dist) = params.distribution(transform.spec.distribution).prepare() else {
            return f64::INFINITY;
        };
        match filter_prepared(&transform.spec, &params, returns, h_init, &dist) {
            Ok(out) => {
                let ll = log_likelihood_terms(&out.residuals, &out.h, &dist);
                if ll.is_finite() {
                    -ll
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    }
}

fn split(total: f64, n: usize) -> Vec<f64> {
    vec![total / n as f64; n]
}

fn starting_points(spec: &GarchSpec, r: &[f64]) -> Vec<GarchParams> {
    let v = sample_variance(r).max(1e-12);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let (p, q) = (spec.p, spec.q);
    let shapes = [(8.0, 1.0), (5.0, 0.9), (15.0, 1.1)];
    let mut out = Vec::with_capacity(3);
    for k in 0..3 {
        let mut g = GarchParams::garch11(0.0, 0.0, 0.0);
        g.mu = mean;
        let (a, b) = [(0.05, 0.90), (0.10, 0.80), (0.20, 0.50)][k];
        match spec.family {
            Family::Garch => {
                g.alpha = split(a, q);
                g.beta = split(b, p);
                g.alpha0 = v * (1.0 - a - if p > 0 { b } else { 0.0 });
            }
            Family::Gjr => {
                let (a, w, b) = [(0.03, 0.05, 0.90), (0.05, 0.10, 0.80), (0.10, 0.0, 0.60)][k];
                g.alpha = split(a, q);
                g.omega = split(w, q);
                g.beta = split(b, p);
                g.alpha0 = v * (1.0 - a - 0.5 * w - if p > 0 { b } else { 0.0 });
            }
            Family::Egarch => {
                let b = [0.95, 0.90, 0.70][k];
                g.alpha = vec![1.0; q];
                g.theta = [-0.05, -0.1, 0.0][k];
                g.gamma = [0.1, 0.2, 0.3][k];
                g.beta = split(b, p);
                g.alpha0 = v.ln() * (1.0 - if p > 0 { b } else { 0.0 });
            }
            Family::Aparch => {
                let delta = [1.5, 2.0, 1.2][k];
                g.alpha = split(a, q);
                g.beta = split(b, p);
                g.asym = vec![[0.1, 0.3, 0.0][k]; q];
                g.delta = delta;
                g.alpha0 = v.powf(0.5 * delta) * (1.0 - a - if p > 0 { b } else { 0.0 });
            }
        }
        if spec.distribution != DistributionKind::Normal {
            g.nu = Some(shapes[k].0);
        }
        if spec.distribution == DistributionKind::SkewStudentT {
            g.xi = Some(shapes[k].1);
        }
        out.push(g);
    }
    out
}

/// Maximum-likelihood fit from three fixed starting points; the best
/// optimum is kept.
pub fn fit(spec: &GarchSpec, returns: &ReturnSeries, options: &FitOptions) -> Result<GarchFit> {
    spec.validate()?;
    if returns.len() < options.min_obs.max(2) {
        return Err(Error::InsufficientData(format!(
            "GARCH fit needs at least {} returns, got {}",
            options.min_obs.max(2),
            returns.len()
        )));
    }
    let r = returns.values();
    let h_init = options.h_init.unwrap_or_else(|| sample_variance(r));
    if !(h_init > 0.0 && h_init.is_finite()) {
        return Err(Error::DegenerateScale(format!("initial variance {h_init} is not positive")));
    }
    let transform = ParamTransform::new(*spec);
    let f = objective(&transform, returns, h_init);
    let bopts = BfgsOptions { max_iter: options.max_iter, gtol: options.gtol, ftol: options.ftol, step: 1e-6 };

    let mut best: Option<super::optimize::BfgsResult> = None;
    let mut failures = Vec::new();
    for (k, start) in starting_points(spec, r).iter().enumerate() {
        let x0 = transform.from_params(start);
        match bfgs(&f, &x0, &bopts) {
            Some(res) => {
                if best.as_ref().is_none_or(|b| res.f < b.f) {
                    best = Some(res);
                }
            }
            None => failures.push(format!("start {}: infeasible initial point", k + 1)),
        }
    }
    let Some(best) = best else {
        return Err(Error::NonConvergence(format!(
            "{} fit failed from every start ({})",
            spec.family,
            failures.join("; ")
        )));
    };

    let params = transform.to_params(&best.x);
    let dist = params.distribution(spec.distribution).prepare()?;
    let out = filter_prepared(spec, &params, returns, h_init, &dist)?;
    let log_likelihood = log_likelihood_terms(&out.residuals, &out.h, &dist);
    let grad = numeric_gradient(&f, &best.x, best.f, 1e-6);
    let max_gradient = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let standardized_residuals = out.residuals.iter().zip(&out.h).map(|(e, h)| e / h.sqrt()).collect();
    Ok(GarchFit {
        spec: *spec,
        params,
        log_likelihood,
        converged: max_gradient < options.converge_tol,
        h_series: out.h,
        standardized_residuals,
        h_init,
        h_next: out.h_next,
        iterations: best.iterations,
        max_gradient,
    })
}

/// One-step forecast for the day after `returns`, which should be the
/// window the fit was estimated on.
pub fn forecast_one_step(fit: &GarchFit, returns: &ReturnSeries) -> Result<Forecast> {
    if returns.is_empty() {
        return Err(Error::InsufficientData("empty return series".into()));
    }
    let dist = fit.params.distribution(fit.spec.distribution).prepare()?;
    let out = filter_prepared(&fit.spec, &fit.params, returns, fit.h_init, &dist)?;
    let last = *returns.values().last().expect("non-empty");
    let r_f = match fit.spec.mean_model {
        MeanModel::Constant => fit.params.mu,
        MeanModel::Ar1 => fit.params.mu + fit.params.phi * last,
    };
    Ok(Forecast { r_f, sigma_f: out.h_next.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::simulate;

    fn all_specs() -> Vec<GarchSpec> {
        let mut v = Vec::new();
        for fam in [Family::Garch, Family::Gjr, Family::Egarch, Family::Aparch] {
            for mean in [MeanModel::Constant, MeanModel::Ar1] {
                for dist in [DistributionKind::Normal, DistributionKind::StudentT, DistributionKind::SkewStudentT] {
                    v.push(GarchSpec::new(fam, mean, dist));
                }
            }
        }
        v
    }

    #[test]
    fn transform_round_trips_starting_points() {
        let r: Vec<f64> = (0..200).map(|i| ((i * 37 % 17) as f64 - 8.0) / 4.0).collect();
        for spec in all_specs() {
            let t = ParamTransform::new(spec);
            for start in starting_points(&spec, &r) {
                let x = t.from_params(&start);
                assert_eq!(x.len(), t.dim(), "{spec:?}");
                let back = t.to_params(&x);
                back.validate(&spec).unwrap();
                let x2 = t.from_params(&back);
                for (a, b) in x.iter().zip(&x2) {
                    assert!((a - b).abs() < 1e-6, "{spec:?}: {x:?} vs {x2:?}");
                }
            }
        }
    }

    #[test]
    fn transformed_params_are_always_valid() {
        for spec in all_specs() {
            let t = ParamTransform::new(spec);
            for k in 0..20 {
                let x: Vec<f64> = (0..t.dim()).map(|i| ((k * 7 + i * 3) % 11) as f64 - 5.0).collect();
                t.to_params(&x).validate(&spec).unwrap_or_else(|e| panic!("{spec:?}: {e}"));
            }
        }
    }

    #[test]
    fn fit_rejects_short_samples() {
        let r = ReturnSeries::from_values(vec![0.1; 50], 100.0).unwrap();
        let spec = GarchSpec::new(Family::Garch, MeanModel::Constant, DistributionKind::Normal);
        assert!(matches!(fit(&spec, &r, &FitOptions::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fit_is_deterministic_and_at_a_stationary_point() {
        let spec = GarchSpec::new(Family::Garch, MeanModel::Constant, DistributionKind::Normal);
        let sim = simulate(&spec, &GarchParams::garch11(0.05, 0.1, 0.85), 1500, 11).unwrap();
        let a = fit(&spec, &sim.returns, &FitOptions::default()).unwrap();
        let b = fit(&spec, &sim.returns, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.converged, "max gradient {}", a.max_gradient);
        assert!(a.h_series.iter().all(|h| *h > 0.0));
        let json = a.to_json().unwrap();
        assert!(json.contains("log_likelihood"));
    }

    #[test]
    fn forecast_matches_fitted_recursion() {
        let spec = GarchSpec::new(Family::Gjr, MeanModel::Ar1, DistributionKind::StudentT);
        let mut truth = GarchParams::garch11(0.05, 0.05, 0.85);
        truth.omega = vec![0.1];
        truth.nu = Some(6.0);
        truth.phi = 0.1;
        let sim = simulate(&spec, &truth, 800, 3).unwrap();
        let f = fit(&spec, &sim.returns, &FitOptions::default()).unwrap();
        let fc = forecast_one_step(&f, &sim.returns).unwrap();
        assert!((fc.sigma_f - f.h_next.sqrt()).abs() < 1e-12);
        let last = *sim.returns.values().last().unwrap();
        assert!((fc.r_f - f.params.mu - f.params.phi * last).abs() < 1e-12);
    }
}
