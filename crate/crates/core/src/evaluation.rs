//! Point-forecast accuracy metrics and forecast/backtest tests: MSE, MAE,
//! HMSE, Diebold–Mariano with the small-sample correction, Mincer–Zarnowitz,
//! Kupiec, Christoffersen and McNeil–Frey, plus the combined backtest report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{chi2_sf, t_cdf};
use crate::error::{Error, Result};
use crate::hybrid::ForecastRecord;
use crate::risk::{risk_series, HitSequence, RiskRow, RiskSource};

/// Significance level behind every verdict.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub hmse: f64,
}

/// MSE, MAE and HMSE of `forecasts` against `targets`; HMSE scales each
/// error by its target, so every target must be positive.
pub fn point_metrics(targets: &[f64], forecasts: &[f64]) -> Result<PointMetrics> {
    point_metrics_labeled(targets, forecasts, |i| format!("index {i}"))
}

fn point_metrics_labeled(targets: &[f64], forecasts: &[f64], label: impl Fn(usize) -> String) -> Result<PointMetrics> {
    if targets.len() != forecasts.len() {
        return Err(Error::LengthMismatch { left: targets.len(), right: forecasts.len() });
    }
    if targets.is_empty() {
        return Err(Error::InsufficientData("no forecasts to evaluate".into()));
    }
    let (mut se, mut ae, mut hse) = (0.0, 0.0, 0.0);
    for (i, (t, f)) in targets.iter().zip(forecasts).enumerate() {
        if *t <= 0.0 {
            return Err(Error::ZeroTarget { date: label(i) });
        }
        let e = t - f;
        se += e * e;
        ae += e.abs();
        hse += (e / t).powi(2);
    }
    let n = targets.len() as f64;
    Ok(PointMetrics { n: targets.len(), mse: se / n, mae: ae / n, hmse: hse / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Failed to reject the null.
    #[serde(rename = "F")]
    FailToReject,
    #[serde(rename = "R")]
    Reject,
}

impl Verdict {
    pub fn at(p_value: f64) -> Self {
        if p_value < SIGNIFICANCE {
            Verdict::Reject
        } else {
            Verdict::FailToReject
        }
    }

    pub fn letter(self) -> char {
        match self {
            Verdict::FailToReject => 'F',
            Verdict::Reject => 'R',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Reference distribution, e.g. `chi2(1)` or `t(1193)`.
    pub reference: String,
    pub verdict: Verdict,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, reference: String) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self { statistic, p_value, reference, verdict: Verdict::at(p_value) }
    }

    /// `p_value` with its verdict letter, e.g. `0.9258(F)`.
    pub fn display(&self) -> String {
        format!("{:.4}({})", self.p_value, self.verdict.letter())
    }
}

/// One-step Diebold–Mariano test on squared errors with the Harvey–
/// Leybourne–Newbold correction. The alternative is that model `b` has the
/// smaller loss; the p-value is the upper tail of `t(n-1)`.
pub fn dm_test(errors_a: &[f64], errors_b: &[f64]) -> Result<TestResult> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::LengthMismatch { left: errors_a.len(), right: errors_b.len() });
    }
    let n = errors_a.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!("Diebold–Mariano needs at least 10 pairs, got {n}")));
    }
    let d: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a * a - b * b).collect();
    let nf = n as f64;
    let reference = format!("t({})", n - 1);
    if d.iter().all(|v| *v == 0.0) {
        return Ok(TestResult::new(0.0, 0.5, reference));
    }
    let mean = d.iter().sum::<f64>() / nf;
    let gamma0 = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if gamma0 <= 0.0 {
        return Err(Error::DegenerateTest("loss differential has zero variance".into()));
    }
    let h = 1.0;
    let correction = ((nf + 1.0 - 2.0 * h + h * (h - 1.0) / nf) / nf).sqrt();
    let stat = mean / (gamma0 / nf).sqrt() * correction;
    Ok(TestResult::new(stat, 1.0 - t_cdf(stat, nf - 1.0), reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MincerZarnowitz {
    pub beta0: f64,
    pub beta1: f64,
    pub r_squared: f64,
}

/// OLS of `target_var` on a constant and `forecast_var`.
pub fn mincer_zarnowitz(target_var: &[f64], forecast_var: &[f64]) -> Result<MincerZarnowitz> {
    if target_var.len() != forecast_var.len() {
        return Err(Error::LengthMismatch { left: target_var.len(), right: forecast_var.len() });
    }
    let n = target_var.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("regression needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = forecast_var.iter().sum::<f64>() / nf;
    let my = target_var.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy, mut xx) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in forecast_var.iter().zip(target_var) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        xx += x * x;
    }
    if sxx <= 1e-14 * xx || sxx == 0.0 {
        return Err(Error::Rank("forecast variance is constant".into()));
    }
    let beta1 = sxy / sxx;
    let beta0 = my - beta1 * mx;
    let ssr: f64 = forecast_var.iter().zip(target_var).map(|(x, y)| (y - beta0 - beta1 * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(MincerZarnowitz { beta0, beta1, r_squared })
}

/// `x ln y` with `0 ln 0 = 0`.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn lr_uc(x: usize, n: usize, alpha: f64) -> f64 {
    let (xf, nf) = (x as f64, n as f64);
    let null = xlny(nf - xf, 1.0 - alpha) + xlny(xf, alpha);
    let alt = xlny(nf - xf, 1.0 - xf / nf) + xlny(xf, xf / nf);
    (-2.0 * (null - alt)).max(0.0)
}

/// Unconditional coverage likelihood ratio against `chi2(1)`.
pub fn kupiec_test(hits: &HitSequence) -> Result<TestResult> {
    if hits.is_empty() {
        return Err(Error::InsufficientData("empty hit sequence".into()));
    }
    let lr = lr_uc(hits.count(), hits.len(), hits.alpha);
    Ok(TestResult::new(lr, chi2_sf(lr, 1.0), "chi2(1)".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChristoffersenTest {
    pub lr_uc: f64,
    pub lr_ind: f64,
    /// Independence alone against `chi2(1)`.
    pub p_independence: f64,
    /// Conditional coverage `LR_uc + LR_ind` against `chi2(2)`.
    pub conditional: TestResult,
}

/// First-order Markov test of hit independence combined with coverage.
pub fn christoffersen_test(hits: &HitSequence) -> Result<ChristoffersenTest> {
    let n = hits.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("Christoffersen needs at least 2 days, got {n}")));
    }
    let mut c = [[0.0f64; 2]; 2];
    for w in hits.hits.windows(2) {
        c[usize::from(w[0])][usize::from(w[1])] += 1.0;
    }
    let (n00, n01, n10, n11) = (c[0][0], c[0][1], c[1][0], c[1][1]);
    let p01 = if n00 + n01 > 0.0 { n01 / (n00 + n01) } else { 0.0 };
    let p11 = if n10 + n11 > 0.0 { n11 / (n10 + n11) } else { 0.0 };
    let p = (n01 + n11) / (n00 + n01 + n10 + n11);
    let restricted = xlny(n00 + n10, 1.0 - p) + xlny(n01 + n11, p);
    let markov = xlny(n00, 1.0 - p01) + xlny(n01, p01) + xlny(n10, 1.0 - p11) + xlny(n11, p11);
    let lr_ind = (-2.0 * (restricted - markov)).max(0.0);
    let lr_uc = lr_uc(hits.count(), n, hits.alpha);
    let lr_cc = lr_uc + lr_ind;
    Ok(ChristoffersenTest {
        lr_uc,
        lr_ind,
        p_independence: chi2_sf(lr_ind, 1.0),
        conditional: TestResult::new(lr_cc, chi2_sf(lr_cc, 2.0), "chi2(2)".into()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNeilFrey {
    pub exceedances: usize,
    pub mean_residual: f64,
    /// Two-sided; `exact_one_sided` tests for residuals below zero.
    pub exact: TestResult,
    pub exact_one_sided: f64,
    pub bootstrap: TestResult,
    pub bootstrap_one_sided: f64,
}

/// Mean, standard deviation and t-statistic, with a zero spread mapped to
/// `0` or `±inf` by the sign of the mean.
fn t_stat(x: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let t = if sd > 0.0 {
        mean / (sd / m.sqrt())
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    (mean, t)
}

/// Tests that ES exceedance residuals `(r - ES) / sigma` on hit days have
/// zero mean, against `t(m-1)` and a studentized bootstrap of the centred
/// residuals. Hit days with a zero volatility forecast carry no residual
/// and are skipped.
pub fn mcneil_frey_test(
    returns: &[f64],
    sigma: &[f64],
    es: &[f64],
    hits: &HitSequence,
    options: BootstrapOptions,
) -> Result<McNeilFrey> {
    let n = hits.len();
    for len in [returns.len(), sigma.len(), es.len()] {
        if len != n {
            return Err(Error::Misaligned(format!("{len} values against {n} hit flags")));
        }
    }
    let x: Vec<f64> =
        (0..n).filter(|&i| hits.hits[i] && sigma[i] > 0.0).map(|i| (returns[i] - es[i]) / sigma[i]).collect();
    let m = x.len();
    if m < 2 {
        return Err(Error::InsufficientExceedances { found: m, needed: 2 });
    }
    let (mean, t) = t_stat(&x);
    let dof = m as f64 - 1.0;
    let lower = t_cdf(t, dof);
    let exact = TestResult::new(t, 2.0 * lower.min(1.0 - lower), format!("t({})", m - 1));

    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let b = options.resamples.max(1);
    let stats: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(k as u64);
            let sample: Vec<f64> = (0..m).map(|_| centred[rng.random_range(0..m)]).collect();
            t_stat(&sample).1
        })
        .collect();
    let frac = |pred: &dyn Fn(f64) -> bool| stats.iter().filter(|s| pred(**s)).count() as f64 / b as f64;
    let two = frac(&|s| s.abs() >= t.abs());
    let one = frac(&|s| s <= t);
    Ok(McNeilFrey {
        exceedances: m,
        mean_residual: mean,
        exact,
        exact_one_sided: lower,
        bootstrap: TestResult::new(t, two, format!("bootstrap({b})")),
        bootstrap_one_sided: one,
    })
}

/// Percentage truncated to two decimals, as in `59/1194 -> 4.94%`.
pub fn hit_ratio_display(hits: usize, n: usize) -> String {
    let hundredths = (hits as f64 / n as f64 * 10_000.0 + 1e-9).floor() as u64;
    format!("{}.{:02}%", hundredths / 100, hundredths % 100)
}

/// Expected exceedances `alpha n` with both integer readings, as in
/// `59.7 [floor 59 / nearest 60]`.
pub fn expected_count_display(alpha: f64, n: usize) -> String {
    let e = alpha * n as f64;
    let shown = (e * 1e6).round() / 1e6;
    format!("{shown} [floor {} / nearest {}]", (e + 1e-9).floor(), e.round())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarBacktest {
    pub alpha: f64,
    pub exceedances: usize,
    pub expected: f64,
    pub expected_display: String,
    pub hit_ratio: f64,
    pub hit_ratio_display: String,
    pub kupiec: TestResult,
    pub christoffersen: ChristoffersenTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsBacktest {
    pub alpha: f64,
    pub mcneil_frey: Option<McNeilFrey>,
    /// Why the test could not run, when it could not.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub source: RiskSource,
    pub metrics: PointMetrics,
    pub mincer_zarnowitz: MincerZarnowitz,
    pub var: Vec<VarBacktest>,
    pub es: EsBacktest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub forecasts: usize,
    pub first_date: String,
    pub last_date: String,
    pub models: Vec<ModelReport>,
    /// GARCH errors against hybrid errors; rejection favours the hybrid.
    pub diebold_mariano: TestResult,
}

impl BacktestReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn model(&self, source: RiskSource) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.source == source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestOptions {
    pub alphas: Vec<f64>,
    pub es_alpha: f64,
    pub bootstrap: BootstrapOptions,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self { alphas: vec![0.05, 0.01], es_alpha: 0.05, bootstrap: BootstrapOptions::default() }
    }
}

/// Risk rows for one source, one entry per alpha in `alphas` order.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    pub source: RiskSource,
    pub by_alpha: Vec<Vec<RiskRow>>,
}

/// Evaluates the GARCH and hybrid columns of `records` against the GKYZ
/// targets and the realized returns on the same dates.
pub fn backtest(
    records: &[ForecastRecord],
    realized: &[f64],
    options: &BacktestOptions,
) -> Result<(BacktestReport, Vec<RiskTable>)> {
    if records.len() != realized.len() {
        return Err(Error::Misaligned(format!(
            "{} forecasts against {} realized returns",
            records.len(),
            realized.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::InsufficientData("no forecasts to backtest".into()));
    }
    let mut alphas = options.alphas.clone();
    if !alphas.contains(&options.es_alpha) {
        alphas.push(options.es_alpha);
    }
    let dates: Vec<_> = records.iter().map(|r| r.date).collect();
    let target: Vec<f64> = records.iter().map(|r| r.sigma_gkyz).collect();
    let r_f: Vec<f64> = records.iter().map(|r| r.r_f).collect();
    let dists: Vec<_> = records.iter().map(|r| r.dist).collect();
    let garch: Vec<f64> = records.iter().map(|r| r.sigma_garch).collect();
    let hybrid: Vec<f64> = records.iter().map(|r| r.sigma_hybrid).collect();
    let label = |i: usize| dates[i].to_string();

    let mut models = Vec::new();
    let mut tables = Vec::new();
    for (source, sigma) in [(RiskSource::Garch, &garch), (RiskSource::Hybrid, &hybrid)] {
        let metrics = point_metrics_labeled(&target, sigma, label)?;
        let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
        let mincer_zarnowitz = mincer_zarnowitz(&sq(&target), &sq(sigma))?;
        let mut var = Vec::new();
        let mut by_alpha = Vec::new();
        let mut es = None;
        for &alpha in &alphas {
            let rows = risk_series(&dates, realized, &r_f, sigma, &dists, alpha)?;
            let hits = HitSequence::new(rows.iter().map(|r| r.hit).collect(), alpha)?;
            if alpha == options.es_alpha {
                let es_values: Vec<f64> = rows.iter().map(|r| r.es).collect();
                es = Some(match mcneil_frey_test(realized, sigma, &es_values, &hits, options.bootstrap) {
                    Ok(t) => EsBacktest { alpha, mcneil_frey: Some(t), note: None },
                    Err(e @ Error::InsufficientExceedances { .. }) => {
                        EsBacktest { alpha, mcneil_frey: None, note: Some(e.to_string()) }
                    }
                    Err(e) => return Err(e),
                });
            }
            if options.alphas.contains(&alpha) {
                let x = hits.count();
                let n = hits.len();
                var.push(VarBacktest {
                    alpha,
                    exceedances: x,
                    expected: alpha * n as f64,
                    expected_display: expected_count_display(alpha, n),
                    hit_ratio: hits.ratio(),
                    hit_ratio_display: hit_ratio_display(x, n),
                    kupiec: kupiec_test(&hits)?,
                    christoffersen: christoffersen_test(&hits)?,
                });
                by_alpha.push(rows);
            }
        }
        models.push(ModelReport {
            source,
            metrics,
            mincer_zarnowitz,
            var,
            es: es.expect("es alpha is always evaluated"),
        });
        tables.push(RiskTable { source, by_alpha });
    }
    let err = |s: &[f64]| target.iter().zip(s).map(|(t, f)| t - f).collect::<Vec<_>>();
    let report = BacktestReport {
        forecasts: records.len(),
        first_date: dates[0].to_string(),
        last_date: dates[dates.len() - 1].to_string(),
        models,
        diebold_mariano: dm_test(&err(&garch), &err(&hybrid))?,
    };
    Ok((report, tables))
}
