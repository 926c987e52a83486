//! Rolling-window GARCH-GRU protocol: daily-refit GARCH forecasts, a feature
//! matrix of absolute returns, scaled GKYZ estimates and GARCH forecasts,
//! and a GRU retrained once per test block.

use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::garch::{fit, forecast_from_params, forecast_one_step, FitOptions, Forecast, GarchParams, GarchSpec};
use crate::gru::{GruConfig, Network, Standardizer, TrainingHistory, TrainingSet};
use crate::market_data::{ReturnSeries, VolatilityEstimateSeries, DATE_FORMAT};

/// Input features per row.
pub const FEATURE_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingPlan {
    pub garch_window: usize,
    pub gru_train_window: usize,
    pub gru_test_window: usize,
    /// Chronological tail of each training window held out for validation.
    pub validation_fraction: f64,
    pub step: usize,
}

impl Default for RollingPlan {
    fn default() -> Self {
        Self {
            garch_window: 504,
            gru_train_window: 1008,
            gru_test_window: 504,
            validation_fraction: 1.0 / 3.0,
            step: 504,
        }
    }
}

impl RollingPlan {
    pub fn validate(&self) -> Result<()> {
        if self.garch_window == 0 || self.gru_train_window == 0 || self.gru_test_window == 0 || self.step == 0 {
            return Err(Error::Domain("rolling windows and step must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Domain(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        let v = self.validation_size();
        if v == 0 || v >= self.gru_train_window {
            return Err(Error::Domain(format!(
                "validation size {v} leaves no room in a training window of {}",
                self.gru_train_window
            )));
        }
        Ok(())
    }

    /// `round(validation_fraction * gru_train_window)`.
    pub fn validation_size(&self) -> usize {
        (self.validation_fraction * self.gru_train_window as f64).round() as usize
    }

    /// `(start, test_len)` for each block over `rows` feature rows. A block
    /// trains on rows `start..start + train` and predicts the following
    /// `test_len` rows; blocks continue while any test row remains.
    pub fn blocks(&self, rows: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut s = 0;
        while s + self.gru_train_window < rows {
            let test = self.gru_test_window.min(rows - s - self.gru_train_window);
            out.push((s, test));
            s += self.step;
        }
        out
    }

    /// Number of hybrid forecasts a run over `returns` returns produces,
    /// assuming no feature rows are dropped.
    pub fn expected_forecasts(&self, returns: usize) -> usize {
        let rows = returns.saturating_sub(self.garch_window + 1);
        self.blocks(rows).iter().map(|b| b.1).sum()
    }
}

/// One-step GARCH forecasts for each date after the first window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchForecastSeries {
    /// Date being forecast.
    pub dates: Vec<NaiveDate>,
    pub r_f: Vec<f64>,
    pub sigma_f: Vec<f64>,
    /// True where the window's own fit failed and earlier parameters were used.
    pub carried: Vec<bool>,
    /// Innovation distribution of the parameters behind each forecast.
    pub dist: Vec<DistributionSpec>,
}

impl GarchForecastSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.carried.iter().filter(|c| **c).count()
    }

    pub fn get(&self, date: NaiveDate) -> Option<Forecast> {
        let i = self.dates.binary_search(&date).ok()?;
        Some(Forecast { r_f: self.r_f[i], sigma_f: self.sigma_f[i] })
    }

    pub fn distribution(&self, date: NaiveDate) -> Option<DistributionSpec> {
        self.dates.binary_search(&date).ok().map(|i| self.dist[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RollingOptions {
    pub fit: FitOptions,
    /// Cap on `sigma_f` as a multiple of the window's sample standard
    /// deviation. Off by default.
    pub sigma_clamp: Option<f64>,
}

/// For each return index `t >= window`, fits on returns `t-window..t` and
/// forecasts return `t`. Windows whose fit fails or does not converge reuse
/// the most recent successful parameters on their own data.
pub fn rolling_garch_forecasts(
    spec: &GarchSpec,
    returns: &ReturnSeries,
    window: usize,
    options: &RollingOptions,
) -> Result<GarchForecastSeries> {
    if window == 0 || returns.len() <= window {
        return Err(Error::InsufficientData(format!(
            "rolling GARCH needs more than {window} returns, got {}",
            returns.len()
        )));
    }
    let fit_opts = FitOptions { min_obs: options.fit.min_obs.min(window), ..options.fit };
    let fits: Vec<Option<(GarchParams, bool, Forecast)>> = (window..returns.len())
        .into_par_iter()
        .map(|t| {
            let w = returns.slice(t - window, t);
            let f = fit(spec, &w, &fit_opts).ok()?;
            let fc = forecast_one_step(&f, &w).ok()?;
            Some((f.params, f.converged, fc))
        })
        .collect();

    let n = fits.len();
    let mut out = GarchForecastSeries {
        dates: returns.dates()[window..].to_vec(),
        r_f: Vec::with_capacity(n),
        sigma_f: Vec::with_capacity(n),
        carried: Vec::with_capacity(n),
        dist: Vec::with_capacity(n),
    };
    let mut last_good: Option<GarchParams> = None;
    for (k, res) in fits.into_iter().enumerate() {
        let t = window + k;
        let w = returns.slice(t - window, t);
        let (fc, carried, dist) = match res {
            Some((params, true, fc)) => {
                let dist = params.distribution(spec.distribution);
                last_good = Some(params);
                (fc, false, dist)
            }
            other => {
                let fallback = last_good.clone().or_else(|| other.as_ref().map(|(p, _, _)| p.clone()));
                let Some(params) = fallback else {
                    return Err(Error::NonConvergence(format!(
                        "GARCH fit for {} failed with no earlier parameters to carry forward",
                        returns.dates()[t]
                    )));
                };
                (forecast_from_params(spec, &params, &w)?, true, params.distribution(spec.distribution))
            }
        };
        let fc = match options.sigma_clamp {
            Some(k) => fc.clamped(k * crate::garch::sample_variance(w.values()).sqrt()),
            None => fc,
        };
        out.r_f.push(fc.r_f);
        out.sigma_f.push(fc.sigma_f);
        out.carried.push(carried);
        out.dist.push(dist);
    }
    Ok(out)
}

/// Rows `t` of `(|r_t|, GKYZ_t, sigma^g_t)` with target `GKYZ_{t+1}`; the
/// GARCH forecast for `t + 1` rides along for the output records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub abs_return: Vec<f64>,
    pub gkyz: Vec<f64>,
    pub sigma_garch: Vec<f64>,
    pub target_dates: Vec<NaiveDate>,
    pub target: Vec<f64>,
    /// GARCH return and volatility forecasts for the target date.
    pub next_r_f: Vec<f64>,
    pub next_sigma_garch: Vec<f64>,
    pub next_dist: Vec<DistributionSpec>,
    /// Candidate rows dropped for a missing value.
    pub dropped: usize,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn row(&self, i: usize) -> [f64; FEATURE_COUNT] {
        [self.abs_return[i], self.gkyz[i], self.sigma_garch[i]]
    }
}

/// Joins returns, scaled GKYZ estimates and rolling GARCH forecasts by date.
/// Candidate rows are the return dates from the first GARCH forecast up to
/// the second-to-last return; rows missing any value are dropped.
pub fn build_features(
    returns: &ReturnSeries,
    gkyz_scaled: &VolatilityEstimateSeries,
    garch: &GarchForecastSeries,
) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix {
        dates: vec![],
        abs_return: vec![],
        gkyz: vec![],
        sigma_garch: vec![],
        target_dates: vec![],
        target: vec![],
        next_r_f: vec![],
        next_sigma_garch: vec![],
        next_dist: vec![],
        dropped: 0,
    };
    let (dates, r) = (returns.dates(), returns.values());
    let Some(first) = garch.dates.first().and_then(|d| returns.index_of(*d)) else {
        return Err(Error::InsufficientData("GARCH forecasts share no dates with the returns".into()));
    };
    for t in first..r.len().saturating_sub(1) {
        let (d, next) = (dates[t], dates[t + 1]);
        let row = (|| {
            let g = garch.get(d)?;
            let gn = garch.get(next)?;
            let dist = garch.distribution(next)?;
            Some((gkyz_scaled.get(d)?, g.sigma_f, gkyz_scaled.get(next)?, gn, dist))
        })();
        match row {
            Some((v, sg, target, gn, dist)) => {
                m.dates.push(d);
                m.abs_return.push(r[t].abs());
                m.gkyz.push(v);
                m.sigma_garch.push(sg);
                m.target_dates.push(next);
                m.target.push(target);
                m.next_r_f.push(gn.r_f);
                m.next_sigma_garch.push(gn.sigma_f);
                m.next_dist.push(dist);
            }
            None => m.dropped += 1,
        }
    }
    if m.is_empty() {
        return Err(Error::InsufficientData("no date has every feature present".into()));
    }
    Ok(m)
}

/// Hybrid and GARCH-only forecasts for one target date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub r_f: f64,
    pub sigma_garch: f64,
    pub sigma_hybrid: f64,
    pub sigma_gkyz: f64,
    /// Innovation distribution used to turn the volatility into VaR/ES.
    pub dist: DistributionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    /// First training row.
    pub start: usize,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub test_rows: usize,
    pub history: TrainingHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridRun {
    pub records: Vec<ForecastRecord>,
    pub blocks: Vec<BlockSummary>,
    /// Negative network outputs floored at zero.
    pub floored: usize,
    /// Set when a block failed; `records` then holds the completed blocks.
    pub aborted: Option<String>,
}

fn block_seed(seed: u64, block: usize) -> u64 {
    seed.wrapping_add((block as u64).wrapping_mul(0x9e3779b97f4a7c15))
}

/// Standardized windows ending at each row in `rows`, using the
/// `sequence_length` rows up to and including it.
fn windows(m: &FeatureMatrix, scaler: &Standardizer, rows: std::ops::Range<usize>, seq: usize) -> Result<TrainingSet> {
    let mut feats = Vec::with_capacity(rows.len() * seq * FEATURE_COUNT);
    let mut targets = Vec::with_capacity(rows.len());
    for t in rows {
        for k in t + 1 - seq..=t {
            feats.extend(scaler.apply(&m.row(k)));
        }
        targets.push(m.target[t]);
    }
    TrainingSet::new(seq, FEATURE_COUNT, feats, targets)
}

/// Trains a GRU per block and predicts each block's test rows.
pub fn run_hybrid(plan: &RollingPlan, config: &GruConfig, features: &FeatureMatrix) -> Result<HybridRun> {
    plan.validate()?;
    config.validate()?;
    if config.input_dim != FEATURE_COUNT {
        return Err(Error::Shape(format!("GRU input_dim must be {FEATURE_COUNT}, got {}", config.input_dim)));
    }
    let blocks = plan.blocks(features.len());
    if blocks.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} feature rows cannot hold a training window of {} plus a test row",
            features.len(),
            plan.gru_train_window
        )));
    }
    let seq = config.sequence_length;
    let n_val = plan.validation_size();
    let mut run = HybridRun { records: vec![], blocks: vec![], floored: 0, aborted: None };
    for (b, &(start, test_len)) in blocks.iter().enumerate() {
        let train_end = start + plan.gru_train_window;
        let val_start = train_end - n_val;
        // the first rows of the data lack a full look-back window
        let first = start.max(seq - 1);
        if first >= val_start {
            return Err(Error::InsufficientData(format!("block {} has no complete training windows", b + 1)));
        }
        let rows: Vec<Vec<f64>> = (first..val_start).map(|t| features.row(t).to_vec()).collect();
        let scaler = Standardizer::fit(&rows)?;
        let data = windows(features, &scaler, first..val_start, seq)?;
        let val = windows(features, &scaler, val_start..train_end, seq)?;
        let test = windows(features, &scaler, train_end..train_end + test_len, seq)?;
        let cfg = GruConfig { seed: block_seed(config.seed, b), ..config.clone() };
        let (net, history) = match Network::train(&cfg, &data, &val) {
            Ok(x) => x,
            Err(e) => {
                run.aborted = Some(format!("block {} starting at {}: {e}", b + 1, features.dates[start]));
                return Ok(run);
            }
        };
        let preds = net.predict(&cfg, &test)?;
        for (k, p) in preds.into_iter().enumerate() {
            let t = train_end + k;
            let sigma_hybrid = if p < 0.0 {
                run.floored += 1;
                0.0
            } else {
                p
            };
            run.records.push(ForecastRecord {
                date: features.target_dates[t],
                r_f: features.next_r_f[t],
                sigma_garch: features.next_sigma_garch[t],
                sigma_hybrid,
                sigma_gkyz: features.target[t],
                dist: features.next_dist[t],
            });
        }
        run.blocks.push(BlockSummary {
            start,
            train_windows: data.len(),
            validation_windows: val.len(),
            test_rows: test_len,
            history,
        });
    }
    Ok(run)
}

const FORECAST_HEADER: [&str; 7] = ["date", "r_f", "sigma_garch", "sigma_hybrid", "sigma_gkyz", "nu", "xi"];

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `date,r_f,sigma_garch,sigma_hybrid,sigma_gkyz,nu,xi`; the shape
/// columns are empty where the distribution has no such parameter.
pub fn write_forecasts_csv<W: Write>(writer: W, records: &[ForecastRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FORECAST_HEADER)?;
    for r in records {
        w.write_record([
            r.date.format(DATE_FORMAT).to_string(),
            r.r_f.to_string(),
            r.sigma_garch.to_string(),
            r.sigma_hybrid.to_string(),
            r.sigma_gkyz.to_string(),
            opt_field(r.dist.nu),
            opt_field(r.dist.xi),
        ])?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

pub fn read_forecasts_csv<R: Read>(reader: R) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    // the shape columns are optional; without them innovations are normal
    if header != FORECAST_HEADER[..5] && header != FORECAST_HEADER {
        return Err(Error::Schema(format!("expected header {}, got {}", FORECAST_HEADER.join(","), header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |m: String| Error::DataIntegrity { row, message: m };
        let date = NaiveDate::parse_from_str(rec[0].trim(), DATE_FORMAT).map_err(|e| bad(format!("date: {e}")))?;
        let num = |k: usize| -> Result<f64> {
            let v: f64 = rec[k].trim().parse().map_err(|e| bad(format!("{}: {e}", FORECAST_HEADER[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("{} is not finite", FORECAST_HEADER[k])))
            }
        };
        let shape = |k: usize| -> Result<Option<f64>> {
            match rec.get(k).map(str::trim) {
                None | Some("") => Ok(None),
                Some(_) => num(k).map(Some),
            }
        };
        let dist = match (shape(5)?, shape(6)?) {
            (None, None) => DistributionSpec::normal(),
            (Some(nu), None) => DistributionSpec::student_t(nu),
            (Some(nu), Some(xi)) => DistributionSpec::skew_t(nu, xi),
            (None, Some(_)) => return Err(bad("xi given without nu".into())),
        };
        dist.validate().map_err(|e| bad(e.to_string()))?;
        out.push(ForecastRecord {
            date,
            r_f: num(1)?,
            sigma_garch: num(2)?,
            sigma_hybrid: num(3)?,
            sigma_gkyz: num(4)?,
            dist,
        });
    }
    if out.windows(2).any(|w| w[1].date <= w[0].date) {
        return Err(Error::Schema("forecast dates must be strictly increasing".into()));
    }
    Ok(out)
}
