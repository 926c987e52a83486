//! OHLC ingestion, log returns, descriptive statistics and the
//! Garman–Klass estimator with the Yang–Zhang overnight-gap term (GKYZ).
//!
//! Consecutive rows are consecutive trading days; calendar gaps are not
//! adjusted for.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default multiplier applied to log returns (percent units).
pub const DEFAULT_RETURN_SCALE: f64 = 100.0;

/// Default number of daily terms averaged by the GKYZ estimator.
pub const DEFAULT_GKYZ_WINDOW: usize = 10;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcRecord {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcRecord {
    fn check(&self, row: usize) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::DataIntegrity {
                row,
                message: format!("non-positive or non-finite price on {}", self.date),
            });
        }
        if self.high < self.low {
            return Err(Error::DataIntegrity {
                row,
                message: format!("high {} below low {} on {}", self.high, self.low, self.date),
            });
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err(Error::DataIntegrity {
                row,
                message: format!("open/close outside [low, high] on {}", self.date),
            });
        }
        Ok(())
    }
}

/// Date-ordered OHLC records. Dates strictly increase and every record
/// satisfies `0 < low <= min(open, close) <= max(open, close) <= high`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    records: Vec<OhlcRecord>,
}

impl PriceSeries {
    /// Builds a series from records that are already in ascending date order.
    pub fn new(records: Vec<OhlcRecord>) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            rec.check(i + 1)?;
            if i > 0 {
                let prev = records[i - 1].date;
                if rec.date == prev {
                    return Err(Error::DuplicateDate { row: i + 1, date: rec.date });
                }
                if rec.date < prev {
                    return Err(Error::DataIntegrity {
                        row: i + 1,
                        message: format!("date {} precedes {}", rec.date, prev),
                    });
                }
            }
        }
        Ok(Self { records })
    }

    /// Builds a series from records in arbitrary order, sorting by date.
    /// `row` in any error refers to the 1-based position in the input.
    pub fn from_unsorted(records: Vec<OhlcRecord>) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            rec.check(i + 1)?;
        }
        let mut indexed: Vec<(usize, OhlcRecord)> = records.into_iter().enumerate().collect();
        indexed.sort_by_key(|(_, r)| r.date);
        for w in indexed.windows(2) {
            if w[0].1.date == w[1].1.date {
                let row = w[0].0.max(w[1].0) + 1;
                return Err(Error::DuplicateDate { row, date: w[1].1.date });
            }
        }
        Ok(Self { records: indexed.into_iter().map(|(_, r)| r).collect() })
    }

    pub fn records(&self) -> &[OhlcRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.close).collect()
    }

    /// Multiplies every price by `k`.
    pub fn rescaled(&self, k: f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| OhlcRecord {
                date: r.date,
                open: r.open * k,
                high: r.high * k,
                low: r.low * k,
                close: r.close * k,
            })
            .collect();
        Self::new(records)
    }
}

/// Column names used to locate the OHLC fields in a CSV header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { date: "date".into(), open: "open".into(), high: "high".into(), low: "low".into(), close: "close".into() }
    }
}

pub fn load_ohlc_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PriceSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_ohlc_csv(file, schema)
}

pub fn parse_ohlc_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let cols =
        [find(&schema.date)?, find(&schema.open)?, find(&schema.high)?, find(&schema.low)?, find(&schema.close)?];

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(cols[0]), DATE_FORMAT).map_err(|e| Error::DataIntegrity {
            row: row_no,
            message: format!("bad date '{}': {e}", field(cols[0])),
        })?;
        let price = |c: usize| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|e| Error::DataIntegrity { row: row_no, message: format!("bad price '{}': {e}", field(c)) })
        };
        records.push(OhlcRecord {
            date,
            open: price(cols[1])?,
            high: price(cols[2])?,
            low: price(cols[3])?,
            close: price(cols[4])?,
        });
    }
    PriceSeries::from_unsorted(records)
}

pub fn write_ohlc_csv<W: Write>(writer: W, prices: &PriceSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "open", "high", "low", "close"])?;
    for r in prices.records() {
        w.write_record([
            r.date.format(DATE_FORMAT).to_string(),
            format!("{}", r.open),
            format!("{}", r.high),
            format!("{}", r.low),
            format!("{}", r.close),
        ])?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

/// Close-to-close log returns multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    scale: f64,
}

impl ReturnSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>, scale: f64) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::LengthMismatch { left: dates.len(), right: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("return at {} is not finite", dates[i])));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Misaligned("return dates must strictly increase".into()));
        }
        Ok(Self { dates, values, scale })
    }

    /// Undated convenience constructor; dates are consecutive days from 2000-01-01.
    pub fn from_values(values: Vec<f64>, scale: f64) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates = (0..values.len()).map(|i| start + chrono::Days::new(i as u64)).collect();
        Self::new(dates, values, scale)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Contiguous sub-range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { dates: self.dates[start..end].to_vec(), values: self.values[start..end].to_vec(), scale: self.scale }
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

pub fn log_returns(prices: &PriceSeries, scale: f64) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 prices for returns, got {}", prices.len())));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!("return scale must be positive, got {scale}")));
    }
    let recs = prices.records();
    let values = recs.windows(2).map(|w| scale * (w[1].close / w[0].close).ln()).collect();
    let dates = recs[1..].iter().map(|r| r.date).collect();
    ReturnSeries::new(dates, values, scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// `|std / mean|`; absent when the mean is zero.
    pub cv: Option<f64>,
    pub min: f64,
    pub max: f64,
    /// Absent when the sample has zero variance.
    pub skewness: Option<f64>,
    /// Raw (non-excess) fourth standardized moment.
    pub kurtosis: Option<f64>,
}

pub fn descriptive_stats(returns: &ReturnSeries) -> Result<StatsSummary> {
    summarize(returns.values())
}

/// Moment summary of an arbitrary sample.
pub fn summarize(x: &[f64]) -> Result<StatsSummary> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 values, got {n}")));
    }
    let nf = n as f64;
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (x.iter().sum::<f64>() / nf).clamp(min, max);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let std = m2.sqrt();
    let cv = if mean != 0.0 { Some((std / mean).abs()) } else { None };
    let (skewness, kurtosis) = if m2 > 0.0 { (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2))) } else { (None, None) };
    Ok(StatsSummary { count: n, mean, std, cv, min, max, skewness, kurtosis })
}

/// Volatility estimates aligned to a date axis; entries without enough
/// history are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityEstimateSeries {
    dates: Vec<NaiveDate>,
    values: Vec<Option<f64>>,
    window_n: usize,
    scale_factor: f64,
}

impl VolatilityEstimateSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<Option<f64>>, window_n: usize) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::LengthMismatch { left: dates.len(), right: values.len() });
        }
        if let Some(i) = values.iter().position(|v| matches!(v, Some(s) if !s.is_finite() || *s < 0.0)) {
            return Err(Error::Domain(format!("volatility at {} must be finite and >= 0", dates[i])));
        }
        Ok(Self { dates, values, window_n, scale_factor: 1.0 })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn window_n(&self) -> usize {
        self.window_n
    }

    /// Cumulative multiplicative factor applied by [`scale_gkyz`].
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.dates.binary_search(&date).ok().and_then(|i| self.values[i])
    }
}

/// `2 ln 2 - 1`, the weight on the open-to-close term.
const GK_OC_WEIGHT: f64 = 2.0 * std::f64::consts::LN_2 - 1.0;

fn gkyz_daily_term(prev_close: f64, rec: &OhlcRecord) -> f64 {
    let gap = (rec.open / prev_close).ln();
    let range = (rec.high / rec.low).ln();
    let body = (rec.close / rec.open).ln();
    gap * gap + 0.5 * range * range - GK_OC_WEIGHT * body * body
}

/// Trailing-window GKYZ volatility, aligned to the price dates. The estimate
/// at record `i` averages the daily terms of records `i-n+1..=i`, so the
/// first `n` dates carry no estimate.
pub fn gkyz_volatility(prices: &PriceSeries, n: usize, scale: f64) -> Result<VolatilityEstimateSeries> {
    if n == 0 {
        return Err(Error::Domain("GKYZ window must be positive".into()));
    }
    if prices.len() < n + 1 {
        return Err(Error::InsufficientData(format!(
            "GKYZ window {n} needs at least {} prices, got {}",
            n + 1,
            prices.len()
        )));
    }
    let recs = prices.records();
    let terms: Vec<f64> = recs.windows(2).map(|w| gkyz_daily_term(w[0].close, &w[1])).collect();

    let mut values = vec![None; recs.len()];
    let mut acc: f64 = terms[..n - 1].iter().sum();
    for i in n..recs.len() {
        // terms[k] belongs to record k + 1
        acc += terms[i - 1];
        if i > n {
            acc -= terms[i - 1 - n];
        }
        // recompute exactly every so often to bound drift of the running sum
        if (i - n) % 256 == 255 {
            acc = terms[i - n..i].iter().sum();
        }
        let var = (acc / n as f64).max(0.0);
        values[i] = Some(scale * var.sqrt());
    }
    VolatilityEstimateSeries::new(prices.dates(), values, n)
}

/// Rescales GKYZ estimates by `a / b`, where `a` is the RMS of the first
/// `window_t` returns and `b` the RMS of the estimates present on those dates.
pub fn scale_gkyz(
    estimates: &VolatilityEstimateSeries,
    returns: &ReturnSeries,
    window_t: usize,
) -> Result<VolatilityEstimateSeries> {
    if window_t == 0 || window_t > returns.len() {
        return Err(Error::InsufficientData(format!("scaling window {window_t} must be in 1..={}", returns.len())));
    }
    let head = &returns.values()[..window_t];
    let a = (head.iter().map(|r| r * r).sum::<f64>() / window_t as f64).sqrt();

    let sigmas: Vec<f64> = returns.dates()[..window_t].iter().filter_map(|d| estimates.get(*d)).collect();
    if sigmas.is_empty() {
        return Err(Error::InsufficientData("no GKYZ estimates fall inside the scaling window".into()));
    }
    let b = (sigmas.iter().map(|s| s * s).sum::<f64>() / sigmas.len() as f64).sqrt();
    if b == 0.0 || !b.is_finite() {
        return Err(Error::DegenerateScale(format!("estimator RMS is {b}")));
    }
    let factor = a / b;
    let mut out = estimates.clone();
    for v in out.values.iter_mut().flatten() {
        *v *= factor;
    }
    out.scale_factor *= factor;
    Ok(out)
}

/// Writes a `date,value` CSV; absent values are written as empty fields.
pub fn write_series_csv<W: Write>(writer: W, dates: &[NaiveDate], values: &[Option<f64>]) -> Result<()> {
    if dates.len() != values.len() {
        return Err(Error::LengthMismatch { left: dates.len(), right: values.len() });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "value"])?;
    for (d, v) in dates.iter().zip(values) {
        let v = v.map(|x| format!("{x}")).unwrap_or_default();
        w.write_record([d.format(DATE_FORMAT).to_string(), v])?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}
