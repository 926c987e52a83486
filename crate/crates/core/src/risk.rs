//! One-step long-position VaR and ES from return and volatility forecasts,
//! and the hit sequences used to backtest them.
//!
//! VaR is a positive loss magnitude, ES a (typically negative) return level.
//! A day is a hit when the realized return falls strictly below `-VaR`.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::market_data::DATE_FORMAT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskSource {
    Garch,
    Hybrid,
}

impl std::fmt::Display for RiskSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RiskSource::Garch => "garch",
            RiskSource::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskForecast {
    pub date: NaiveDate,
    pub alpha: f64,
    pub var: f64,
    pub es: f64,
    pub source: RiskSource,
}

fn check_inputs(r_f: f64, sigma_f: f64, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(sigma_f >= 0.0 && sigma_f.is_finite()) {
        return Err(Error::Domain(format!("sigma_f must be finite and non-negative, got {sigma_f}")));
    }
    if !r_f.is_finite() {
        return Err(Error::NonFinite(format!("return forecast {r_f}")));
    }
    Ok(())
}

/// `VaR = -r_f - sigma_f q_alpha`.
pub fn var_forecast(r_f: f64, sigma_f: f64, dist: &DistributionSpec, alpha: f64) -> Result<f64> {
    check_inputs(r_f, sigma_f, alpha)?;
    let q = dist.prepare()?.quantile(alpha)?;
    Ok(-r_f - sigma_f * q)
}

/// `ES = r_f + sigma_f E(z | z < q_alpha)`.
pub fn es_forecast(r_f: f64, sigma_f: f64, dist: &DistributionSpec, alpha: f64) -> Result<f64> {
    check_inputs(r_f, sigma_f, alpha)?;
    let tail = dist.prepare()?.tail_expectation(alpha)?;
    Ok(r_f + sigma_f * tail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitSequence {
    pub hits: Vec<bool>,
    pub alpha: f64,
}

impl HitSequence {
    pub fn new(hits: Vec<bool>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { hits, alpha })
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.hits.iter().filter(|h| **h).count()
    }

    pub fn ratio(&self) -> f64 {
        self.count() as f64 / self.len() as f64
    }
}

/// `h_t = 1` iff `r_t < -VaR_t`.
pub fn hit_sequence(returns: &[f64], var: &[f64], alpha: f64) -> Result<HitSequence> {
    if returns.len() != var.len() {
        return Err(Error::Misaligned(format!("{} returns against {} VaR forecasts", returns.len(), var.len())));
    }
    HitSequence::new(returns.iter().zip(var).map(|(r, v)| *r < -v).collect(), alpha)
}

/// One line of a risk series CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub date: NaiveDate,
    pub alpha: f64,
    pub var: f64,
    pub es: f64,
    pub hit: bool,
}

/// Per-date VaR, ES and hits for one tolerance level. `dists[i]` is the
/// innovation distribution behind `sigma_f[i]`.
pub fn risk_series(
    dates: &[NaiveDate],
    realized: &[f64],
    r_f: &[f64],
    sigma_f: &[f64],
    dists: &[DistributionSpec],
    alpha: f64,
) -> Result<Vec<RiskRow>> {
    let n = dates.len();
    if [realized.len(), r_f.len(), sigma_f.len(), dists.len()].iter().any(|l| *l != n) {
        return Err(Error::Misaligned(format!(
            "risk inputs differ in length: dates {n}, returns {}, r_f {}, sigma {}, distributions {}",
            realized.len(),
            r_f.len(),
            sigma_f.len(),
            dists.len()
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let var = var_forecast(r_f[i], sigma_f[i], &dists[i], alpha)?;
        let es = es_forecast(r_f[i], sigma_f[i], &dists[i], alpha)?;
        rows.push(RiskRow { date: dates[i], alpha, var, es, hit: realized[i] < -var });
    }
    Ok(rows)
}

const RISK_HEADER: [&str; 5] = ["date", "alpha", "var", "es", "hit"];

/// Writes `date,alpha,var,es,hit` with hits as `0`/`1`.
pub fn write_risk_csv<W: Write>(writer: W, rows: &[RiskRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RISK_HEADER)?;
    for r in rows {
        w.write_record([
            r.date.format(DATE_FORMAT).to_string(),
            r.alpha.to_string(),
            r.var.to_string(),
            r.es.to_string(),
            u8::from(r.hit).to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

pub fn read_risk_csv<R: Read>(reader: R) -> Result<Vec<RiskRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != RISK_HEADER {
        return Err(Error::Schema(format!("expected header {}, got {}", RISK_HEADER.join(","), header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::DataIntegrity { row: i + 2, message: m };
        let date = NaiveDate::parse_from_str(rec[0].trim(), DATE_FORMAT).map_err(|e| bad(format!("date: {e}")))?;
        let num =
            |k: usize| -> Result<f64> { rec[k].trim().parse().map_err(|e| bad(format!("{}: {e}", RISK_HEADER[k]))) };
        let hit = match rec[4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("hit must be 0 or 1, got {other:?}"))),
        };
        out.push(RiskRow { date, alpha: num(1)?, var: num(2)?, es: num(3)?, hit });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_five_percent() {
        let n = DistributionSpec::normal();
        assert!((var_forecast(0.0, 1.0, &n, 0.05).unwrap() - 1.644_853_6).abs() < 1e-6);
        assert!((es_forecast(0.0, 1.0, &n, 0.05).unwrap() + 2.062_712_9).abs() < 1e-6);
    }

    #[test]
    fn zero_sigma_leaves_mean() {
        let t = DistributionSpec::student_t(5.0);
        assert_eq!(var_forecast(0.3, 0.0, &t, 0.01).unwrap(), -0.3);
        assert_eq!(es_forecast(0.3, 0.0, &t, 0.01).unwrap(), 0.3);
    }

    #[test]
    fn doubling_sigma_doubles_var() {
        let d = DistributionSpec::skew_t(7.0, 0.8);
        let a = var_forecast(0.0, 1.3, &d, 0.05).unwrap();
        let b = var_forecast(0.0, 2.6, &d, 0.05).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let n = DistributionSpec::normal();
        assert!(var_forecast(0.0, 1.0, &n, 0.0).is_err());
        assert!(var_forecast(0.0, -1.0, &n, 0.05).is_err());
        assert!(es_forecast(0.0, 1.0, &DistributionSpec::student_t(2.0), 0.05).is_err());
    }

    #[test]
    fn hand_built_hits() {
        let r = [-2.0, 0.5, -1.0, -3.0, 1.0];
        let v = [1.5, 1.5, 1.0, 1.5, 1.5];
        let h = hit_sequence(&r, &v, 0.05).unwrap();
        // -1.0 against VaR 1.0 sits on the boundary and is not a hit
        assert_eq!(h.hits, vec![true, false, false, true, false]);
        assert_eq!(h.count(), 2);
        assert!(hit_sequence(&r, &v[..4], 0.05).is_err());
        assert_eq!(hit_sequence(&[1.0; 3], &[0.5; 3], 0.01).unwrap().count(), 0);
    }

    #[test]
    fn risk_csv_round_trip() {
        let d = NaiveDate::from_ymd_opt(2022, 3, 1).unwrap();
        let rows = risk_series(
            &[d, d.succ_opt().unwrap()],
            &[-3.0, 0.1],
            &[0.05, 0.04],
            &[1.2, 1.1],
            &[DistributionSpec::normal(); 2],
            0.05,
        )
        .unwrap();
        assert_eq!(rows.iter().map(|r| r.hit).collect::<Vec<_>>(), vec![true, false]);
        let mut buf = Vec::new();
        write_risk_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"date,alpha,var,es,hit\n"));
        assert_eq!(read_risk_csv(buf.as_slice()).unwrap(), rows);
    }
}
