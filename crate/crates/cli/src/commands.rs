//! The five commands. Each reads a validated [`RunConfig`], writes its
//! artifacts under `out`, and returns a printable summary.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hybridvol::evaluation::{backtest as run_backtest, BacktestReport, RiskTable};
use hybridvol::garch::{fit, FitOptions};
use hybridvol::hybrid::{
    build_features, read_forecasts_csv, rolling_garch_forecasts, run_hybrid, write_forecasts_csv, ForecastRecord,
    RollingOptions,
};
use hybridvol::market_data::{
    descriptive_stats, gkyz_volatility, load_ohlc_csv, log_returns, scale_gkyz, write_ohlc_csv, write_series_csv,
    CsvSchema, ReturnSeries, StatsSummary, DATE_FORMAT,
};
use hybridvol::risk::write_risk_csv;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::synthetic::synthesize;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub message: String,
    pub artifacts: Vec<PathBuf>,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: vec![] })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        let path = self.dir.join(name);
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn rows(&mut self, name: &str, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(self.create(name)?);
        let err = |e: csv::Error| CliError::Internal(e.to_string());
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(&r).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::Internal(e.to_string()))
    }
}

fn load_returns(cfg: &RunConfig) -> Result<(hybridvol::market_data::PriceSeries, ReturnSeries), CliError> {
    let prices = load_ohlc_csv(cfg.require_input()?, &CsvSchema::default())?;
    let returns = log_returns(&prices, cfg.return_scale)?;
    Ok((prices, returns))
}

const STATS_FIELDS: [&str; 8] = ["count", "mean", "std", "cv", "min", "max", "skewness", "kurtosis"];

fn stats_values(s: &StatsSummary) -> [Option<f64>; 8] {
    [Some(s.count as f64), Some(s.mean), Some(s.std), s.cv, Some(s.min), Some(s.max), s.skewness, s.kurtosis]
}

/// Parses a `statistic,value` file written by `stats`.
pub fn read_stats_csv(path: &Path) -> Result<StatsSummary, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    let mut vals = [None; 8];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let k = STATS_FIELDS
            .iter()
            .position(|f| *f == &rec[0])
            .ok_or_else(|| CliError::Data(format!("unknown statistic '{}'", &rec[0])))?;
        vals[k] = match rec[1].trim() {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|e| CliError::Data(format!("{}: {e}", &rec[0])))?),
        };
    }
    let need = |i: usize| vals[i].ok_or_else(|| CliError::Data(format!("missing {}", STATS_FIELDS[i])));
    Ok(StatsSummary {
        count: need(0)? as usize,
        mean: need(1)?,
        std: need(2)?,
        cv: vals[3],
        min: need(4)?,
        max: need(5)?,
        skewness: vals[6],
        kurtosis: vals[7],
    })
}

pub fn stats(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (_, returns) = load_returns(cfg)?;
    let s = descriptive_stats(&returns)?;
    let mut out = Artifacts::new(&cfg.out)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    out.rows(
        "stats.csv",
        &["statistic".into(), "value".into()],
        STATS_FIELDS.iter().zip(stats_values(&s)).map(|(k, v)| vec![k.to_string(), fmt(v)]),
    )?;
    let values: Vec<Option<f64>> = returns.values().iter().map(|v| Some(*v)).collect();
    write_series_csv(out.create("returns.csv")?, returns.dates(), &values)?;

    let mut msg =
        format!("{}: {} returns ({} to {})\n", cfg.asset, s.count, returns.dates()[0], returns.dates()[s.count - 1]);
    for (k, v) in STATS_FIELDS.iter().zip(stats_values(&s)).skip(1) {
        let shown = v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        msg.push_str(&format!("  {k:<9} {shown:>12}\n"));
    }
    Ok(Outcome { message: msg, artifacts: out.written })
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let params = cfg.simulation_params();
    params.validate(&cfg.spec)?;
    let sim = &cfg.simulation;
    let m = synthesize(&cfg.spec, &params, sim.days, sim.start_price, sim.overnight_share, cfg.seed)?;
    let mut out = Artifacts::new(&cfg.out)?;
    write_ohlc_csv(out.create("ohlc.csv")?, &m.prices)?;
    let sigma: Vec<Option<f64>> = m.true_sigma.iter().map(|s| Some(*s)).collect();
    write_series_csv(out.create("true_volatility.csv")?, m.returns.dates(), &sigma)?;
    Ok(Outcome {
        message: format!(
            "simulated {} days of {} ({:?} mean, {} innovations), seed {}\n",
            sim.days, cfg.spec.family, cfg.spec.mean_model, cfg.spec.distribution, cfg.seed
        ),
        artifacts: out.written,
    })
}

pub fn garch_fit(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (_, returns) = load_returns(cfg)?;
    let f = fit(&cfg.spec, &returns, &FitOptions::default())?;
    let mut out = Artifacts::new(&cfg.out)?;
    out.json("garch_fit.json", &f.summary())?;
    let msg = format!(
        "{} ({:?} mean) fit on {} returns: log-likelihood {:.4}, converged {}, max |gradient| {:.2e}\n",
        cfg.spec.family,
        cfg.spec.mean_model,
        returns.len(),
        f.log_likelihood,
        f.converged,
        f.max_gradient
    );
    if !f.converged {
        return Err(CliError::Convergence(format!(
            "{msg}estimate written to {}",
            cfg.out.join("garch_fit.json").display()
        )));
    }
    Ok(Outcome { message: msg, artifacts: out.written })
}

fn alpha_label(alpha: f64) -> String {
    format!("{}", (alpha * 1e6).round() / 1e4)
}

fn realized_for(records: &[ForecastRecord], returns: &ReturnSeries) -> Result<Vec<f64>, CliError> {
    records
        .iter()
        .map(|r| {
            returns
                .index_of(r.date)
                .map(|i| returns.values()[i])
                .ok_or_else(|| CliError::Data(format!("no realized return on forecast date {}", r.date)))
        })
        .collect()
}

fn write_backtest(
    out: &mut Artifacts,
    cfg: &RunConfig,
    report: &BacktestReport,
    tables: &[RiskTable],
) -> Result<(), CliError> {
    out.json("report.json", report)?;
    for t in tables {
        for (alpha, rows) in cfg.alphas.iter().zip(&t.by_alpha) {
            write_risk_csv(out.create(&format!("risk_{}_{}.csv", t.source, alpha_label(*alpha)))?, rows)?;
        }
    }
    Ok(())
}

fn report_lines(report: &BacktestReport) -> String {
    let mut s = format!("{} forecasts, {} to {}\n", report.forecasts, report.first_date, report.last_date);
    for m in &report.models {
        s.push_str(&format!(
            "  {:<6} MSE {:.4}  MAE {:.4}  HMSE {:.4}  MZ R2 {:.4}\n",
            m.source.to_string(),
            m.metrics.mse,
            m.metrics.mae,
            m.metrics.hmse,
            m.mincer_zarnowitz.r_squared
        ));
        for v in &m.var {
            s.push_str(&format!(
                "         VaR {}%: {} hits ({}, expected {})  Kupiec {}  Christoffersen {}\n",
                alpha_label(v.alpha),
                v.exceedances,
                v.hit_ratio_display,
                v.expected_display,
                v.kupiec.display(),
                v.christoffersen.conditional.display()
            ));
        }
        match (&m.es.mcneil_frey, &m.es.note) {
            (Some(mf), _) => s.push_str(&format!(
                "         ES {}%: McNeil-Frey exact {}  bootstrap {}\n",
                alpha_label(m.es.alpha),
                mf.exact.display(),
                mf.bootstrap.display()
            )),
            (None, Some(note)) => s.push_str(&format!("         ES {}%: {note}\n", alpha_label(m.es.alpha))),
            (None, None) => {}
        }
    }
    s.push_str(&format!("  DM (hybrid more accurate) {}\n", report.diebold_mariano.display()));
    s
}

#[derive(Debug, Serialize)]
struct BlockLine {
    start_date: String,
    train_windows: usize,
    validation_windows: usize,
    test_rows: usize,
    best_epoch: usize,
    epochs_run: usize,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    status: &'static str,
    asset: &'a str,
    config: &'a RunConfig,
    returns: usize,
    garch_forecasts: usize,
    garch_carried_forward: usize,
    gkyz_scale_factor: f64,
    feature_rows: usize,
    feature_rows_dropped: usize,
    expected_records: usize,
    records: usize,
    hybrid_floored: usize,
    blocks: Vec<BlockLine>,
    aborted: Option<String>,
    backtest_error: Option<String>,
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (prices, returns) = load_returns(cfg)?;
    let plan = cfg.plan;
    let gk = gkyz_volatility(&prices, cfg.gkyz_window, cfg.return_scale)?;
    let gk = scale_gkyz(&gk, &returns, plan.garch_window.min(returns.len()))?;
    let options = RollingOptions { fit: FitOptions::default(), sigma_clamp: cfg.sigma_clamp };
    let garch = rolling_garch_forecasts(&cfg.spec, &returns, plan.garch_window, &options)?;
    let features = build_features(&returns, &gk, &garch)?;
    let hybrid = run_hybrid(&plan, &cfg.gru_config(), &features)?;

    let mut out = Artifacts::new(&cfg.out)?;
    let series = |v: &[f64]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
    write_series_csv(out.create("returns.csv")?, returns.dates(), &series(returns.values()))?;
    write_series_csv(out.create("gkyz.csv")?, gk.dates(), gk.values())?;
    write_forecasts_csv(out.create("forecasts.csv")?, &hybrid.records)?;
    let date = |d: &chrono::NaiveDate| d.format(DATE_FORMAT).to_string();
    out.rows(
        "plot_volatility.csv",
        &["date", "sigma_gkyz", "sigma_garch", "sigma_hybrid"].map(String::from),
        hybrid.records.iter().map(|r| {
            vec![date(&r.date), r.sigma_gkyz.to_string(), r.sigma_garch.to_string(), r.sigma_hybrid.to_string()]
        }),
    )?;

    let mut backtest_error = None;
    let mut report_text = String::new();
    if !hybrid.records.is_empty() {
        let realized = realized_for(&hybrid.records, &returns)?;
        match run_backtest(&hybrid.records, &realized, &cfg.backtest_options()) {
            Ok((report, tables)) => {
                write_backtest(&mut out, cfg, &report, &tables)?;
                let mut header = vec!["date".to_string(), "return".to_string()];
                for t in &tables {
                    for a in &cfg.alphas {
                        header.push(format!("{}_var_{}", t.source, alpha_label(*a)));
                        header.push(format!("{}_hit_{}", t.source, alpha_label(*a)));
                    }
                }
                out.rows(
                    "plot_var.csv",
                    &header,
                    (0..hybrid.records.len()).map(|i| {
                        let mut row = vec![date(&hybrid.records[i].date), realized[i].to_string()];
                        for t in &tables {
                            for rows in &t.by_alpha {
                                row.push(rows[i].var.to_string());
                                row.push(u8::from(rows[i].hit).to_string());
                            }
                        }
                        row
                    }),
                )?;
                report_text = report_lines(&report);
            }
            Err(e) => backtest_error = Some(e.to_string()),
        }
    }

    let status = if hybrid.aborted.is_some() || backtest_error.is_some() { "partial" } else { "complete" };
    let summary = RunSummary {
        status,
        asset: &cfg.asset,
        config: cfg,
        returns: returns.len(),
        garch_forecasts: garch.len(),
        garch_carried_forward: garch.failures(),
        gkyz_scale_factor: gk.scale_factor(),
        feature_rows: features.len(),
        feature_rows_dropped: features.dropped,
        expected_records: plan.blocks(features.len()).iter().map(|b| b.1).sum(),
        records: hybrid.records.len(),
        hybrid_floored: hybrid.floored,
        blocks: hybrid
            .blocks
            .iter()
            .map(|b| BlockLine {
                start_date: date(&features.dates[b.start]),
                train_windows: b.train_windows,
                validation_windows: b.validation_windows,
                test_rows: b.test_rows,
                best_epoch: b.history.best_epoch,
                epochs_run: b.history.train_loss.len(),
            })
            .collect(),
        aborted: hybrid.aborted.clone(),
        backtest_error: backtest_error.clone(),
    };
    out.json("run_summary.json", &summary)?;

    let mut msg = format!(
        "{}: {} returns, {} GARCH forecasts ({} carried forward), {} feature rows, {} blocks, {} records\n",
        cfg.asset,
        returns.len(),
        garch.len(),
        garch.failures(),
        features.len(),
        hybrid.blocks.len(),
        hybrid.records.len()
    );
    msg.push_str(&report_text);
    if let Some(a) = &hybrid.aborted {
        return Err(CliError::Convergence(format!(
            "{msg}run aborted in {a}; partial artifacts in {}",
            cfg.out.display()
        )));
    }
    if let Some(e) = backtest_error {
        return Err(CliError::Data(format!("{msg}backtest failed: {e}; partial artifacts in {}", cfg.out.display())));
    }
    Ok(Outcome { message: msg, artifacts: out.written })
}

pub fn backtest(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let path = cfg.forecasts_path();
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let records = read_forecasts_csv(file)?;
    let (_, returns) = load_returns(cfg)?;
    let realized = realized_for(&records, &returns)?;
    let (report, tables) = run_backtest(&records, &realized, &cfg.backtest_options())?;
    let mut out = Artifacts::new(&cfg.out)?;
    write_backtest(&mut out, cfg, &report, &tables)?;
    Ok(Outcome { message: report_lines(&report), artifacts: out.written })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_labels() {
        assert_eq!(alpha_label(0.05), "5");
        assert_eq!(alpha_label(0.01), "1");
        assert_eq!(alpha_label(0.025), "2.5");
    }
}
