//! Python bindings: distributions, GARCH fitting and simulation, risk
//! forecasts, backtest statistics and the full pipeline.

use std::path::PathBuf;

use hybridvol::distributions::{self, DistributionKind, DistributionSpec};
use hybridvol::evaluation::{self, BootstrapOptions};
use hybridvol::garch::{self, FitOptions, GarchParams, GarchSpec};
use hybridvol::market_data::{self, CsvSchema, ReturnSeries, DATE_FORMAT};
use hybridvol::risk::{self, HitSequence};
use hybridvol_cli::{commands, CliError, RunConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

fn core_err(e: hybridvol::Error) -> PyErr {
    match e {
        hybridvol::Error::Domain(_) | hybridvol::Error::Constraint(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Converts any serializable value into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn series(values: Vec<f64>, scale: f64) -> PyResult<ReturnSeries> {
    ReturnSeries::from_values(values, scale).map_err(core_err)
}

fn hits(flags: Vec<bool>, alpha: f64) -> PyResult<HitSequence> {
    HitSequence::new(flags, alpha).map_err(core_err)
}

#[pyclass(name = "Distribution", module = "hybridvol_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDistribution {
    spec: DistributionSpec,
}

#[pymethods]
impl PyDistribution {
    /// `kind` is one of normal, student-t or skew-t (aliases accepted).
    #[new]
    #[pyo3(signature = (kind = "normal", nu = None, xi = None))]
    fn new(kind: &str, nu: Option<f64>, xi: Option<f64>) -> PyResult<Self> {
        let kind: DistributionKind = kind.parse().map_err(core_err)?;
        let spec = DistributionSpec { kind, nu, xi };
        spec.validate().map_err(core_err)?;
        Ok(Self { spec })
    }

    #[getter]
    fn kind(&self) -> String {
        self.spec.kind.to_string()
    }

    #[getter]
    fn nu(&self) -> Option<f64> {
        self.spec.nu
    }

    #[getter]
    fn xi(&self) -> Option<f64> {
        self.spec.xi
    }

    fn pdf(&self, z: f64) -> PyResult<f64> {
        distributions::density(&self.spec, z).map_err(core_err)
    }

    fn cdf(&self, z: f64) -> PyResult<f64> {
        distributions::cdf(&self.spec, z).map_err(core_err)
    }

    fn quantile(&self, alpha: f64) -> PyResult<f64> {
        distributions::quantile(&self.spec, alpha).map_err(core_err)
    }

    /// `E[z | z < quantile(alpha)]`.
    fn tail_expectation(&self, alpha: f64) -> PyResult<f64> {
        distributions::tail_expectation(&self.spec, alpha).map_err(core_err)
    }

    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        distributions::sample(&self.spec, seed, n).map_err(core_err)
    }

    fn __repr__(&self) -> String {
        match (self.spec.nu, self.spec.xi) {
            (Some(nu), Some(xi)) => format!("Distribution('{}', nu={nu}, xi={xi})", self.spec.kind),
            (Some(nu), None) => format!("Distribution('{}', nu={nu})", self.spec.kind),
            _ => format!("Distribution('{}')", self.spec.kind),
        }
    }
}

#[pyclass(name = "GarchModel", module = "hybridvol_py", frozen)]
struct PyGarchModel {
    spec: GarchSpec,
}

impl PyGarchModel {
    /// Overlays a parameter dict on GARCH(1,1) defaults; unknown keys are rejected.
    fn params(&self, given: Option<&Bound<'_, PyDict>>) -> PyResult<GarchParams> {
        let mut base = serde_json::to_value(GarchParams::garch11(0.05, 0.10, 0.85))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        if let Some(d) = given {
            let text: String = d.py().import("json")?.call_method1("dumps", (d,))?.extract()?;
            let over: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
            let obj = base.as_object_mut().expect("params serialize to an object");
            for (k, v) in over {
                if !obj.contains_key(&k) {
                    return Err(PyValueError::new_err(format!("unknown parameter '{k}'")));
                }
                obj.insert(k, v);
            }
        }
        let p: GarchParams = serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
        p.validate(&self.spec).map_err(core_err)?;
        Ok(p)
    }
}

#[pymethods]
impl PyGarchModel {
    #[new]
    #[pyo3(signature = (family = "garch", mean = "constant", distribution = "normal"))]
    fn new(family: &str, mean: &str, distribution: &str) -> PyResult<Self> {
        let spec = GarchSpec::new(
            family.parse().map_err(core_err)?,
            mean.parse().map_err(core_err)?,
            distribution.parse().map_err(core_err)?,
        );
        spec.validate().map_err(core_err)?;
        Ok(Self { spec })
    }

    /// Maximum-likelihood fit on percent returns.
    fn fit(&self, py: Python<'_>, returns: Vec<f64>) -> PyResult<PyGarchFit> {
        let r = series(returns, 100.0)?;
        let spec = self.spec;
        let fit = py.detach(|| garch::fit(&spec, &r, &FitOptions::default())).map_err(core_err)?;
        let forecast = garch::forecast_one_step(&fit, &r).map_err(core_err)?;
        Ok(PyGarchFit { fit, forecast })
    }

    /// Simulated `(returns, sigma)` paths of length `n`.
    #[pyo3(signature = (n, seed, params = None))]
    fn simulate(&self, n: usize, seed: u64, params: Option<&Bound<'_, PyDict>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = self.params(params)?;
        let sim = garch::simulate(&self.spec, &p, n, seed).map_err(core_err)?;
        Ok((sim.returns.values().to_vec(), sim.h.iter().map(|h| h.sqrt()).collect()))
    }

    /// Conditional variances of `returns` under `params`.
    #[pyo3(signature = (returns, params = None))]
    fn variance(&self, returns: Vec<f64>, params: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<f64>> {
        let p = self.params(params)?;
        let r = series(returns, 100.0)?;
        let h0 = garch::sample_variance(r.values());
        Ok(garch::variance_filter(&self.spec, &p, &r, h0).map_err(core_err)?.h)
    }

    #[pyo3(signature = (returns, params = None))]
    fn log_likelihood(&self, returns: Vec<f64>, params: Option<&Bound<'_, PyDict>>) -> PyResult<f64> {
        let p = self.params(params)?;
        garch::log_likelihood(&self.spec, &p, &series(returns, 100.0)?).map_err(core_err)
    }

    fn __repr__(&self) -> String {
        format!("GarchModel('{}', '{:?}', '{}')", self.spec.family, self.spec.mean_model, self.spec.distribution)
    }
}

#[pyclass(name = "GarchFit", module = "hybridvol_py", frozen)]
struct PyGarchFit {
    fit: garch::GarchFit,
    forecast: garch::Forecast,
}

#[pymethods]
impl PyGarchFit {
    #[getter]
    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.fit.params)
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.fit.log_likelihood
    }

    #[getter]
    fn converged(&self) -> bool {
        self.fit.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.fit.iterations
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.fit.h_series.iter().map(|h| h.sqrt()).collect()
    }

    #[getter]
    fn standardized_residuals(&self) -> Vec<f64> {
        self.fit.standardized_residuals.clone()
    }

    #[getter]
    fn distribution(&self) -> PyDistribution {
        PyDistribution { spec: self.fit.params.distribution(self.fit.spec.distribution) }
    }

    /// One-step-ahead `(mean, sigma)`.
    fn forecast(&self) -> (f64, f64) {
        (self.forecast.r_f, self.forecast.sigma_f)
    }

    fn to_json(&self) -> PyResult<String> {
        self.fit.to_json().map_err(core_err)
    }
}

/// Dates and scaled log close-to-close returns of an OHLC CSV.
#[pyfunction]
#[pyo3(signature = (path, scale = 100.0))]
fn load_returns(path: PathBuf, scale: f64) -> PyResult<(Vec<String>, Vec<f64>)> {
    let prices = market_data::load_ohlc_csv(&path, &CsvSchema::default()).map_err(core_err)?;
    let r = market_data::log_returns(&prices, scale).map_err(core_err)?;
    Ok((r.dates().iter().map(|d| d.format(DATE_FORMAT).to_string()).collect(), r.values().to_vec()))
}

/// Rolling Garman-Klass/Yang-Zhang volatility of an OHLC CSV; `None` before a full window.
#[pyfunction]
#[pyo3(signature = (path, window = 10, scale = 100.0))]
fn gkyz_volatility(path: PathBuf, window: usize, scale: f64) -> PyResult<(Vec<String>, Vec<Option<f64>>)> {
    let prices = market_data::load_ohlc_csv(&path, &CsvSchema::default()).map_err(core_err)?;
    let v = market_data::gkyz_volatility(&prices, window, scale).map_err(core_err)?;
    Ok((v.dates().iter().map(|d| d.format(DATE_FORMAT).to_string()).collect(), v.values().to_vec()))
}

#[pyfunction]
fn descriptive_stats<'py>(py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &market_data::summarize(&values).map_err(core_err)?)
}

#[pyfunction]
fn var_forecast(r_f: f64, sigma: f64, dist: &PyDistribution, alpha: f64) -> PyResult<f64> {
    risk::var_forecast(r_f, sigma, &dist.spec, alpha).map_err(core_err)
}

#[pyfunction]
fn es_forecast(r_f: f64, sigma: f64, dist: &PyDistribution, alpha: f64) -> PyResult<f64> {
    risk::es_forecast(r_f, sigma, &dist.spec, alpha).map_err(core_err)
}

/// Exceedance flags `r < -VaR`.
#[pyfunction]
fn hit_sequence(returns: Vec<f64>, var: Vec<f64>, alpha: f64) -> PyResult<Vec<bool>> {
    Ok(risk::hit_sequence(&returns, &var, alpha).map_err(core_err)?.hits)
}

#[pyfunction]
fn kupiec_test<'py>(py: Python<'py>, hit_flags: Vec<bool>, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::kupiec_test(&hits(hit_flags, alpha)?).map_err(core_err)?)
}

#[pyfunction]
fn christoffersen_test<'py>(py: Python<'py>, hit_flags: Vec<bool>, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::christoffersen_test(&hits(hit_flags, alpha)?).map_err(core_err)?)
}

/// Squared-error comparison; small p-values favour `errors_b`.
#[pyfunction]
fn dm_test<'py>(py: Python<'py>, errors_a: Vec<f64>, errors_b: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::dm_test(&errors_a, &errors_b).map_err(core_err)?)
}

#[pyfunction]
fn mincer_zarnowitz<'py>(py: Python<'py>, target_var: Vec<f64>, forecast_var: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::mincer_zarnowitz(&target_var, &forecast_var).map_err(core_err)?)
}

#[pyfunction]
fn point_metrics<'py>(py: Python<'py>, targets: Vec<f64>, forecasts: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::point_metrics(&targets, &forecasts).map_err(core_err)?)
}

#[pyfunction]
#[pyo3(signature = (returns, sigma, es, hit_flags, alpha, resamples = 10_000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn mcneil_frey_test<'py>(
    py: Python<'py>,
    returns: Vec<f64>,
    sigma: Vec<f64>,
    es: Vec<f64>,
    hit_flags: Vec<bool>,
    alpha: f64,
    resamples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let h = hits(hit_flags, alpha)?;
    let opts = BootstrapOptions { resamples, seed };
    let mf = py.detach(|| evaluation::mcneil_frey_test(&returns, &sigma, &es, &h, opts)).map_err(core_err)?;
    to_py(py, &mf)
}

fn load_config(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::load(&config).map_err(cli_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.validate().map_err(cli_err)?;
    Ok(cfg)
}

/// Writes synthetic OHLC bars and their true volatility as configured,
/// returning the written paths.
#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn simulate_market(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<Vec<PathBuf>> {
    let cfg = load_config(config, seed, out)?;
    Ok(commands::simulate(&cfg).map_err(cli_err)?.artifacts)
}

/// Runs the rolling GARCH + GRU pipeline and backtest from a config file,
/// returning the text summary. Artifacts land in the configured output directory.
#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn run(py: Python<'_>, config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<String> {
    let cfg = load_config(config, seed, out)?;
    let outcome = py.detach(|| commands::run(&cfg)).map_err(cli_err)?;
    Ok(outcome.message)
}

#[pymodule]
fn hybridvol_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyGarchModel>()?;
    m.add_class::<PyGarchFit>()?;
    m.add_function(wrap_pyfunction!(load_returns, m)?)?;
    m.add_function(wrap_pyfunction!(gkyz_volatility, m)?)?;
    m.add_function(wrap_pyfunction!(descriptive_stats, m)?)?;
    m.add_function(wrap_pyfunction!(var_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(es_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(hit_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(kupiec_test, m)?)?;
    m.add_function(wrap_pyfunction!(christoffersen_test, m)?)?;
    m.add_function(wrap_pyfunction!(dm_test, m)?)?;
    m.add_function(wrap_pyfunction!(mincer_zarnowitz, m)?)?;
    m.add_function(wrap_pyfunction!(point_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(mcneil_frey_test, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_market, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
