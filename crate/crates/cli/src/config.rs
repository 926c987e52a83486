//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown keys are rejected. Every default reproduces the
//! published protocol.

use std::path::{Path, PathBuf};

use hybridvol::distributions::DistributionKind;
use hybridvol::evaluation::{BacktestOptions, BootstrapOptions};
use hybridvol::garch::{Family, GarchParams, GarchSpec, MeanModel, DEFAULT_GARCH_WINDOW};
use hybridvol::gru::{Activation, GruConfig, Precision};
use hybridvol::hybrid::{RollingPlan, FEATURE_COUNT};
use hybridvol::market_data::{DEFAULT_GKYZ_WINDOW, DEFAULT_RETURN_SCALE};
use serde::Serialize;

use crate::error::CliError;

/// Synthetic-data settings for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub days: usize,
    pub start_price: f64,
    /// Fraction of each daily log return realized overnight.
    pub overnight_share: f64,
    pub params: GarchParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub asset: String,
    pub input: Option<PathBuf>,
    /// Forecast CSV read by `backtest`; defaults to `<out>/forecasts.csv`.
    pub forecasts: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub return_scale: f64,
    pub gkyz_window: usize,
    pub spec: GarchSpec,
    pub sigma_clamp: Option<f64>,
    pub plan: RollingPlan,
    pub gru: GruConfig,
    pub alphas: Vec<f64>,
    pub es_alpha: f64,
    pub bootstrap: usize,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            asset: "asset".into(),
            input: None,
            forecasts: None,
            out: PathBuf::from("out"),
            seed: 0,
            threads: None,
            return_scale: DEFAULT_RETURN_SCALE,
            gkyz_window: DEFAULT_GKYZ_WINDOW,
            spec: GarchSpec::new(Family::Garch, MeanModel::Constant, DistributionKind::Normal),
            sigma_clamp: None,
            plan: RollingPlan { garch_window: DEFAULT_GARCH_WINDOW, ..RollingPlan::default() },
            gru: GruConfig::default(),
            alphas: vec![0.05, 0.01],
            es_alpha: 0.05,
            bootstrap: BootstrapOptions::default().resamples,
            simulation: SimulationConfig {
                days: 1500,
                start_price: 100.0,
                overnight_share: 0.2,
                params: GarchParams::garch11(0.05, 0.10, 0.85),
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::Config(format!("{key}: cannot parse '{value}': {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn optional(value: &str) -> Option<&str> {
    match value {
        "" | "none" | "off" => None,
        v => Some(v),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative paths inside the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input, &mut cfg.forecasts].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected key = value", i + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let sim = &mut self.simulation.params;
        match key {
            "asset" => self.asset = value.to_string(),
            "input" => self.input = optional(value).map(PathBuf::from),
            "forecasts" => self.forecasts = optional(value).map(PathBuf::from),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = optional(value).map(|v| parse(key, v)).transpose()?,
            "return_scale" => self.return_scale = parse(key, value)?,
            "gkyz_window" => self.gkyz_window = parse(key, value)?,
            "family" => self.spec.family = parse(key, value)?,
            "mean" => self.spec.mean_model = parse(key, value)?,
            "distribution" => self.spec.distribution = parse(key, value)?,
            "sigma_clamp" => self.sigma_clamp = optional(value).map(|v| parse(key, v)).transpose()?,
            "garch_window" => self.plan.garch_window = parse(key, value)?,
            "gru_train_window" => self.plan.gru_train_window = parse(key, value)?,
            "gru_test_window" => self.plan.gru_test_window = parse(key, value)?,
            "step" => self.plan.step = parse(key, value)?,
            "validation_fraction" => self.plan.validation_fraction = parse(key, value)?,
            "layers" => self.gru.layer_sizes = parse_list(key, value)?,
            "sequence_length" => self.gru.sequence_length = parse(key, value)?,
            "batch_size" => self.gru.batch_size = parse(key, value)?,
            "epochs" => self.gru.epochs = parse(key, value)?,
            "learning_rate" => self.gru.learning_rate = parse(key, value)?,
            "dropout" => self.gru.dropout_rate = parse(key, value)?,
            "l2" => self.gru.l2_lambda = parse(key, value)?,
            "activation" => self.gru.activation = parse::<Activation>(key, value)?,
            "precision" => self.gru.precision = parse::<Precision>(key, value)?,
            "alphas" => self.alphas = parse_list(key, value)?,
            "es_alpha" => self.es_alpha = parse(key, value)?,
            "bootstrap" => self.bootstrap = parse(key, value)?,
            "sim_days" => self.simulation.days = parse(key, value)?,
            "sim_start_price" => self.simulation.start_price = parse(key, value)?,
            "sim_overnight_share" => self.simulation.overnight_share = parse(key, value)?,
            "sim_mu" => sim.mu = parse(key, value)?,
            "sim_phi" => sim.phi = parse(key, value)?,
            "sim_alpha0" => sim.alpha0 = parse(key, value)?,
            "sim_alpha1" => sim.alpha = vec![parse(key, value)?],
            "sim_beta1" => sim.beta = vec![parse(key, value)?],
            "sim_omega1" => sim.omega = vec![parse(key, value)?],
            "sim_theta" => sim.theta = parse(key, value)?,
            "sim_gamma" => sim.gamma = parse(key, value)?,
            "sim_asym1" => sim.asym = vec![parse(key, value)?],
            "sim_delta" => sim.delta = parse(key, value)?,
            "sim_nu" => sim.nu = optional(value).map(|v| parse(key, v)).transpose()?,
            "sim_xi" => sim.xi = optional(value).map(|v| parse(key, v)).transpose()?,
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.return_scale > 0.0 && self.return_scale.is_finite()) {
            return bad(format!("return_scale must be positive, got {}", self.return_scale));
        }
        if self.gkyz_window == 0 {
            return bad("gkyz_window must be positive".into());
        }
        if self.alphas.is_empty() {
            return bad("alphas must list at least one tolerance".into());
        }
        for a in self.alphas.iter().chain([&self.es_alpha]) {
            if !(*a > 0.0 && *a < 1.0) {
                return bad(format!("tolerance {a} must lie in (0, 1)"));
            }
        }
        if self.bootstrap == 0 {
            return bad("bootstrap must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if let Some(c) = self.sigma_clamp {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("sigma_clamp must be positive, got {c}"));
            }
        }
        if !(0.0..1.0).contains(&self.simulation.overnight_share) {
            return bad("sim_overnight_share must lie in [0, 1)".into());
        }
        if self.simulation.start_price.is_nan() || self.simulation.start_price <= 0.0 {
            return bad("sim_start_price must be positive".into());
        }
        self.spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.gru_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// The input CSV, which must exist.
    pub fn require_input(&self) -> Result<&Path, CliError> {
        let Some(p) = self.input.as_deref() else {
            return Err(CliError::Config("no input CSV configured (key 'input')".into()));
        };
        if !p.is_file() {
            return Err(CliError::Config(format!("input CSV {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn gru_config(&self) -> GruConfig {
        GruConfig { input_dim: FEATURE_COUNT, seed: self.seed, ..self.gru.clone() }
    }

    /// Simulation parameters shaped for the configured family and
    /// distribution.
    pub fn simulation_params(&self) -> GarchParams {
        let mut p = self.simulation.params.clone();
        if self.spec.family == Family::Egarch {
            p.alpha = vec![1.0];
        }
        if self.spec.family != Family::Gjr {
            p.omega.clear();
        } else if p.omega.is_empty() {
            p.omega = vec![0.0];
        }
        if self.spec.family != Family::Aparch {
            p.asym.clear();
            p.delta = 2.0;
        } else if p.asym.is_empty() {
            p.asym = vec![0.0];
        }
        if self.spec.mean_model == MeanModel::Constant {
            p.phi = 0.0;
        }
        match self.spec.distribution {
            DistributionKind::Normal => {
                p.nu = None;
                p.xi = None;
            }
            DistributionKind::StudentT => {
                p.nu = p.nu.or(Some(6.0));
                p.xi = None;
            }
            DistributionKind::SkewStudentT => {
                p.nu = p.nu.or(Some(6.0));
                p.xi = p.xi.or(Some(1.0));
            }
        }
        p
    }

    pub fn backtest_options(&self) -> BacktestOptions {
        BacktestOptions {
            alphas: self.alphas.clone(),
            es_alpha: self.es_alpha,
            bootstrap: BootstrapOptions { resamples: self.bootstrap, seed: self.seed },
        }
    }

    pub fn forecasts_path(&self) -> PathBuf {
        self.forecasts.clone().unwrap_or_else(|| self.out.join("forecasts.csv"))
    }
}
