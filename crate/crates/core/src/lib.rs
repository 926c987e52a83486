//! Volatility and risk forecasting with GARCH-family models, GRU networks
//! and hybrid GARCH-GRU pipelines, with VaR/ES backtesting.

pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod garch;
pub mod gru;
pub mod hybrid;
pub mod market_data;
pub mod risk;

pub use error::{Error, Result};
