//! Synthetic OHLC bars from a simulated GARCH return path. Each daily log
//! return is split into an overnight gap and an intraday move; the intraday
//! high and low are drawn from the exact extremes of a Brownian bridge
//! between the open and the close.

use chrono::{Days, NaiveDate};
use hybridvol::garch::{simulate, GarchParams, GarchSpec};
use hybridvol::market_data::{OhlcRecord, PriceSeries, ReturnSeries};
use hybridvol::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub prices: PriceSeries,
    /// Simulated returns, one per bar after the first.
    pub returns: ReturnSeries,
    /// True conditional volatility of each return, in return units.
    pub true_sigma: Vec<f64>,
}

/// Maximum of a Brownian bridge from 0 to `x` with total variance `s2`,
/// given a uniform `u` in (0, 1].
fn bridge_max(x: f64, s2: f64, u: f64) -> f64 {
    0.5 * (x + (x * x - 2.0 * s2 * u.ln()).sqrt())
}

pub fn synthesize(
    spec: &GarchSpec,
    params: &GarchParams,
    days: usize,
    start_price: f64,
    overnight_share: f64,
    seed: u64,
) -> Result<SyntheticMarket> {
    let sim = simulate(spec, params, days, seed)?;
    let scale = sim.returns.scale();
    let dates = sim.returns.dates();
    // an independent stream for the bar shapes keeps the returns identical
    // to a bare simulation with the same seed
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let first: NaiveDate = dates[0] - Days::new(1);
    let mut bars = Vec::with_capacity(days + 1);
    bars.push(OhlcRecord { date: first, open: start_price, high: start_price, low: start_price, close: start_price });
    let mut prev = start_price;
    for (i, (r, h)) in sim.returns.values().iter().zip(&sim.h).enumerate() {
        let total = r / scale;
        let gap = overnight_share * total;
        let x = total - gap;
        let s2 = (1.0 - overnight_share) * h / (scale * scale);
        let open = prev * gap.exp();
        let close = prev * total.exp();
        let up = bridge_max(x, s2, 1.0 - rng.random::<f64>());
        let down = -bridge_max(-x, s2, 1.0 - rng.random::<f64>());
        let high = (open * up.exp()).max(open).max(close);
        let low = (open * down.exp()).min(open).min(close);
        bars.push(OhlcRecord { date: dates[i], open, high, low, close });
        prev = close;
    }
    Ok(SyntheticMarket {
        prices: PriceSeries::new(bars)?,
        true_sigma: sim.h.iter().map(|h| h.sqrt()).collect(),
        returns: sim.returns,
    })
}
