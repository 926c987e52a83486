use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filter::Recursion;
use super::{Family, GarchParams, GarchSpec, MeanModel};
use crate::error::{Error, Result};
use crate::market_data::ReturnSeries;

const BURN_IN: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub returns: ReturnSeries,
    /// True conditional variance of each simulated return.
    pub h: Vec<f64>,
}

/// Long-run starting level for the recursion.
fn start_variance(spec: &GarchSpec, p: &GarchParams) -> f64 {
    let sa: f64 = p.alpha.iter().sum();
    let sb: f64 = p.beta.iter().sum();
    let v = match spec.family {
        Family::Garch => p.alpha0 / (1.0 - sa - sb),
        Family::Gjr => p.alpha0 / (1.0 - sa - sb - 0.5 * p.omega.iter().sum::<f64>()),
        Family::Egarch => (p.alpha0 / (1.0 - sb)).exp(),
        Family::Aparch => (p.alpha0 / (1.0 - sa - sb)).powf(2.0 / p.delta),
    };
    if v.is_finite() && v > 0.0 {
        v
    } else {
        p.alpha0.abs().max(1e-8)
    }
}

/// Simulates `t` returns after a 500-step burn-in.
pub fn simulate(spec: &GarchSpec, params: &GarchParams, t: usize, seed: u64) -> Result<Simulated> {
    params.validate(spec)?;
    let dist = params.distribution(spec.distribution).prepare()?;
    let h0 = start_variance(spec, params);
    let rec = Recursion::new(spec, params, h0, &dist);
    let total = t + BURN_IN;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = Vec::with_capacity(total);
    let mut state = Vec::with_capacity(total);
    let mut h = Vec::with_capacity(total);
    let mut r = Vec::with_capacity(total);
    let mut prev = if spec.mean_model == MeanModel::Ar1 { params.mu / (1.0 - params.phi) } else { params.mu };
    for i in 0..total {
        let s = rec.state_at(i, &eps, &state, &h);
        let v = rec.to_variance(s);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonFinite(format!("simulated variance became {v} at step {i}")));
        }
        let e = v.sqrt() * dist.draw(&mut rng);
        let ret = match spec.mean_model {
            MeanModel::Constant => params.mu + e,
            MeanModel::Ar1 => params.mu + params.phi * prev + e,
        };
        prev = ret;
        eps.push(e);
        state.push(s);
        h.push(v);
        r.push(ret);
    }
    let returns = ReturnSeries::from_values(r.split_off(BURN_IN), 100.0)?;
    Ok(Simulated { returns, h: h.split_off(BURN_IN) })
}
