use hybridvol::distributions::{density, DistributionKind, DistributionSpec};
use hybridvol::garch::optimize::numeric_gradient;
use hybridvol::garch::{
    fit, log_likelihood, sample_variance, simulate, variance_filter, Family, FitOptions, GarchParams, GarchSpec,
    MeanModel, ParamTransform,
};
use hybridvol::market_data::ReturnSeries;
use proptest::prelude::*;

fn spec(family: Family, dist: DistributionKind) -> GarchSpec {
    GarchSpec::new(family, MeanModel::Constant, dist)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn garch11_recovery_over_five_seeds() {
    let s = spec(Family::Garch, DistributionKind::Normal);
    let truth = GarchParams::garch11(0.05, 0.10, 0.85);
    let mut errs = [vec![], vec![], vec![]];
    for seed in 1..=5 {
        let sim = simulate(&s, &truth, 5000, seed).unwrap();
        let f = fit(&s, &sim.returns, &FitOptions::default()).unwrap();
        let ll_truth = log_likelihood(&s, &truth, &sim.returns).unwrap();
        assert!(f.log_likelihood >= ll_truth - 1e-6, "seed {seed}: {} < {ll_truth}", f.log_likelihood);
        assert!(f.converged, "seed {seed}: gradient {}", f.max_gradient);
        errs[0].push((f.params.alpha0 - 0.05).abs());
        errs[1].push((f.params.alpha[0] - 0.10).abs());
        errs[2].push((f.params.beta[0] - 0.85).abs());
    }
    for e in errs {
        assert!(median(e.clone()) <= 0.05, "{e:?}");
    }
}

#[test]
fn gjr_on_symmetric_data_finds_no_asymmetry() {
    let truth = GarchParams::garch11(0.05, 0.10, 0.85);
    let sim = simulate(&spec(Family::Garch, DistributionKind::Normal), &truth, 5000, 42).unwrap();
    let f = fit(&spec(Family::Gjr, DistributionKind::Normal), &sim.returns, &FitOptions::default()).unwrap();
    assert!(f.params.omega[0].abs() <= 0.05, "omega {}", f.params.omega[0]);
}

#[test]
fn gradient_vanishes_at_the_optimum() {
    let truth = GarchParams::garch11(0.05, 0.10, 0.85);
    for (family, dist) in [
        (Family::Garch, DistributionKind::Normal),
        (Family::Gjr, DistributionKind::StudentT),
        (Family::Egarch, DistributionKind::Normal),
        (Family::Aparch, DistributionKind::Normal),
    ] {
        let s = spec(family, dist);
        let sim = simulate(&spec(Family::Garch, DistributionKind::Normal), &truth, 2000, 5).unwrap();
        let f = fit(&s, &sim.returns, &FitOptions::default()).unwrap();
        let t = ParamTransform::new(s);
        let x = t.from_params(&f.params);
        let ll = |x: &[f64]| log_likelihood(&s, &t.to_params(x), &sim.returns).unwrap_or(f64::NEG_INFINITY);
        let g = numeric_gradient(&ll, &x, ll(&x), 1e-6);
        let worst = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-3, "{family}: gradient {g:?}");
    }
}

fn shared_series() -> ReturnSeries {
    let truth = GarchParams::garch11(0.05, 0.10, 0.85);
    simulate(&spec(Family::Garch, DistributionKind::Normal), &truth, 1000, 77).unwrap().returns
}

#[test]
fn aparch_and_gjr_reduce_to_garch() {
    let r = shared_series();
    let h0 = sample_variance(r.values());
    let base = GarchParams::garch11(0.04, 0.12, 0.83);
    let g = variance_filter(&spec(Family::Garch, DistributionKind::Normal), &base, &r, h0).unwrap();

    let mut ap = base.clone();
    ap.delta = 2.0;
    ap.asym = vec![0.0];
    let a = variance_filter(&spec(Family::Aparch, DistributionKind::Normal), &ap, &r, h0).unwrap();

    let mut gj = base.clone();
    gj.omega = vec![0.0];
    let j = variance_filter(&spec(Family::Gjr, DistributionKind::Normal), &gj, &r, h0).unwrap();

    for t in 0..r.len() {
        assert!((a.h[t] - g.h[t]).abs() < 1e-10);
        assert!((j.h[t] - g.h[t]).abs() < 1e-10);
    }
}

#[test]
fn doubling_returns_shifts_likelihood_by_t_ln2() {
    let r = shared_series();
    let s = spec(Family::Garch, DistributionKind::Normal);
    let p = GarchParams::garch11(0.8, 0.0, 0.0);
    let r2 = ReturnSeries::from_values(r.values().iter().map(|v| 2.0 * v).collect(), 100.0).unwrap();
    let a = log_likelihood(&s, &p, &r).unwrap();
    let b = log_likelihood(&s, &GarchParams::garch11(3.2, 0.0, 0.0), &r2).unwrap();
    assert!((b - a + r.len() as f64 * 2f64.ln()).abs() < 1e-8);
}

#[test]
fn likelihood_matches_term_by_term_sum() {
    let r = [0.3, -1.2, 0.8, 2.1, -0.4];
    let series = ReturnSeries::from_values(r.to_vec(), 100.0).unwrap();
    let s = GarchSpec::new(Family::Garch, MeanModel::Constant, DistributionKind::StudentT);
    let mut p = GarchParams::garch11(0.2, 0.15, 0.7);
    p.mu = 0.1;
    p.nu = Some(6.0);
    let mean = r.iter().sum::<f64>() / 5.0;
    let v0 = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
    let mut h = v0;
    let mut eps_prev = None::<f64>;
    let mut total = 0.0;
    for x in r {
        h = 0.2 + 0.15 * eps_prev.map_or(v0, |e| e * e) + 0.7 * h;
        let e = x - 0.1;
        let d = density(&DistributionSpec::student_t(6.0), e / h.sqrt()).unwrap();
        total += d.ln() - 0.5 * h.ln();
        eps_prev = Some(e);
    }
    let ll = log_likelihood(&s, &p, &series).unwrap();
    assert!((ll - total).abs() < 1e-12, "{ll} vs {total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_is_positive_and_monotone_in_level(
        returns in prop::collection::vec(-10.0f64..10.0, 2..80),
        a0 in 0.001f64..2.0,
        bump in 0.0f64..1.0,
        a1 in 0.0f64..0.4,
        b1 in 0.0f64..0.55,
        w1 in -0.3f64..0.3,
        gjr in any::<bool>(),
    ) {
        let r = ReturnSeries::from_values(returns, 100.0).unwrap();
        let (family, mut p) = if gjr {
            let mut p = GarchParams::garch11(a0, 0.3 + 0.5 * a1, 0.5 * b1);
            p.omega = vec![w1];
            (Family::Gjr, p)
        } else {
            (Family::Garch, GarchParams::garch11(a0, a1, b1))
        };
        let s = spec(family, DistributionKind::Normal);
        let lo = variance_filter(&s, &p, &r, 1.0).unwrap();
        prop_assert!(lo.h.iter().all(|h| *h > 0.0 && h.is_finite()));
        p.alpha0 += bump;
        let hi = variance_filter(&s, &p, &r, 1.0).unwrap();
        for (a, b) in lo.h.iter().zip(&hi.h) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn egarch_and_aparch_stay_positive(
        returns in prop::collection::vec(-5.0f64..5.0, 2..60),
        a0 in -0.5f64..0.5,
        theta in -0.3f64..0.3,
        gamma in 0.0f64..0.4,
        b1 in -0.95f64..0.95,
        delta in 0.3f64..4.0,
        g1 in -0.95f64..0.95,
    ) {
        let r = ReturnSeries::from_values(returns, 100.0).unwrap();
        let mut e = GarchParams::garch11(a0, 1.0, b1);
        e.theta = theta;
        e.gamma = gamma;
        // an exploding log-variance must surface as an overflow error, never as a bad value
        match variance_filter(&spec(Family::Egarch, DistributionKind::Normal), &e, &r, 1.0) {
            Ok(out) => prop_assert!(out.h.iter().all(|h| *h > 0.0 && h.is_finite())),
            Err(err) => prop_assert!(matches!(err, hybridvol::Error::NumericOverflow { .. }), "{err}"),
        }

        let mut a = GarchParams::garch11(a0.abs() + 0.01, 0.1, 0.8);
        a.delta = delta;
        a.asym = vec![g1];
        let out = variance_filter(&spec(Family::Aparch, DistributionKind::Normal), &a, &r, 1.0).unwrap();
        prop_assert!(out.h.iter().all(|h| *h > 0.0 && h.is_finite()));
    }
}
