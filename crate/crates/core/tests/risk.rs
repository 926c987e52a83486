use hybridvol::distributions::{DistributionKind, DistributionSpec};
use hybridvol::garch::{simulate, Family, GarchParams, GarchSpec, MeanModel};
use hybridvol::risk::{es_forecast, hit_sequence, var_forecast};
use proptest::prelude::*;

fn specs() -> Vec<DistributionSpec> {
    vec![
        DistributionSpec::normal(),
        DistributionSpec::student_t(4.5),
        DistributionSpec::skew_t(6.0, 0.7),
        DistributionSpec::skew_t(3.5, 1.4),
    ]
}

#[test]
fn symmetric_skew_matches_student() {
    for alpha in [0.01, 0.05, 0.2] {
        let a = es_forecast(0.1, 1.7, &DistributionSpec::skew_t(5.0, 1.0), alpha).unwrap();
        let b = es_forecast(0.1, 1.7, &DistributionSpec::student_t(5.0), alpha).unwrap();
        assert!((a - b).abs() < 1e-8);
    }
}

/// Hit ratio on returns drawn from the model that produced the forecasts.
fn calibrated_ratio(spec: &GarchSpec, params: &GarchParams, alpha: f64, seed: u64) -> f64 {
    let sim = simulate(spec, params, 100_000, seed).unwrap();
    let dist = params.distribution(spec.distribution);
    let var: Vec<f64> = sim.h.iter().map(|h| var_forecast(params.mu, h.sqrt(), &dist, alpha).unwrap()).collect();
    hit_sequence(sim.returns.values(), &var, alpha).unwrap().ratio()
}

#[test]
fn hit_ratio_converges_to_tolerance() {
    let normal = GarchSpec::new(Family::Garch, MeanModel::Constant, DistributionKind::Normal);
    let gjr = GarchSpec::new(Family::Gjr, MeanModel::Constant, DistributionKind::SkewStudentT);
    let base = GarchParams { mu: 0.03, ..GarchParams::garch11(0.05, 0.1, 0.85) };
    let skewed =
        GarchParams { omega: vec![0.05], nu: Some(6.0), xi: Some(0.85), ..GarchParams::garch11(0.05, 0.06, 0.85) };
    for alpha in [0.05, 0.01] {
        let a = calibrated_ratio(&normal, &base, alpha, 11);
        let b = calibrated_ratio(&gjr, &skewed, alpha, 12);
        assert!((a - alpha).abs() < 0.005, "normal alpha {alpha}: {a}");
        assert!((b - alpha).abs() < 0.005, "skew-t GJR alpha {alpha}: {b}");
    }
}

proptest! {
    #[test]
    fn var_is_antitone_in_alpha(a in 0.001f64..0.49, b in 0.001f64..0.49, sigma in 0.01f64..10.0, r_f in -1.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        for d in specs() {
            prop_assert!(var_forecast(r_f, sigma, &d, lo).unwrap() >= var_forecast(r_f, sigma, &d, hi).unwrap());
        }
    }

    #[test]
    fn es_lies_below_quantile(alpha in 0.001f64..0.49, sigma in 0.0f64..10.0, r_f in -1.0f64..1.0) {
        for d in specs() {
            let var = var_forecast(r_f, sigma, &d, alpha).unwrap();
            let es = es_forecast(r_f, sigma, &d, alpha).unwrap();
            // r_f + sigma q = -VaR
            prop_assert!(es <= -var + 1e-9);
        }
    }

    #[test]
    fn es_magnitude_exceeds_var(alpha in 0.001f64..0.2, sigma in 0.01f64..10.0) {
        for d in specs() {
            let var = var_forecast(0.0, sigma, &d, alpha).unwrap();
            let es = es_forecast(0.0, sigma, &d, alpha).unwrap();
            prop_assert!(es.abs() >= var.abs());
        }
    }
}
