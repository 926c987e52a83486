use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use hybridvol::distributions::{cdf, density, quantile, tail_expectation, DistributionKind, DistributionSpec};
use hybridvol::evaluation::{
    christoffersen_test, dm_test, expected_count_display, hit_ratio_display, kupiec_test, mincer_zarnowitz,
};
use hybridvol::garch::{
    fit, log_likelihood, sample_variance, simulate, variance_filter, Family, FitOptions, GarchParams, GarchSpec,
    MeanModel,
};
use hybridvol::gru::{objective_gradient, Activation, GruConfig, GruWeights, ParamClass, Precision, TrainingSet};
use hybridvol::hybrid::read_forecasts_csv;
use hybridvol::risk::{hit_sequence, read_risk_csv, var_forecast, HitSequence};
use hybridvol_cli::{commands, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn hits_with(x: usize, n: usize, alpha: f64) -> HitSequence {
    HitSequence::new((0..n).map(|i| i < x).collect(), alpha).unwrap()
}

fn kupiec_oracle() -> Check {
    let cases = [(59, 0.05, 0.9258), (56, 0.05, 0.6197), (21, 0.01, 0.0173), (12, 0.01, 0.9860), (16, 0.01, 0.2616)];
    let mut got = Vec::new();
    for (x, alpha, p) in cases {
        let v = kupiec_test(&hits_with(x, 1194, alpha)).map_err(|e| e.to_string())?.p_value;
        ensure((v - p).abs() <= 5e-4, || format!("{x}/1194 at {alpha}: {v:.6} vs {p}"))?;
        got.push(format!("{v:.4}"));
    }
    Ok(got.join(" "))
}

fn display_oracle() -> Check {
    let a = hit_ratio_display(59, 1194);
    let b = hit_ratio_display(21, 1194);
    ensure(a == "4.94%" && b == "1.75%", || format!("{a} {b}"))?;
    let c = expected_count_display(0.05, 1194);
    let d = expected_count_display(0.01, 1194);
    ensure(c.contains("59.7") && c.contains("59"), || c.clone())?;
    ensure(d.contains("11.94") && d.contains("12"), || d.clone())?;
    Ok(format!("{a} {b}; {c}; {d}"))
}

/// Composite Simpson rule on [a, b] with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn distribution_oracles() -> Check {
    let n = DistributionSpec::normal();
    let alpha = 0.05;
    let q = quantile(&n, alpha).map_err(|e| e.to_string())?;
    let es = tail_expectation(&n, alpha).map_err(|e| e.to_string())?;

    // quadrature oracle: bisect the integrated density, then integrate z phi(z) below it
    let area = |x: f64| simpson(phi, -12.0, x, 4000);
    let (mut lo, mut hi) = (-5.0, 0.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if area(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q_quad = 0.5 * (lo + hi);
    let es_quad = simpson(|z| z * phi(z), -12.0, q_quad, 4000) / alpha;
    ensure((q - -1.6449).abs() <= 1e-4, || format!("quantile {q}"))?;
    ensure((es - -2.0627).abs() <= 1e-3, || format!("tail expectation {es}"))?;
    ensure((q - q_quad).abs() <= 1e-8, || format!("quantile {q} vs quadrature {q_quad}"))?;
    ensure((es - es_quad).abs() <= 1e-8, || format!("tail expectation {es} vs quadrature {es_quad}"))?;

    let mut worst = 0.0f64;
    for nu in [2.5, 3.0, 5.0, 10.0, 40.0] {
        let s = DistributionSpec::skew_t(nu, 1.0);
        let t = DistributionSpec::student_t(nu);
        let mut diffs = Vec::new();
        for z in [-6.0, -2.3, -0.7, 0.0, 0.4, 1.9, 5.5] {
            diffs.push(density(&s, z).unwrap() - density(&t, z).unwrap());
            diffs.push(cdf(&s, z).unwrap() - cdf(&t, z).unwrap());
        }
        for a in [0.001, 0.01, 0.05, 0.3, 0.5, 0.9] {
            diffs.push(quantile(&s, a).unwrap() - quantile(&t, a).unwrap());
            diffs.push(tail_expectation(&s, a).unwrap() - tail_expectation(&t, a).unwrap());
        }
        worst = diffs.iter().fold(worst, |m, d| m.max(d.abs()));
    }
    ensure(worst <= 1e-10, || format!("skew-t at xi = 1 differs from t by {worst:e}"))?;
    Ok(format!("q {q:.5}, ES {es:.5}, quadrature {q_quad:.5}/{es_quad:.5}, skew-t gap {worst:.1e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn garch_recovery() -> Check {
    let spec = GarchSpec::new(Family::Garch, MeanModel::Constant, DistributionKind::Normal);
    let truth = GarchParams::garch11(0.05, 0.10, 0.85);
    let mut errs = [vec![], vec![], vec![]];
    for seed in 1..=5 {
        let sim = simulate(&spec, &truth, 5000, seed).map_err(|e| e.to_string())?;
        let f = fit(&spec, &sim.returns, &FitOptions::default()).map_err(|e| e.to_string())?;
        let ll_truth = log_likelihood(&spec, &truth, &sim.returns).map_err(|e| e.to_string())?;
        ensure(f.log_likelihood >= ll_truth, || format!("seed {seed}: ll {} < truth {ll_truth}", f.log_likelihood))?;
        errs[0].push((f.params.alpha0 - 0.05).abs());
        errs[1].push((f.params.alpha[0] - 0.10).abs());
        errs[2].push((f.params.beta[0] - 0.85).abs());
    }
    let med: Vec<f64> = errs.into_iter().map(median).collect();
    ensure(med.iter().all(|m| *m <= 0.05), || format!("median errors {med:?}"))?;
    Ok(format!("median |error| alpha0 {:.4}, alpha1 {:.4}, beta1 {:.4}", med[0], med[1], med[2]))
}

fn reduction_equivalences() -> Check {
    let spec = |f| GarchSpec::new(f, MeanModel::Constant, DistributionKind::Normal);
    let sim =
        simulate(&spec(Family::Garch), &GarchParams::garch11(0.05, 0.10, 0.85), 1000, 77).map_err(|e| e.to_string())?;
    let r = &sim.returns;
    let h0 = sample_variance(r.values());
    let base = GarchParams::garch11(0.04, 0.12, 0.83);
    let g = variance_filter(&spec(Family::Garch), &base, r, h0).map_err(|e| e.to_string())?;
    let ap = GarchParams { delta: 2.0, asym: vec![0.0], ..base.clone() };
    let a = variance_filter(&spec(Family::Aparch), &ap, r, h0).map_err(|e| e.to_string())?;
    let gj = GarchParams { omega: vec![0.0], ..base.clone() };
    let j = variance_filter(&spec(Family::Gjr), &gj, r, h0).map_err(|e| e.to_string())?;
    let gap = |x: &[f64]| x.iter().zip(&g.h).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
    let (da, dj) = (gap(&a.h), gap(&j.h));
    ensure(da <= 1e-10 && dj <= 1e-10, || format!("APARCH gap {da:e}, GJR gap {dj:e}"))?;
    Ok(format!("max gap APARCH {da:.1e}, GJR {dj:.1e}"))
}

fn gru_gradient_check() -> Check {
    let cfg = GruConfig {
        layer_sizes: vec![8, 4],
        input_dim: 3,
        sequence_length: 6,
        precision: Precision::F64,
        l2_lambda: 0.01,
        dropout_rate: 0.0,
        activation: Activation::Tanh,
        seed: 17,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 20;
    let feats: Vec<f64> = (0..n * 6 * 3).map(|_| rng.random_range(-1.5..1.5)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let set = TrainingSet::new(6, 3, feats, targets).map_err(|e| e.to_string())?;
    let mut w = GruWeights::<f64>::init(&cfg).map_err(|e| e.to_string())?;
    let classes = w.param_classes();
    let mut flat = w.flatten();
    for (v, c) in flat.iter_mut().zip(&classes) {
        if *c == ParamClass::Bias {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    w.assign(&flat);
    let (_, analytic) = objective_gradient(&w, &cfg, &set).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for j in 0..flat.len() {
        let mut p = flat.clone();
        p[j] += h;
        let mut wp = w.clone();
        wp.assign(&p);
        p[j] -= 2.0 * h;
        let mut wm = w.clone();
        wm.assign(&p);
        let fp = objective_gradient(&wp, &cfg, &set).map_err(|e| e.to_string())?.0;
        let fm = objective_gradient(&wm, &cfg, &set).map_err(|e| e.to_string())?.0;
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max((analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1e-6));
    }
    let kinds: std::collections::HashSet<_> = classes.iter().collect();
    ensure(kinds.len() == 4, || format!("only {} parameter classes", kinds.len()))?;
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{} parameters, max relative error {worst:.2e}", flat.len()))
}

const DESK: &str = "\
asset = desk
input = data/ohlc.csv
seed = 7
sim_days = 1500
garch_window = 252
gru_train_window = 504
gru_test_window = 252
step = 252
validation_fraction = 0.33
layers = 16, 8
epochs = 20
batch_size = 32
learning_rate = 0.01
";

fn desk_config(dir: &Path, out: &str) -> Result<RunConfig, String> {
    let path = dir.join(format!("{out}.cfg"));
    std::fs::write(&path, format!("{DESK}out = {out}\n")).map_err(|e| e.to_string())?;
    let cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn desk_run() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut sim = desk_config(dir, "data")?;
    sim.out = dir.join("data");
    commands::simulate(&sim).map_err(|e| e.to_string())?;
    let a = desk_config(dir, "a")?;
    let b = desk_config(dir, "b")?;
    commands::run(&a).map_err(|e| e.to_string())?;
    commands::run(&b).map_err(|e| e.to_string())?;

    for f in [
        "returns.csv",
        "gkyz.csv",
        "forecasts.csv",
        "plot_volatility.csv",
        "plot_var.csv",
        "report.json",
        "run_summary.json",
        "risk_garch_5.csv",
        "risk_garch_1.csv",
        "risk_hybrid_5.csv",
        "risk_hybrid_1.csv",
    ] {
        ensure(a.out.join(f).is_file(), || format!("missing artifact {f}"))?;
    }
    let ra = std::fs::read(a.out.join("report.json")).map_err(|e| e.to_string())?;
    let rb = std::fs::read(b.out.join("report.json")).map_err(|e| e.to_string())?;
    ensure(ra == rb, || "reports differ between identical runs".into())?;

    let summary = json(&a.out.join("run_summary.json"))?;
    ensure(summary["status"] == "complete", || format!("status {}", summary["status"]))?;
    let returns = summary["returns"].as_u64().unwrap_or(0) as usize;
    let rows = summary["feature_rows"].as_u64().unwrap_or(0) as usize;
    let blocks = a.plan.blocks(rows);
    let expected: usize = blocks.iter().map(|b| b.1).sum();
    let records = read_forecasts_csv(std::fs::File::open(a.out.join("forecasts.csv")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure(returns == 1500, || format!("{returns} returns"))?;
    ensure(summary["garch_forecasts"].as_u64() == Some(1500 - 252), || "GARCH forecast count".into())?;
    ensure(expected == a.plan.expected_forecasts(returns) && records.len() == expected, || {
        format!("{} records, {expected} expected from {rows} rows", records.len())
    })?;
    for f in ["risk_garch_5.csv", "risk_hybrid_1.csv"] {
        let rows =
            read_risk_csv(std::fs::File::open(a.out.join(f)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(rows.len() == expected, || format!("{f} has {} rows", rows.len()))?;
    }

    let report: serde_json::Value = serde_json::from_slice(&ra).map_err(|e| e.to_string())?;
    let num = |v: &serde_json::Value, what: &str| -> Result<f64, String> {
        v.as_f64().ok_or_else(|| format!("report lacks {what}"))
    };
    num(&report["diebold_mariano"]["p_value"], "DM p-value")?;
    for m in report["models"].as_array().ok_or("report lacks models")? {
        let src = m["source"].as_str().unwrap_or("?").to_string();
        for k in ["mse", "mae", "hmse"] {
            num(&m["metrics"][k], &format!("{src} {k}"))?;
        }
        num(&m["mincer_zarnowitz"]["r_squared"], &format!("{src} MZ R2"))?;
        let var = m["var"].as_array().ok_or("report lacks VaR")?;
        for alpha in [0.05, 0.01] {
            let v = var
                .iter()
                .find(|v| v["alpha"].as_f64() == Some(alpha))
                .ok_or_else(|| format!("{src} lacks VaR at {alpha}"))?;
            num(&v["kupiec"]["p_value"], &format!("{src} Kupiec {alpha}"))?;
            num(&v["christoffersen"]["conditional"]["p_value"], &format!("{src} Christoffersen {alpha}"))?;
        }
        ensure(m["es"]["alpha"].as_f64() == Some(0.05), || format!("{src} ES level"))?;
        num(&m["es"]["mcneil_frey"]["exact"]["p_value"], &format!("{src} McNeil-Frey exact"))?;
        num(&m["es"]["mcneil_frey"]["bootstrap"]["p_value"], &format!("{src} McNeil-Frey bootstrap"))?;
    }
    Ok(format!(
        "{} blocks, {} records, GARCH MSE {:.4}, hybrid MSE {:.4}, DM p {:.4}",
        blocks.len(),
        records.len(),
        report["models"][0]["metrics"]["mse"].as_f64().unwrap_or(f64::NAN),
        report["models"][1]["metrics"]["mse"].as_f64().unwrap_or(f64::NAN),
        report["diebold_mariano"]["p_value"].as_f64().unwrap_or(f64::NAN),
    ))
}

fn calibration() -> Check {
    let cases = [
        (
            GarchSpec::new(Family::Garch, MeanModel::Constant, DistributionKind::Normal),
            GarchParams { mu: 0.03, ..GarchParams::garch11(0.05, 0.10, 0.85) },
        ),
        (
            GarchSpec::new(Family::Gjr, MeanModel::Constant, DistributionKind::SkewStudentT),
            GarchParams { omega: vec![0.06], nu: Some(6.0), xi: Some(0.85), ..GarchParams::garch11(0.05, 0.06, 0.85) },
        ),
    ];
    let mut out = Vec::new();
    for (i, (spec, truth)) in cases.iter().enumerate() {
        // fit on a short history, then treat the fitted model as the data generator
        let history = simulate(spec, truth, 3000, 100 + i as u64).map_err(|e| e.to_string())?;
        let fitted = fit(spec, &history.returns, &FitOptions::default()).map_err(|e| e.to_string())?.params;
        let sim = simulate(spec, &fitted, 100_000, 200 + i as u64).map_err(|e| e.to_string())?;
        let dist = fitted.distribution(spec.distribution);
        for alpha in [0.05, 0.01] {
            let var: Vec<f64> = sim
                .h
                .iter()
                .map(|h| var_forecast(fitted.mu, h.sqrt(), &dist, alpha))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let ratio = hit_sequence(sim.returns.values(), &var, alpha).map_err(|e| e.to_string())?.ratio();
            ensure((ratio - alpha).abs() <= 0.005, || format!("{} at {alpha}: {ratio}", spec.family))?;
            out.push(format!("{}-{} {alpha}: {ratio:.4}", spec.family, spec.distribution));
        }
    }
    Ok(out.join(", "))
}

fn cross_checks() -> Check {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(20..400);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
        let ab = dm_test(&a, &b).map_err(|e| e.to_string())?;
        let ba = dm_test(&b, &a).map_err(|e| e.to_string())?;
        ensure((ab.statistic + ba.statistic).abs() < 1e-9 && (ab.p_value + ba.p_value - 1.0).abs() < 1e-9, || {
            format!("seed {seed}: DM {} / {}", ab.statistic, ba.statistic)
        })?;

        let p = rng.random_range(0.005..0.3);
        let hits = HitSequence::new((0..n * 5).map(|_| rng.random::<f64>() < p).collect(), 0.05).unwrap();
        let c = christoffersen_test(&hits).map_err(|e| e.to_string())?;
        ensure(c.conditional.statistic >= c.lr_uc - 1e-12, || {
            format!("seed {seed}: LR_cc {} < LR_uc {}", c.conditional.statistic, c.lr_uc)
        })?;

        let (b0, b1) = (rng.random_range(-3.0..3.0), rng.random_range(0.2..4.0));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| b0 + b1 * v).collect();
        let mz = mincer_zarnowitz(&y, &x).map_err(|e| e.to_string())?;
        ensure(
            (mz.beta0 - b0).abs() < 1e-8 && (mz.beta1 - b1).abs() < 1e-8 && (mz.r_squared - 1.0).abs() < 1e-10,
            || format!("seed {seed}: MZ {mz:?} vs ({b0}, {b1})"),
        )?;
    }
    Ok("100 seeds".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("1 Kupiec oracle", Duration::from_secs(1), kupiec_oracle),
        ("2 hit-ratio and expected-count display", Duration::from_secs(1), display_oracle),
        ("3 distribution oracles", Duration::from_secs(10), distribution_oracles),
        ("4 GARCH MLE recovery", Duration::from_secs(120), garch_recovery),
        ("5 reduction equivalences", Duration::from_secs(5), reduction_equivalences),
        ("6 GRU gradient check", Duration::from_secs(60), gru_gradient_check),
        ("7 desk-scale end-to-end run", Duration::from_secs(600), desk_run),
        ("8 VaR calibration", Duration::from_secs(120), calibration),
        ("9 test-statistic cross-checks", Duration::from_secs(60), cross_checks),
    ];
    // written to the raw handle so the lines show even when output is captured
    let mut err = std::io::stderr();
    writeln!(err).unwrap();
    let mut failed = Vec::new();
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:.1?}, budget {budget:?}")),
            other => other,
        };
        match &result {
            Ok(detail) => writeln!(err, "PASS  {name}  [{took:.2?}]  {detail}").unwrap(),
            Err(why) => {
                writeln!(err, "FAIL  {name}  [{took:.2?}]  {why}").unwrap();
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
