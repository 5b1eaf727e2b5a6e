//! One seed of the synthetic robustness benchmark, printing every number.
//! Usage: bench_seed <seed> [threads] [lr] [sigma] [point-magnitude]

use glaff::config::RunConfig;
use glaff::data::{pollute_windows, robust_channel_stats, AnomalySpec, Window, WindowPlan};
use glaff::harness::{evaluate_windows, prepare_data, train, variant_config};

fn main() {
    let arg = |i: usize| std::env::args().nth(i);
    let seed: u64 = arg(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let threads: usize = arg(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let lr = arg(3).unwrap_or_else(|| "0.001".into());
    let sigma = arg(4).unwrap_or_else(|| "0.15".into());
    let magnitude = arg(5).unwrap_or_else(|| "8".into());
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth.n", "2240"),
        ("synth.channels", "3"),
        ("synth.noise_sigma", sigma.as_str()),
        ("synth.seed", "11"),
        ("window.history", "96"),
        ("window.horizon", "96"),
        ("glaff.dim", "64"),
        ("glaff.dff", "256"),
        ("glaff.heads", "4"),
        ("glaff.layers", "2"),
        ("glaff.dropout", "0.0"),
        ("data.feature_mode", "scaled"),
        ("train.epochs", "10"),
        ("train.lr", lr.as_str()),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.seed = seed;
    cfg.threads = threads;

    let specs_combined = [
        AnomalySpec::parse(&format!("point:0.1:{magnitude}:777")).unwrap(),
        AnomalySpec::parse("contextual:0.1:0.4:778").unwrap(),
    ];
    let specs_point = [AnomalySpec::parse(&format!("point:0.1:{magnitude}:777")).unwrap()];

    let data = prepare_data(&cfg).unwrap();
    let (h, p, c) = (cfg.history, cfg.horizon, data.channels());
    let plan = WindowPlan::new(&data.test_segment, h, p, cfg.feature_mode).unwrap();
    let clean: Vec<Window> = plan.iter(1).collect();
    let stats = robust_channel_stats(&data.test_segment);
    let ppd = data.test_segment.points_per_day();
    let mut combined = clean.clone();
    pollute_windows(&mut combined, &specs_combined, &stats, ppd).unwrap();
    let mut point = clean.clone();
    pollute_windows(&mut point, &specs_point, &stats, ppd).unwrap();

    for variant in ["full", "no_quantile", "backbone_only"] {
        let vcfg = variant_config(&cfg, variant).unwrap();
        let (mut model, _, report) = train(&vcfg).unwrap();
        let (on_clean, _) = evaluate_windows(&mut model, &clean, h, p, c, false).unwrap();
        let (on_combined, _) = evaluate_windows(&mut model, &combined, h, p, c, false).unwrap();
        let (on_point, _) = evaluate_windows(&mut model, &point, h, p, c, false).unwrap();
        let weights = report
            .mean_weights
            .map(|(a, b)| format!("({a:.3},{b:.3})"))
            .unwrap_or_else(|| "-".into());
        println!(
            "seed {seed} {variant:<14} clean {:.4} combined {:.4} point {:.4} weights {weights} ({:.0}s)",
            on_clean.mse, on_combined.mse, on_point.mse, report.seconds
        );
    }
}
