//! A single-seed slice of the robustness benchmark: train the full plugin,
//! the mean/std ablation, and the bare backbone, then evaluate all three on
//! test windows whose histories carry injected point anomalies.
//!
//! Run with: cargo run --release --example anomaly_benchmark
//! (takes a minute or two; pass a seed as the first argument to vary it)

use glaff::config::RunConfig;
use glaff::data::{pollute_windows, robust_channel_stats, AnomalySpec, Window, WindowPlan};
use glaff::harness::{evaluate_windows, prepare_data, train, variant_config};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth.n", "1200"),
        ("synth.channels", "2"),
        ("synth.noise_sigma", "0.15"),
        ("window.history", "48"),
        ("window.horizon", "24"),
        ("glaff.dim", "32"),
        ("glaff.dff", "64"),
        ("glaff.heads", "4"),
        ("glaff.layers", "1"),
        ("data.feature_mode", "scaled"),
        ("train.epochs", "8"),
        ("train.lr", "0.001"),
        ("backbone.kernel", "25"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.seed = seed;

    // huge isolated spikes in 20% of the test history windows
    let specs = [AnomalySpec::parse("point:0.2:100:9").unwrap()];
    let data = prepare_data(&cfg).unwrap();
    let (h, p, c) = (cfg.history, cfg.horizon, data.channels());
    let clean: Vec<Window> = WindowPlan::new(&data.test_segment, h, p, cfg.feature_mode)
        .unwrap()
        .iter(1)
        .collect();
    let mut polluted = clean.clone();
    let stats = robust_channel_stats(&data.test_segment);
    pollute_windows(&mut polluted, &specs, &stats, data.test_segment.points_per_day()).unwrap();

    println!("seed {seed}: {} test windows, 20% polluted\n", clean.len());
    println!("{:<14} {:>10} {:>10}", "model", "clean mse", "spiky mse");
    for variant in ["full", "no_quantile", "backbone_only"] {
        let vcfg = variant_config(&cfg, variant).unwrap();
        let (mut model, _, _) = train(&vcfg).unwrap();
        let (on_clean, _) = evaluate_windows(&mut model, &clean, h, p, c, false).unwrap();
        let (on_bad, _) = evaluate_windows(&mut model, &polluted, h, p, c, false).unwrap();
        println!("{:<14} {:>10.4} {:>10.4}", variant, on_clean.mse, on_bad.mse);
    }
}
