//! Train all five ablation variants with the same seed and data order and
//! print the comparison table.
//!
//! Run with: cargo run --release --example ablation_study

use glaff::config::RunConfig;
use glaff::harness::ablate;

fn main() {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth.n", "900"),
        ("synth.channels", "2"),
        ("window.history", "48"),
        ("window.horizon", "12"),
        ("glaff.dim", "16"),
        ("glaff.dff", "32"),
        ("glaff.heads", "2"),
        ("glaff.layers", "2"),
        ("data.feature_mode", "scaled"),
        ("train.epochs", "4"),
        ("train.lr", "0.001"),
        ("anomaly.specs", "point:0.2:50:5"),
        ("seed", "2"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let variants: Vec<String> = ["full", "no_backbone", "no_attention", "no_quantile", "no_adaptive"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let reports = ablate(&cfg, &variants).expect("ablation should run");
    println!(
        "{:<14} {:>8} {:>10} {:>10} {:>12}",
        "variant", "params", "test mse", "spiky mse", "weights"
    );
    for r in &reports {
        let weights = r
            .mean_weights
            .map(|(a, b)| format!("{a:.2}/{b:.2}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<14} {:>8} {:>10.4} {:>10.4} {:>12}",
            r.variant,
            r.param_count,
            r.test.mse,
            r.test_polluted.map(|m| m.mse).unwrap_or(f64::NAN),
            weights
        );
    }
}
