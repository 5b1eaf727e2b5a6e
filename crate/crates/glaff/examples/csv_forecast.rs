//! The CSV path end to end: write an ETT-format file, ingest it with full
//! validation, split 6:2:2 chronologically, standardize on train statistics,
//! train briefly, and evaluate.
//!
//! Run with: cargo run --release --example csv_forecast [path/to/data.csv]

use glaff::config::RunConfig;
use glaff::data::{load_csv, synth_generate, to_csv_string, SynthProfile};
use glaff::harness::train;

fn main() {
    // use a supplied CSV, or fabricate one in the documented format
    let path = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let profile = SynthProfile {
                channels: 7,
                noise_sigma: 0.2,
                seed: 12,
                ..SynthProfile::default()
            };
            let ds = synth_generate(1400, &profile).unwrap();
            let p = std::env::temp_dir().join("glaff-demo-ett.csv");
            std::fs::write(&p, to_csv_string(&ds)).unwrap();
            p
        }
    };
    let ds = load_csv(&path).unwrap();
    println!(
        "loaded {} : {} rows x {} channels ({} .. {})",
        path.display(),
        ds.len(),
        ds.channel_count(),
        ds.timestamps[0],
        ds.timestamps[ds.len() - 1]
    );

    let mut cfg = RunConfig::default();
    cfg.set("data.source", "csv").unwrap();
    cfg.set("data.csv_path", path.to_str().unwrap()).unwrap();
    for (k, v) in [
        ("window.history", "48"),
        ("window.horizon", "24"),
        ("glaff.dim", "32"),
        ("glaff.dff", "64"),
        ("glaff.heads", "4"),
        ("glaff.layers", "1"),
        ("data.feature_mode", "scaled"),
        ("train.epochs", "2"),
        ("train.lr", "0.001"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let (_, _, report) = train(&cfg).unwrap();
    println!(
        "trained {} epochs | val mse {:.4} | test mse {:.4} mae {:.4} ({:.1}s)",
        report.curve.len(),
        report.val.mse,
        report.test.mse,
        report.test.mae,
        report.seconds
    );
}
