//! Checkpoints: binary manifest + flat little-endian f32 arrays.
//! save → load → save is byte-idempotent and metrics survive the f32
//! round-trip.
//!
//! Run with: cargo run --release --example checkpoint_roundtrip

use glaff::checkpoint::{load_checkpoint, save_checkpoint};
use glaff::config::RunConfig;
use glaff::data::{Window, WindowPlan};
use glaff::harness::{evaluate_windows, prepare_data, train};

fn main() {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth.n", "500"),
        ("synth.channels", "2"),
        ("window.history", "24"),
        ("window.horizon", "8"),
        ("glaff.dim", "16"),
        ("glaff.dff", "32"),
        ("glaff.heads", "2"),
        ("glaff.layers", "1"),
        ("train.epochs", "2"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let (mut model, spec, _) = train(&cfg).unwrap();

    let data = prepare_data(&cfg).unwrap();
    let windows: Vec<Window> = WindowPlan::new(&data.test_segment, 24, 8, cfg.feature_mode)
        .unwrap()
        .iter(1)
        .collect();
    let (before, _) = evaluate_windows(&mut model, &windows, 24, 8, 2, false).unwrap();

    let dir = std::env::temp_dir().join("glaff-ckpt-demo");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(&mut model, &spec, &path).unwrap();
    let bytes_first = std::fs::read(&path).unwrap();
    println!("saved {} ({} bytes)", path.display(), bytes_first.len());

    let (mut loaded, spec2) = load_checkpoint(&path).unwrap();
    let again = dir.join("model-again.ckpt");
    save_checkpoint(&mut loaded, &spec2, &again).unwrap();
    let idempotent = bytes_first == std::fs::read(&again).unwrap();

    let (after, _) = evaluate_windows(&mut loaded, &windows, 24, 8, 2, false).unwrap();
    println!("save -> load -> save byte-idempotent: {idempotent}");
    println!(
        "test mse before {:.6} / after {:.6} (rel drift {:.2e})",
        before.mse,
        after.mse,
        (after.mse - before.mse).abs() / before.mse
    );
}
