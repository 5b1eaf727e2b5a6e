//! Train the plugin around a DLinear backbone on synthetic data and print
//! the per-epoch curve plus final metrics.
//!
//! Run with: cargo run --release --example train_forecaster

use glaff::config::RunConfig;
use glaff::harness::train;

fn main() {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth.n", "1200"),
        ("synth.channels", "2"),
        ("window.history", "48"),
        ("window.horizon", "24"),
        ("glaff.dim", "32"),
        ("glaff.dff", "64"),
        ("glaff.heads", "4"),
        ("glaff.layers", "1"),
        ("data.feature_mode", "scaled"),
        ("train.epochs", "5"),
        ("train.lr", "0.001"),
        ("seed", "3"),
    ] {
        cfg.set(k, v).unwrap();
    }

    let (_model, _spec, report) = train(&cfg).expect("training should finish");
    println!("variant {} | {} parameters", report.variant, report.param_count);
    println!("epoch  train_loss   val_mse");
    for e in &report.curve {
        println!("{:>5}  {:>10.5}  {:>8.5}", e.epoch, e.train_loss, e.val_mse);
    }
    println!(
        "\nbest epoch {} | val mse {:.5} | test mse {:.5} mae {:.5} ({:.1}s)",
        report.best_epoch, report.val.mse, report.test.mse, report.test.mae, report.seconds
    );
    if let Some((wg, wl)) = report.mean_weights {
        println!("mean fusion weights on test: global {wg:.3}, local {wl:.3}");
    }
}
