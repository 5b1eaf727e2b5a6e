//! What the quantile-based denormalizer buys: transporting the mapper's
//! output onto a window's scale stays bit-identical when the upper tail of
//! the history is wrecked, while mean/std transport gets dragged away.
//!
//! Run with: cargo run --release --example robust_denormalization

use glaff::plugin::{robust_denormalize, StatsKind};
use glaff::rng::DetRng;
use glaff::tensor::{Graph, Tensor};

fn rand_tensor(rng: &mut DetRng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::constant(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect())
}

fn main() {
    let mut rng = DetRng::new(42);
    let mut g = Graph::inference();
    let (h, p) = (96, 4);

    // the mapper's initial mappings and a clean history window
    let x_map = rand_tensor(&mut rng, vec![1, h, 1], -1.0, 1.0);
    let y_map = rand_tensor(&mut rng, vec![1, p, 1], -1.0, 1.0);
    let clean = rand_tensor(&mut rng, vec![1, h, 1], 10.0, 20.0);

    // wreck the top 23 values (strictly fewer than ceil(0.25 * 96) = 24)
    let mut data = clean.data().to_vec();
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| data[a].total_cmp(&data[b]));
    for &i in order.iter().rev().take(23) {
        data[i] = 1e9;
    }
    let polluted = Tensor::constant(vec![1, h, 1], data);

    for (label, kind) in [("median/IQR", StatsKind::Robust), ("mean/std", StatsKind::MeanStd)] {
        let (_, y_clean) =
            robust_denormalize(&mut g, &x_map, &y_map, &clean, 0.75, kind).unwrap();
        let (_, y_bad) =
            robust_denormalize(&mut g, &x_map, &y_map, &polluted, 0.75, kind).unwrap();
        let max_shift = y_clean
            .data()
            .iter()
            .zip(y_bad.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let identical = y_clean.data() == y_bad.data();
        println!(
            "{label:<11} forecast shift after pollution: max {max_shift:.3e} ({})",
            if identical { "bit-identical" } else { "corrupted" }
        );
    }
}
