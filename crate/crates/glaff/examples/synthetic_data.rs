//! The synthetic benchmark series: a daily sinusoid whose amplitude drops
//! on weekends (five high peaks, two low peaks per week), plus noise.
//!
//! Run with: cargo run --release --example synthetic_data

use glaff::data::{synth_generate, to_csv_string, SynthProfile};

fn main() {
    let profile = SynthProfile {
        channels: 2,
        noise_sigma: 0.1,
        seed: 7,
        ..SynthProfile::default()
    };
    let ds = synth_generate(4 * 168, &profile).unwrap();
    println!(
        "{} hourly points x {} channels, {} .. {}",
        ds.len(),
        ds.channel_count(),
        ds.timestamps[0],
        ds.timestamps[ds.len() - 1]
    );

    // weekday swing should clearly exceed weekend swing
    let (mut wd, mut wdn, mut we, mut wen) = (0.0, 0usize, 0.0, 0usize);
    for (i, ts) in ds.timestamps.iter().enumerate() {
        let dev = (ds.value(i, 0) - profile.base_level).abs();
        if ts.weekday() < 5 {
            wd += dev;
            wdn += 1;
        } else {
            we += dev;
            wen += 1;
        }
    }
    println!(
        "mean |deviation|: weekdays {:.3}, weekends {:.3}",
        wd / wdn as f64,
        we / wen as f64
    );

    // a quick ASCII strip of the first 10 days
    println!("\nfirst 10 days (channel 0, one char per hour):");
    let glyphs = [' ', '.', ':', '-', '=', '+', '*', '#'];
    for day in 0..10 {
        let row: String = (0..24)
            .map(|h| {
                let v = ds.value(day * 24 + h, 0) - profile.base_level;
                let idx = (((v / profile.weekday_amplitude) + 1.0) / 2.0 * 7.0)
                    .clamp(0.0, 7.0) as usize;
                glyphs[idx]
            })
            .collect();
        println!("  {} {}", ds.timestamps[day * 24].format(), row);
    }

    let path = std::env::temp_dir().join("glaff-synth-demo.csv");
    std::fs::write(&path, to_csv_string(&ds)).unwrap();
    println!("\nwrote {}", path.display());
}
