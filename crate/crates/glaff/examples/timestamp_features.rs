//! Timestamp features: the 6-vector [month, day, weekday, hour, minute,
//! second] that carries the global calendar information.
//!
//! Run with: cargo run --release --example timestamp_features

use glaff::timefeat::{extract_features, featurize_window, parse_timestamp, FeatureMode};

fn main() {
    let stamps = [
        "2018-06-02 12:00:00", // a Saturday noon
        "2020-02-29",          // leap day, midnight implied
        "2016-07-04 13:30:00", // a Monday afternoon
    ];
    println!("{:<22} [mo day wd hh mm ss]", "timestamp");
    let mut parsed = Vec::new();
    for text in stamps {
        let ts = parse_timestamp(text).unwrap();
        let row: Vec<String> = extract_features(&ts)
            .iter()
            .map(|v| format!("{:>2}", *v as i64))
            .collect();
        println!("{:<22} [{}]", text, row.join(" "));
        parsed.push(ts);
    }

    // weekday runs Monday = 0 .. Sunday = 6
    let sat = parse_timestamp("2018-06-02").unwrap();
    assert_eq!(sat.weekday(), 5);

    // windows stack per-timestamp rows; scaled mode maps each component
    // affinely into [-0.5, 0.5] by its calendar range
    let raw = featurize_window(&parsed, FeatureMode::Raw);
    let scaled = featurize_window(&parsed, FeatureMode::Scaled);
    println!("\nraw window    {:?} -> {:?}", raw.shape(), &raw.data()[..6]);
    println!("scaled window {:?} -> {:?}", scaled.shape(), &scaled.data()[..6]);

    // malformed timestamps carry context in the error
    let err = parse_timestamp("2019-02-29 00:00:00").unwrap_err();
    println!("\ninvalid date rejected: {err}");
}
