//! Finite-difference verification of every layer and the composed model
//! loss: central differences with step 1e-5 against the reverse-mode
//! gradients, tolerance 1e-4.
//!
//! Run with: cargo run --release --example gradient_check

fn main() {
    let report = glaff::harness::gradcheck(1234).expect("gradcheck should run");
    println!("{:<16} {:>12}  {}", "component", "max rel err", "worst parameter");
    for c in &report.components {
        println!(
            "{:<16} {:>12.3e}  {}{}",
            c.component,
            c.max_rel_err,
            c.worst_param,
            if c.passed { "" } else { "  <-- FAIL" }
        );
    }
    println!(
        "quantile/median subgradient locality: {}",
        if report.subgradient_locality { "pass" } else { "FAIL" }
    );
    println!(
        "\noverall: {} (tolerance {:.0e})",
        if report.passed() { "pass" } else { "FAIL" },
        report.tolerance
    );
    std::process::exit(i32::from(!report.passed()));
}
