//! Finite-difference check of every differentiable operation and of the
//! full training loss.
//!
//! cargo run --release --example gradient_check -- [base_channels]

use cspose::network::ModelConfig;
use cspose::pipeline::suite::gradient_suite;

fn main() -> cspose::Result<()> {
    let d = std::env::args().nth(1).map_or(8, |s| s.parse().expect("base_channels"));
    let cfg = ModelConfig {
        base_channels: d,
        ..ModelConfig::default()
    };
    let suite = gradient_suite(&cfg, 1)?;
    for (name, r) in &suite.entries {
        println!(
            "{:<20} {:>5} coords  {:>3} kinks  max abs err {:.2e}  {}",
            name,
            r.checked,
            r.skipped_kinks,
            r.max_abs_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("all passed: {}", suite.passed());
    Ok(())
}
