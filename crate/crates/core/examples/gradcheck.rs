//! Finite-difference check of every layer and both objectives.
//!
//! ```text
//! cargo run --example gradcheck -- [seeds]
//! ```

use std::time::Instant;

use csipos::gradcheck::{run_seeds, GradCheckConfig};

fn main() -> csipos::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let cfg = GradCheckConfig::default();
    let start = Instant::now();
    let report = run_seeds(0..seeds, &cfg)?;
    println!("{:<22} {:>8} {:>8} {:>12}", "case", "probes", "skipped", "max rel err");
    for (case, probed, skipped, worst) in report.per_case() {
        println!("{case:<22} {probed:>8} {skipped:>8} {worst:>12.3e}");
    }
    println!("{seeds} seeds in {:.2?}", start.elapsed());
    let failures = report.failures(&cfg);
    if failures.is_empty() {
        println!("all gradients agree within {:.0e}", cfg.tolerance);
        Ok(())
    } else {
        for f in &failures {
            println!("FAIL {f}");
        }
        std::process::exit(4);
    }
}
