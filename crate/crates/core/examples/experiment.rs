//! Runs a full experiment grid from a configuration file and writes its CSV
//! reports.
//!
//! ```text
//! cargo run --release --example experiment -- [config.toml]
//! ```

use std::path::Path;
use std::time::Instant;

use csipos::config::ExperimentConfig;
use csipos::io::reports::write_experiment;
use csipos::train::experiment::run_experiment;

fn main() -> csipos::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(Path::new(&path))?,
        None => ExperimentConfig::desk_scale(),
    };
    let start = Instant::now();
    let (_, results) = run_experiment(&cfg)?;
    let dir = cfg.resolved_output_dir();
    let files = write_experiment(&dir, &results, cfg.downstream.epochs)?;
    println!("{:<11} {:>5} {:>4} {:>16} {:>14}", "method", "bins", "N_T", "error (m)", "best (m)");
    for row in results.summary() {
        let bins = row.bins.map_or_else(|| "-".to_string(), |b| b.to_string());
        println!(
            "{:<11} {bins:>5} {:>4} {:>8.3} ± {:<5.3} {:>8.3} ± {:.3}",
            row.method.name(),
            row.labeled,
            row.mean_positioning_error,
            row.std_positioning_error,
            row.mean_best_positioning_error,
            row.std_best_positioning_error
        );
    }
    println!("wrote {} to {} in {:.1?}", files.join(", "), dir.display(), start.elapsed());
    Ok(())
}
