//! Self-supervised pretraining on a desk-scale scene, scored by how often the
//! angular head's peak bin lands near the true azimuth.
//!
//! ```text
//! cargo run --release --example pretrain -- [seed] [iterations]
//! ```

use std::time::Instant;

use csipos::config::ExperimentConfig;
use csipos::train::data::LabeledSet;
use csipos::train::eval::fraction_within;
use csipos::train::experiment::{pretrain_run, ExperimentData};

fn main() -> csipos::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = ExperimentConfig::desk_scale();
    if let Some(it) = args.next().and_then(|s| s.parse().ok()) {
        cfg.pretrain.iterations = it;
    }
    let data = ExperimentData::generate(&cfg)?;
    let validation = LabeledSet::from_dataset(&data.validation)?;
    let start = Instant::now();
    let bins = cfg.pretrain.bins;
    let (_, _, run) = pretrain_run(&cfg, &data.pretrain, &validation, bins, seed)?;
    let elapsed = start.elapsed();
    let every = (run.losses.len() / 10).max(1);
    for (i, l) in run.losses.iter().enumerate().step_by(every) {
        println!("iteration {i:>5}  loss {l:.5}");
    }
    println!("final loss {:.5}", run.losses.last().unwrap_or(&f64::NAN));
    let w = run.bin_width_deg;
    println!(
        "K = {bins}: {:.1}% of validation errors within one bin, {:.1}% within two ({} samples, {elapsed:.2?})",
        100.0 * fraction_within(&run.azimuth_errors, w),
        100.0 * fraction_within(&run.azimuth_errors, 2.0 * w),
        run.azimuth_errors.len()
    );
    Ok(())
}
