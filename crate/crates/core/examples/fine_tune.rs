//! Pretrains on unlabeled snapshots, then fine-tunes for positioning and
//! compares against the same network trained from scratch.
//!
//! ```text
//! cargo run --release --example fine_tune -- [labeled] [seed]
//! ```

use std::time::Instant;

use csipos::config::ExperimentConfig;
use csipos::train::data::{magnitude_scale, LabeledSet};
use csipos::train::downstream::downstream_train;
use csipos::train::eval::evaluate_downstream;
use csipos::train::experiment::{
    new_encoder, new_polar_head, pretrain_run, run_rng, ExperimentData, STREAM_BASELINE, STREAM_FINE_TUNE,
};

fn main() -> csipos::Result<()> {
    let mut args = std::env::args().skip(1);
    let labeled: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig::desk_scale();
    let data = ExperimentData::generate(&cfg)?;
    let pool = LabeledSet::from_dataset(&data.labeled)?;
    let train = pool.prefix(labeled)?;
    let validation = LabeledSet::from_dataset(&data.validation)?;

    let start = Instant::now();
    let (mut encoder, _, run) = pretrain_run(&cfg, &data.pretrain, &validation, cfg.pretrain.bins, seed)?;
    println!(
        "pretrained {} iterations, loss {:.4} -> {:.4} ({:.1?})",
        run.losses.len(),
        run.losses[0],
        run.losses[run.losses.len() - 1],
        start.elapsed()
    );

    let mut rng = run_rng(seed, STREAM_FINE_TUNE, cfg.pretrain.bins, labeled);
    let mut head = new_polar_head(&cfg.model, &cfg.scene, &mut rng);
    downstream_train(&mut encoder, &mut head, &train, None, &cfg.downstream, true, &mut rng)?;
    let proposed = evaluate_downstream(&mut encoder, &mut head, &validation)?;

    let mut rng = run_rng(seed, STREAM_BASELINE, 0, labeled);
    let scale = magnitude_scale(&data.labeled.snapshots[..labeled]);
    let mut encoder = new_encoder(&cfg.model, &cfg.scene, scale, &mut rng)?;
    let mut head = new_polar_head(&cfg.model, &cfg.scene, &mut rng);
    downstream_train(&mut encoder, &mut head, &train, None, &cfg.downstream, false, &mut rng)?;
    let scratch = evaluate_downstream(&mut encoder, &mut head, &validation)?;

    println!("{labeled} labeled samples, {} validation samples", validation.len());
    for (name, r) in [("pretrained", &proposed), ("from scratch", &scratch)] {
        println!(
            "{name:<13} positioning error {:.3} m  azimuth MAE {:.2}°  distance MAE {:.2} m",
            r.mean_positioning_error, r.mae_azimuth, r.mae_distance
        );
    }
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
