use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csipos::config::{ExperimentConfig, Method};
use csipos::gradcheck::{run_seeds, GradCheckConfig};
use csipos::io::dataset::{load_dataset, save_dataset, split_file_name};
use csipos::io::reports::{self, RunKey};
use csipos::labels::AngularGrid;
use csipos::nn::checkpoint::{architecture_hash, Checkpoint};
use csipos::scene::{generate_datasets, Dataset, SplitKind};
use csipos::train::data::{magnitude_scale, LabeledSet, PretrainSet};
use csipos::train::eval::{evaluate_downstream, evaluate_pretrain, fraction_within};
use csipos::train::experiment::{
    new_angular_head, new_encoder, new_polar_head, run_experiment, run_rng, STREAM_BASELINE, STREAM_FINE_TUNE,
    STREAM_PRETRAIN,
};
use csipos::train::{downstream_train, pretrain, PretrainConfig};
use csipos::{Error, Result};

#[derive(Parser)]
#[command(name = "csipos", version, about = "Camera-supervised CSI positioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to CSIPOS_OUT_DIR, then the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory holding the split files written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the pretraining, labeled and validation splits.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the encoder and angular head on the unlabeled split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Number of angular bins.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Fine-tune (or train from scratch) the positioning network.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Pretrained checkpoint; required by the proposed method.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "proposed", value_parser = ["proposed", "baseline-a"])]
        method: String,
        /// Labeled samples to train on; defaults to the whole labeled split.
        #[arg(long)]
        nt: Option<usize>,
    },
    /// Score a checkpoint on the validation split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bin count of a pretraining checkpoint.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        /// Single seed; runs seeds 0..100 when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the method × N_T × seed grid and write all tables.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.resolved_output_dir())
}

/// Loads one split and checks it was generated from the configured scene.
/// The scene seed is taken from the file, so `generate --seed` output stays
/// usable with the same config.
fn load_split(dir: &Path, kind: SplitKind, cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = dir.join(split_file_name(kind));
    let ds = load_dataset(&path, None)?;
    let expected = csipos::scene::SceneConfig {
        seed: ds.scene.seed,
        ..cfg.scene.clone()
    };
    load_dataset(&path, Some(&expected)).map(|_| ds)
}

fn generate(common: Common) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(s) = common.seed {
        cfg.scene.seed = s;
    }
    let dir = out_dir(&common, &cfg);
    let (p, l, v) = generate_datasets(&cfg.scene, cfg.data.sizes())?;
    for ds in [&p, &l, &v] {
        let path = dir.join(split_file_name(ds.kind));
        save_dataset(&path, ds)?;
        println!("wrote {} ({} snapshots)", path.display(), ds.snapshots.len());
    }
    Ok(())
}

fn cmd_pretrain(common: Common, data: DataArgs, k: Option<usize>) -> Result<()> {
    let cfg = load_config(&common)?;
    let seed = common.seed.unwrap_or(1);
    let pcfg = PretrainConfig {
        bins: k.unwrap_or(cfg.pretrain.bins),
        ..cfg.pretrain.clone()
    };
    let ds = load_split(&data.dataset, SplitKind::Pretrain, &cfg)?;
    let grid = AngularGrid::new(cfg.scene.df_range_deg, pcfg.bins)?;
    let mut set = PretrainSet::from_dataset(&ds, &grid)?;
    if pcfg.drop_undetected {
        set = set.without_undetected();
    }
    let mut rng = run_rng(seed, STREAM_PRETRAIN, pcfg.bins, 0);
    let mut encoder = new_encoder(&cfg.model, &cfg.scene, magnitude_scale(&ds.snapshots), &mut rng)?;
    let mut head = new_angular_head(&cfg.model, pcfg.bins, &mut rng);
    let losses = pretrain(&mut encoder, &mut head, &set, &pcfg, &mut rng)?;
    let dir = out_dir(&common, &cfg);
    let hash = architecture_hash(&cfg.model, encoder.input_hw)?;
    Checkpoint::capture(hash, &[&encoder, &head]).save(&dir.join("pretrain.ckpt"))?;
    let key = RunKey {
        method: "pretrain",
        bins: Some(pcfg.bins),
        labeled: None,
        seed,
    };
    reports::write_pretrain_loss(&dir.join(reports::PRETRAIN_LOSS), key, &losses)?;
    println!("pretrained {} iterations, final loss {:.6}", losses.len(), losses.last().unwrap_or(&f64::NAN));
    let val_path = data.dataset.join(split_file_name(SplitKind::Validation));
    if val_path.exists() {
        let val = LabeledSet::from_dataset(&load_split(&data.dataset, SplitKind::Validation, &cfg)?)?;
        let errors = evaluate_pretrain(&mut encoder, &mut head, &val, &grid)?;
        reports::write_cdf(&dir.join(reports::PRETRAIN_CDF), key, &errors)?;
        println!("{:.1}% of validation azimuth errors within two bins", 100.0 * fraction_within(&errors, 2.0 * grid.bin_width()));
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_train(common: Common, data: DataArgs, checkpoint: Option<PathBuf>, method: String, nt: Option<usize>) -> Result<()> {
    let cfg = load_config(&common)?;
    let method: Method = method.parse()?;
    if !method.is_implemented() {
        return Err(Error::Config(format!("method {} is reserved and not implemented", method.name())));
    }
    let seed = common.seed.unwrap_or(1);
    let labeled_ds = load_split(&data.dataset, SplitKind::Labeled, &cfg)?;
    let pool = LabeledSet::from_dataset(&labeled_ds)?;
    let n = nt.unwrap_or(pool.len());
    let train = pool.prefix(n)?;
    let validation = LabeledSet::from_dataset(&load_split(&data.dataset, SplitKind::Validation, &cfg)?)?;
    let pretrained = method == Method::Proposed;
    // Same generator streams as the matching cell of `experiment`, so a
    // pretrain/train pair reproduces it.
    let (mut encoder, mut rng) = if pretrained {
        let path = checkpoint.ok_or_else(|| Error::Config("the proposed method needs --checkpoint from `pretrain`".into()))?;
        let ck = Checkpoint::load(&path)?;
        let mut encoder = new_encoder(&cfg.model, &cfg.scene, 1.0, &mut run_rng(0, 0, 0, 0))?;
        ck.verify_hash(architecture_hash(&cfg.model, encoder.input_hw)?)?;
        ck.restore(&mut [&mut encoder])?;
        let bins = checkpoint_bins(&ck).unwrap_or(0);
        (encoder, run_rng(seed, STREAM_FINE_TUNE, bins, n))
    } else {
        let mut rng = run_rng(seed, STREAM_BASELINE, 0, n);
        let encoder = new_encoder(&cfg.model, &cfg.scene, magnitude_scale(&labeled_ds.snapshots[..n]), &mut rng)?;
        (encoder, rng)
    };
    let hash = architecture_hash(&cfg.model, encoder.input_hw)?;
    let mut head = new_polar_head(&cfg.model, &cfg.scene, &mut rng);
    let outcome = downstream_train(&mut encoder, &mut head, &train, Some(&validation), &cfg.downstream, pretrained, &mut rng)?;
    let report = evaluate_downstream(&mut encoder, &mut head, &validation)?;
    let dir = out_dir(&common, &cfg);
    Checkpoint::capture(hash, &[&encoder, &head]).save(&dir.join("train.ckpt"))?;
    if let Some(best) = &outcome.best_params {
        Checkpoint {
            config_hash: hash,
            ..best.clone()
        }
        .save(&dir.join("best.ckpt"))?;
    }
    let key = RunKey {
        method: method.name(),
        bins: None,
        labeled: Some(n),
        seed,
    };
    reports::write_downstream_loss(&dir.join(reports::DOWNSTREAM_LOSS), key, &outcome.epoch_losses)?;
    reports::write_validation_curve(&dir.join(reports::VALIDATION_CURVE), key, &outcome)?;
    reports::write_report(&dir.join(reports::REPORTS), key, cfg.downstream.epochs, &report, outcome.best.as_ref())?;
    println!(
        "{} with N_T = {n}: positioning error {:.3} m, azimuth MAE {:.2} deg, distance MAE {:.3} m",
        method.name(),
        report.mean_positioning_error,
        report.mae_azimuth,
        report.mae_distance
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

/// Bin count of the angular head stored in a checkpoint, if any.
fn checkpoint_bins(ck: &Checkpoint) -> Option<usize> {
    ck.entries.iter().find(|e| e.name == "fn1.fc2.bias").map(|e| e.shape[0])
}

fn cmd_evaluate(common: Common, data: DataArgs, checkpoint: PathBuf, k: Option<usize>) -> Result<()> {
    let cfg = load_config(&common)?;
    let validation = LabeledSet::from_dataset(&load_split(&data.dataset, SplitKind::Validation, &cfg)?)?;
    let ck = Checkpoint::load(&checkpoint)?;
    let mut rng = run_rng(0, 0, 0, 0);
    let mut encoder = new_encoder(&cfg.model, &cfg.scene, 1.0, &mut rng)?;
    ck.verify_hash(architecture_hash(&cfg.model, encoder.input_hw)?)?;
    let dir = out_dir(&common, &cfg);
    let seed = common.seed.unwrap_or(0);
    if ck.entries.iter().any(|e| e.name.starts_with("fn2.")) {
        let mut head = new_polar_head(&cfg.model, &cfg.scene, &mut rng);
        ck.restore(&mut [&mut encoder, &mut head])?;
        let report = evaluate_downstream(&mut encoder, &mut head, &validation)?;
        let key = RunKey {
            method: "evaluate",
            bins: None,
            labeled: None,
            seed,
        };
        reports::write_report(&dir.join(reports::REPORTS), key, 0, &report, None)?;
        reports::write_cdf(&dir.join(reports::AZIMUTH_CDF), key, &report.azimuth_error_cdf)?;
        println!(
            "positioning error {:.3} m, azimuth MAE {:.2} deg, distance MAE {:.3} m over {} samples",
            report.mean_positioning_error,
            report.mae_azimuth,
            report.mae_distance,
            validation.len()
        );
    } else {
        let bins = match k {
            Some(k) => k,
            None => checkpoint_bins(&ck).ok_or_else(|| Error::Corrupt("checkpoint holds neither head".into()))?,
        };
        let grid = AngularGrid::new(cfg.scene.df_range_deg, bins)?;
        let mut head = new_angular_head(&cfg.model, bins, &mut rng);
        ck.restore(&mut [&mut encoder, &mut head])?;
        let errors = evaluate_pretrain(&mut encoder, &mut head, &validation, &grid)?;
        let key = RunKey {
            method: "pretrain",
            bins: Some(bins),
            labeled: None,
            seed,
        };
        reports::write_cdf(&dir.join(reports::PRETRAIN_CDF), key, &errors)?;
        println!(
            "K = {bins}: {:.1}% of azimuth errors within one bin, {:.1}% within two",
            100.0 * fraction_within(&errors, grid.bin_width()),
            100.0 * fraction_within(&errors, 2.0 * grid.bin_width())
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(seed: Option<u64>) -> Result<()> {
    let cfg = GradCheckConfig::default();
    let report = match seed {
        Some(s) => run_seeds([s], &cfg)?,
        None => run_seeds(0..100, &cfg)?,
    };
    for (case, probed, skipped, worst) in report.per_case() {
        println!("{case:<22} probes {probed:>6}  skipped {skipped:>4}  max relative error {worst:.3e}");
    }
    report.into_result(&cfg).map(|_| println!("gradient check passed"))
}

fn cmd_experiment(common: Common) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(s) = common.seed {
        cfg.grid.seeds = vec![s];
    }
    let dir = out_dir(&common, &cfg);
    let (_, results) = run_experiment(&cfg)?;
    let files = reports::write_experiment(&dir, &results, cfg.downstream.epochs)?;
    println!("{:<11} {:>5} {:>6} {:>5} {:>14} {:>10}", "method", "K", "N_T", "runs", "S_pos mean [m]", "std [m]");
    for row in results.summary() {
        let k = row.bins.map_or("-".to_string(), |k| k.to_string());
        println!(
            "{:<11} {:>5} {:>6} {:>5} {:>14.3} {:>10.3}",
            row.method.name(),
            k,
            row.labeled,
            row.runs,
            row.mean_positioning_error,
            row.std_positioning_error
        );
    }
    println!("wrote {} into {}", files.join(", "), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate { common } => generate(common),
        Command::Pretrain { common, data, k } => cmd_pretrain(common, data, k),
        Command::Train {
            common,
            data,
            checkpoint,
            method,
            nt,
        } => cmd_train(common, data, checkpoint, method, nt),
        Command::Evaluate { common, data, checkpoint, k } => cmd_evaluate(common, data, checkpoint, k),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Experiment { common } => cmd_experiment(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
