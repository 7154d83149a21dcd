//! The method × bins × labeled-size × seed grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{magnitude_scale, LabeledSet, PretrainSet};
use super::downstream::{downstream_train, DownstreamOutcome};
use super::eval::{evaluate_downstream, evaluate_pretrain, EvalReport};
use super::pretrain::{pretrain, PretrainConfig};
use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::labels::AngularGrid;
use crate::nn::{AngularHead, Encoder, ModelConfig, PolarHead};
use crate::scene::{generate_datasets, Dataset, SceneConfig};

pub const STREAM_PRETRAIN: u64 = 1;
pub const STREAM_FINE_TUNE: u64 = 2;
pub const STREAM_BASELINE: u64 = 3;

/// Deterministic generator for one training run of the grid.
pub fn run_rng(seed: u64, role: u64, bins: usize, labeled: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((role << 56) | ((bins as u64) << 28) | labeled as u64);
    rng
}

/// Freshly initialized encoder with its magnitude divisor set.
pub fn new_encoder(model: &ModelConfig, scene: &SceneConfig, scale: f64, rng: &mut ChaCha8Rng) -> Result<Encoder> {
    let mut enc = Encoder::new(model, (scene.num_antennas, scene.num_subcarriers), rng)?;
    enc.set_input_scale(scale);
    Ok(enc)
}

pub fn new_angular_head(model: &ModelConfig, bins: usize, rng: &mut ChaCha8Rng) -> AngularHead {
    AngularHead::new(model.feature_dim, model.hidden_width, bins, rng)
}

pub fn new_polar_head(model: &ModelConfig, scene: &SceneConfig, rng: &mut ChaCha8Rng) -> PolarHead {
    PolarHead::new(model.feature_dim, model.hidden_width, scene.df_range_deg, scene.max_range_m, rng)
}

#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub seed: u64,
    pub bins: usize,
    pub losses: Vec<f64>,
    /// Sorted validation azimuth errors of the angular head, degrees.
    pub azimuth_errors: Vec<f64>,
    pub bin_width_deg: f64,
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub method: Method,
    /// Bin count of the pretraining stage; `None` for the baseline.
    pub bins: Option<usize>,
    pub labeled: usize,
    pub seed: u64,
    pub outcome: DownstreamOutcome,
    pub final_report: EvalReport,
}

impl CellRun {
    pub fn best_report(&self) -> &EvalReport {
        self.outcome.best.as_ref().map_or(&self.final_report, |(_, r)| r)
    }
}

/// Mean and sample standard deviation across seeds of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub bins: Option<usize>,
    pub labeled: usize,
    pub runs: usize,
    pub mean_positioning_error: f64,
    pub std_positioning_error: f64,
    pub mean_best_positioning_error: f64,
    pub std_best_positioning_error: f64,
    pub mean_mae_azimuth: f64,
    pub mean_mae_distance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResults {
    pub pretrain: Vec<PretrainRun>,
    pub cells: Vec<CellRun>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ExperimentResults {
    /// One row per `(method, bins, labeled)` in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Method, Option<usize>, usize)> = Vec::new();
        for c in &self.cells {
            let k = (c.method, c.bins, c.labeled);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(method, bins, labeled)| {
                let runs: Vec<&CellRun> = self
                    .cells
                    .iter()
                    .filter(|c| (c.method, c.bins, c.labeled) == (method, bins, labeled))
                    .collect();
                let collect = |f: &dyn Fn(&CellRun) -> f64| runs.iter().map(|c| f(c)).collect::<Vec<_>>();
                let (mp, sp) = mean_std(&collect(&|c| c.final_report.mean_positioning_error));
                let (mb, sb) = mean_std(&collect(&|c| c.best_report().mean_positioning_error));
                SummaryRow {
                    method,
                    bins,
                    labeled,
                    runs: runs.len(),
                    mean_positioning_error: mp,
                    std_positioning_error: sp,
                    mean_best_positioning_error: mb,
                    std_best_positioning_error: sb,
                    mean_mae_azimuth: mean_std(&collect(&|c| c.final_report.mae_azimuth)).0,
                    mean_mae_distance: mean_std(&collect(&|c| c.final_report.mae_distance)).0,
                }
            })
            .collect()
    }
}

/// The three splits an experiment consumes.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub pretrain: Dataset,
    pub labeled: Dataset,
    pub validation: Dataset,
}

impl ExperimentData {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let (pretrain, labeled, validation) = generate_datasets(&cfg.scene, cfg.data.sizes())?;
        Ok(Self {
            pretrain,
            labeled,
            validation,
        })
    }
}

/// Pretrains one encoder and angular head and scores it on `validation`.
pub fn pretrain_run(
    cfg: &ExperimentConfig,
    pretrain_data: &Dataset,
    validation: &LabeledSet,
    bins: usize,
    seed: u64,
) -> Result<(Encoder, AngularHead, PretrainRun)> {
    let grid = AngularGrid::new(cfg.scene.df_range_deg, bins)?;
    let mut set = PretrainSet::from_dataset(pretrain_data, &grid)?;
    if cfg.pretrain.drop_undetected {
        set = set.without_undetected();
    }
    let mut rng = run_rng(seed, STREAM_PRETRAIN, bins, 0);
    let scale = magnitude_scale(&pretrain_data.snapshots);
    let mut encoder = new_encoder(&cfg.model, &cfg.scene, scale, &mut rng)?;
    let mut head = new_angular_head(&cfg.model, bins, &mut rng);
    let pcfg = PretrainConfig {
        bins,
        ..cfg.pretrain.clone()
    };
    let losses = pretrain(&mut encoder, &mut head, &set, &pcfg, &mut rng)?;
    let azimuth_errors = evaluate_pretrain(&mut encoder, &mut head, validation, &grid)?;
    Ok((
        encoder,
        head,
        PretrainRun {
            seed,
            bins,
            losses,
            azimuth_errors,
            bin_width_deg: grid.bin_width(),
        },
    ))
}

fn fine_tune(
    cfg: &ExperimentConfig,
    mut encoder: Encoder,
    train: &LabeledSet,
    validation: &LabeledSet,
    pretrained: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(DownstreamOutcome, EvalReport)> {
    let mut head = new_polar_head(&cfg.model, &cfg.scene, rng);
    let outcome = downstream_train(&mut encoder, &mut head, train, Some(validation), &cfg.downstream, pretrained, rng)?;
    let report = evaluate_downstream(&mut encoder, &mut head, validation)?;
    Ok((outcome, report))
}

/// Runs every cell of the grid on the given splits.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentResults> {
    cfg.validate()?;
    if let Some(m) = cfg.grid.methods.iter().find(|m| !m.is_implemented()) {
        return Err(Error::Config(format!("method {} is reserved and not implemented", m.name())));
    }
    let pool = LabeledSet::from_dataset(&data.labeled)?;
    let validation = LabeledSet::from_dataset(&data.validation)?;
    let mut results = ExperimentResults::default();
    for &seed in &cfg.grid.seeds {
        if cfg.grid.methods.contains(&Method::Proposed) {
            for &bins in &cfg.grid.bins {
                let (encoder, _, run) = pretrain_run(cfg, &data.pretrain, &validation, bins, seed)?;
                results.pretrain.push(run);
                for &n in &cfg.grid.labeled_sizes {
                    let train = pool.prefix(n)?;
                    let mut rng = run_rng(seed, STREAM_FINE_TUNE, bins, n);
                    let (outcome, final_report) = fine_tune(cfg, encoder.clone(), &train, &validation, true, &mut rng)?;
                    results.cells.push(CellRun {
                        method: Method::Proposed,
                        bins: Some(bins),
                        labeled: n,
                        seed,
                        outcome,
                        final_report,
                    });
                }
            }
        }
        if cfg.grid.methods.contains(&Method::BaselineA) {
            for &n in &cfg.grid.labeled_sizes {
                let train = pool.prefix(n)?;
                let mut rng = run_rng(seed, STREAM_BASELINE, 0, n);
                let scale = magnitude_scale(&data.labeled.snapshots[..n]);
                let encoder = new_encoder(&cfg.model, &cfg.scene, scale, &mut rng)?;
                let (outcome, final_report) = fine_tune(cfg, encoder, &train, &validation, false, &mut rng)?;
                results.cells.push(CellRun {
                    method: Method::BaselineA,
                    bins: None,
                    labeled: n,
                    seed,
                    outcome,
                    final_report,
                });
            }
        }
    }
    Ok(results)
}

/// Generates the splits from the scene configuration and runs the grid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentData, ExperimentResults)> {
    let data = ExperimentData::generate(cfg)?;
    let results = run_experiment_on(cfg, &data)?;
    Ok((data, results))
}
