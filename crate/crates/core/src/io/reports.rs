//! CSV outputs. Every file has a fixed header; see the README for the
//! column meanings.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::train::downstream::{DownstreamOutcome, ValidationPoint};
use crate::train::eval::{fraction_within, EvalReport};
use crate::train::experiment::{CellRun, ExperimentResults, PretrainRun, SummaryRow};

pub const PRETRAIN_LOSS: &str = "pretrain_loss.csv";
pub const PRETRAIN_CDF: &str = "pretrain_cdf.csv";
pub const PRETRAIN_RUNS: &str = "pretrain_runs.csv";
pub const DOWNSTREAM_LOSS: &str = "downstream_loss.csv";
pub const VALIDATION_CURVE: &str = "validation_curve.csv";
pub const REPORTS: &str = "reports.csv";
pub const AZIMUTH_CDF: &str = "azimuth_cdf.csv";
pub const SUMMARY: &str = "summary.csv";

/// Identifies one training run in long-format tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunKey {
    pub method: &'static str,
    pub bins: Option<usize>,
    pub labeled: Option<usize>,
    pub seed: u64,
}

impl RunKey {
    fn of(cell: &CellRun) -> Self {
        Self {
            method: cell.method.name(),
            bins: cell.bins,
            labeled: Some(cell.labeled),
            seed: cell.seed,
        }
    }

    fn of_pretrain(run: &PretrainRun) -> Self {
        Self {
            method: "pretrain",
            bins: Some(run.bins),
            labeled: None,
            seed: run.seed,
        }
    }
}

#[derive(Serialize)]
struct LossRow {
    method: &'static str,
    bins: Option<usize>,
    labeled: Option<usize>,
    seed: u64,
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct CdfRow {
    method: &'static str,
    bins: Option<usize>,
    labeled: Option<usize>,
    seed: u64,
    rank: usize,
    error_deg: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct PretrainRunRow {
    seed: u64,
    bins: usize,
    bin_width_deg: f64,
    iterations: usize,
    initial_loss: f64,
    final_loss: f64,
    within_one_bin: f64,
    within_two_bins: f64,
}

#[derive(Serialize)]
struct ValidationRow {
    method: &'static str,
    bins: Option<usize>,
    labeled: Option<usize>,
    seed: u64,
    epoch: usize,
    mean_positioning_error_m: f64,
    mae_azimuth_deg: f64,
    mae_distance_m: f64,
}

#[derive(Serialize)]
struct ReportRow {
    method: &'static str,
    bins: Option<usize>,
    labeled: Option<usize>,
    seed: u64,
    stage: &'static str,
    epoch: usize,
    samples: usize,
    mae_azimuth_deg: f64,
    mae_distance_m: f64,
    mean_positioning_error_m: f64,
}

#[derive(Serialize)]
struct SummaryCsvRow {
    method: &'static str,
    bins: Option<usize>,
    labeled: usize,
    runs: usize,
    mean_positioning_error_m: f64,
    std_positioning_error_m: f64,
    mean_best_positioning_error_m: f64,
    std_best_positioning_error_m: f64,
    mean_mae_azimuth_deg: f64,
    mean_mae_distance_m: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn loss_rows(key: RunKey, losses: &[f64], first_step: usize) -> impl Iterator<Item = LossRow> + '_ {
    losses.iter().enumerate().map(move |(i, &loss)| LossRow {
        method: key.method,
        bins: key.bins,
        labeled: key.labeled,
        seed: key.seed,
        step: i + first_step,
        loss,
    })
}

fn cdf_rows(key: RunKey, sorted: &[f64]) -> impl Iterator<Item = CdfRow> + '_ {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().map(move |(i, &e)| CdfRow {
        method: key.method,
        bins: key.bins,
        labeled: key.labeled,
        seed: key.seed,
        rank: i + 1,
        error_deg: e,
        fraction: (i + 1) as f64 / n,
    })
}

fn validation_rows(key: RunKey, points: &[ValidationPoint]) -> impl Iterator<Item = ValidationRow> + '_ {
    points.iter().map(move |p| ValidationRow {
        method: key.method,
        bins: key.bins,
        labeled: key.labeled,
        seed: key.seed,
        epoch: p.epoch,
        mean_positioning_error_m: p.mean_positioning_error,
        mae_azimuth_deg: p.mae_azimuth,
        mae_distance_m: p.mae_distance,
    })
}

fn report_row(key: RunKey, stage: &'static str, epoch: usize, r: &EvalReport) -> ReportRow {
    ReportRow {
        method: key.method,
        bins: key.bins,
        labeled: key.labeled,
        seed: key.seed,
        stage,
        epoch,
        samples: r.azimuth_error_cdf.len(),
        mae_azimuth_deg: r.mae_azimuth,
        mae_distance_m: r.mae_distance,
        mean_positioning_error_m: r.mean_positioning_error,
    }
}

/// Pretraining loss per iteration (`step` starts at 0).
pub fn write_pretrain_loss(path: &Path, key: RunKey, losses: &[f64]) -> Result<()> {
    write_rows(path, loss_rows(key, losses, 0))
}

/// Downstream loss per epoch (`step` starts at 1).
pub fn write_downstream_loss(path: &Path, key: RunKey, losses: &[f64]) -> Result<()> {
    write_rows(path, loss_rows(key, losses, 1))
}

pub fn write_cdf(path: &Path, key: RunKey, sorted_errors: &[f64]) -> Result<()> {
    write_rows(path, cdf_rows(key, sorted_errors))
}

pub fn write_validation_curve(path: &Path, key: RunKey, outcome: &DownstreamOutcome) -> Result<()> {
    write_rows(path, validation_rows(key, &outcome.validation))
}

/// Final-epoch and, when recorded, best-epoch rows of one run.
pub fn write_report(path: &Path, key: RunKey, epochs: usize, final_report: &EvalReport, best: Option<&(usize, EvalReport)>) -> Result<()> {
    let mut rows = vec![report_row(key, "final", epochs, final_report)];
    if let Some((epoch, r)) = best {
        rows.push(report_row(key, "best", *epoch, r));
    }
    write_rows(path, rows)
}

fn pretrain_run_row(run: &PretrainRun) -> PretrainRunRow {
    PretrainRunRow {
        seed: run.seed,
        bins: run.bins,
        bin_width_deg: run.bin_width_deg,
        iterations: run.losses.len(),
        initial_loss: run.losses.first().copied().unwrap_or(f64::NAN),
        final_loss: run.losses.last().copied().unwrap_or(f64::NAN),
        within_one_bin: fraction_within(&run.azimuth_errors, run.bin_width_deg),
        within_two_bins: fraction_within(&run.azimuth_errors, 2.0 * run.bin_width_deg),
    }
}

fn summary_row(s: &SummaryRow) -> SummaryCsvRow {
    SummaryCsvRow {
        method: s.method.name(),
        bins: s.bins,
        labeled: s.labeled,
        runs: s.runs,
        mean_positioning_error_m: s.mean_positioning_error,
        std_positioning_error_m: s.std_positioning_error,
        mean_best_positioning_error_m: s.mean_best_positioning_error,
        std_best_positioning_error_m: s.std_best_positioning_error,
        mean_mae_azimuth_deg: s.mean_mae_azimuth,
        mean_mae_distance_m: s.mean_mae_distance,
    }
}

/// Writes every table of an experiment into `dir`; returns the file names.
pub fn write_experiment(dir: &Path, results: &ExperimentResults, epochs: usize) -> Result<Vec<&'static str>> {
    write_rows(
        &dir.join(PRETRAIN_LOSS),
        results
            .pretrain
            .iter()
            .flat_map(|r| loss_rows(RunKey::of_pretrain(r), &r.losses, 0)),
    )?;
    write_rows(
        &dir.join(PRETRAIN_CDF),
        results
            .pretrain
            .iter()
            .flat_map(|r| cdf_rows(RunKey::of_pretrain(r), &r.azimuth_errors)),
    )?;
    write_rows(&dir.join(PRETRAIN_RUNS), results.pretrain.iter().map(pretrain_run_row))?;
    write_rows(
        &dir.join(DOWNSTREAM_LOSS),
        results
            .cells
            .iter()
            .flat_map(|c| loss_rows(RunKey::of(c), &c.outcome.epoch_losses, 1)),
    )?;
    write_rows(
        &dir.join(VALIDATION_CURVE),
        results
            .cells
            .iter()
            .flat_map(|c| validation_rows(RunKey::of(c), &c.outcome.validation)),
    )?;
    write_rows(
        &dir.join(REPORTS),
        results.cells.iter().flat_map(|c| {
            let key = RunKey::of(c);
            let mut rows = vec![report_row(key, "final", epochs, &c.final_report)];
            if let Some((e, r)) = &c.outcome.best {
                rows.push(report_row(key, "best", *e, r));
            }
            rows
        }),
    )?;
    write_rows(
        &dir.join(AZIMUTH_CDF),
        results
            .cells
            .iter()
            .flat_map(|c| cdf_rows(RunKey::of(c), &c.final_report.azimuth_error_cdf)),
    )?;
    write_rows(&dir.join(SUMMARY), results.summary().iter().map(summary_row))?;
    Ok(vec![
        PRETRAIN_LOSS,
        PRETRAIN_CDF,
        PRETRAIN_RUNS,
        DOWNSTREAM_LOSS,
        VALIDATION_CURVE,
        REPORTS,
        AZIMUTH_CDF,
        SUMMARY,
    ])
}
