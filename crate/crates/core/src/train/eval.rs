//! Validation metrics.

use super::data::LabeledSet;
use crate::error::Result;
use crate::labels::{AngularDistribution, AngularGrid};
use crate::nn::{AngularHead, Encoder, Mode, PolarHead, Tensor};
use crate::scene::PolarPosition;

const CHUNK: usize = 128;

fn features(encoder: &mut Encoder, set: &LabeledSet, mut each: impl FnMut(&Tensor) -> Result<()>) -> Result<()> {
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let z = encoder.forward(&set.inputs(chunk)?, Mode::Inference)?;
        each(&z)?;
    }
    Ok(())
}

/// Inference-mode occupancy vectors, one per sample.
pub fn predict_occupancy(encoder: &mut Encoder, head: &mut AngularHead, set: &LabeledSet) -> Result<Vec<AngularDistribution>> {
    let mut out = Vec::with_capacity(set.len());
    features(encoder, set, |z| {
        let g = head.forward(z)?;
        out.extend((0..g.rows()).map(|i| AngularDistribution(g.row(i).to_vec())));
        Ok(())
    })?;
    Ok(out)
}

/// Inference-mode `(φ̂, d̂)` predictions, one per sample.
pub fn predict_polar(encoder: &mut Encoder, head: &mut PolarHead, set: &LabeledSet) -> Result<Vec<PolarPosition>> {
    let mut out = Vec::with_capacity(set.len());
    features(encoder, set, |z| {
        let p = head.forward(z)?;
        out.extend(p.data().chunks_exact(2).map(|r| PolarPosition {
            azimuth_deg: r[0],
            distance_m: r[1],
        }));
        Ok(())
    })?;
    Ok(out)
}

/// Per-sample azimuth error `ω·|r − r̂|` between the true bin and the
/// arg-max bin.
pub fn bin_errors(grid: &AngularGrid, truth: &[PolarPosition], predicted: &[AngularDistribution]) -> Vec<f64> {
    truth
        .iter()
        .zip(predicted)
        .map(|(p, g)| {
            let r = grid.bin_of(p.azimuth_deg) as f64;
            grid.bin_width() * (r - g.peak_bin() as f64).abs()
        })
        .collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Sorted azimuth errors of the angular head on single-vehicle samples.
pub fn evaluate_pretrain(
    encoder: &mut Encoder,
    head: &mut AngularHead,
    set: &LabeledSet,
    grid: &AngularGrid,
) -> Result<Vec<f64>> {
    let predicted = predict_occupancy(encoder, head, set)?;
    Ok(sorted(bin_errors(grid, set.truth(), &predicted)))
}

/// Fraction of `errors` not exceeding `threshold`.
pub fn fraction_within(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e <= threshold).count() as f64 / errors.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted `|φ − φ̂|` in degrees.
    pub azimuth_error_cdf: Vec<f64>,
    pub mae_azimuth: f64,
    pub mae_distance: f64,
    /// Mean Euclidean distance between true and predicted positions, meters.
    pub mean_positioning_error: f64,
}

impl EvalReport {
    pub fn from_predictions(truth: &[PolarPosition], predicted: &[PolarPosition]) -> Self {
        let n = truth.len().max(1) as f64;
        let mut az = Vec::with_capacity(truth.len());
        let (mut dist, mut pos) = (0.0, 0.0);
        for (t, p) in truth.iter().zip(predicted) {
            az.push((t.azimuth_deg - p.azimuth_deg).abs());
            dist += (t.distance_m - p.distance_m).abs();
            let (a, b) = (t.to_xy(), p.to_xy());
            pos += (a[0] - b[0]).hypot(a[1] - b[1]);
        }
        let mae_azimuth = az.iter().sum::<f64>() / n;
        Self {
            azimuth_error_cdf: sorted(az),
            mae_azimuth,
            mae_distance: dist / n,
            mean_positioning_error: pos / n,
        }
    }
}

pub fn evaluate_downstream(encoder: &mut Encoder, head: &mut PolarHead, set: &LabeledSet) -> Result<EvalReport> {
    let predicted = predict_polar(encoder, head, set)?;
    Ok(EvalReport::from_predictions(set.truth(), &predicted))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(a: f64, d: f64) -> PolarPosition {
        PolarPosition {
            azimuth_deg: a,
            distance_m: d,
        }
    }

    #[test]
    fn perfect_and_radial_offset() {
        let truth = vec![pos(30.0, 10.0), pos(100.0, 20.0)];
        let r = EvalReport::from_predictions(&truth, &truth);
        assert_eq!((r.mae_azimuth, r.mae_distance, r.mean_positioning_error), (0.0, 0.0, 0.0));
        let off: Vec<_> = truth.iter().map(|p| pos(p.azimuth_deg, p.distance_m + 1.0)).collect();
        let r = EvalReport::from_predictions(&truth, &off);
        assert!((r.mae_distance - 1.0).abs() < 1e-12 && (r.mean_positioning_error - 1.0).abs() < 1e-12);
        assert_eq!(r.mae_azimuth, 0.0);
    }

    #[test]
    fn bin_error_examples() {
        let grid = AngularGrid::new(180.0, 30).unwrap();
        let mut g = AngularDistribution::zeros(30);
        g.0[14] = 0.9;
        assert_eq!(bin_errors(&grid, &[pos(87.0, 5.0)], &[g.clone()]), vec![0.0]);
        assert_eq!(bin_errors(&grid, &[pos(93.0, 5.0)], &[g]), vec![6.0]);
    }

    #[test]
    fn fractions() {
        assert_eq!(fraction_within(&[0.0, 1.0, 2.0, 3.0], 2.0), 0.75);
        assert_eq!(fraction_within(&[], 2.0), 0.0);
    }
}
