//! Training objectives and their gradients with respect to head outputs.

use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::labels::AngularDistribution;
use crate::scene::PolarPosition;

/// Noisy-OR of the rows `segment` of a row-major `rows × bins` matrix,
/// together with, for every row `m`, the product `∏_{m' ≠ m} (1 − g_{m'})`.
fn fused_prediction(g: &[f64], bins: usize, segment: Range<usize>) -> (Vec<f64>, Vec<f64>) {
    let rows = segment.len();
    let mut fused = vec![0.0; bins];
    let mut others = vec![0.0; rows * bins];
    for k in 0..bins {
        // Prefix and suffix products avoid dividing by (1 − g), which may be 0.
        let keep = |m: usize| 1.0 - g[(segment.start + m) * bins + k];
        let mut prefix = 1.0;
        for m in 0..rows {
            others[m * bins + k] = prefix;
            prefix *= keep(m);
        }
        fused[k] = 1.0 - prefix;
        let mut suffix = 1.0;
        for m in (0..rows).rev() {
            others[m * bins + k] *= suffix;
            suffix *= keep(m);
        }
    }
    (fused, others)
}

/// Pretraining objective `(1/B) Σ_t ‖L_t − L̂_t‖² / K` where `L̂_t` fuses the
/// occupancy rows of snapshot `t` (given by `segments`) with noisy-OR.
///
/// `g` is `rows × K`. Returns the loss and `∂loss/∂g`, same layout as `g`.
pub fn pretrain_loss(
    g: &[f64],
    bins: usize,
    segments: &[Range<usize>],
    targets: &[AngularDistribution],
) -> Result<(f64, Vec<f64>)> {
    if segments.len() != targets.len() {
        return Err(Error::shape("pretrain targets", segments.len(), targets.len()));
    }
    let rows = segments.last().map_or(0, |s| s.end);
    if g.len() != rows * bins {
        return Err(Error::shape("pretrain occupancies", rows * bins, g.len()));
    }
    let batch = segments.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; g.len()];
    for (seg, target) in segments.iter().zip(targets) {
        if target.len() != bins {
            return Err(Error::shape("pretrain target bins", bins, target.len()));
        }
        let (fused, others) = fused_prediction(g, bins, seg.clone());
        let mut sq = 0.0;
        for k in 0..bins {
            let r = target.0[k] - fused[k];
            sq += r * r;
            let d_fused = -2.0 * r / (bins as f64 * batch);
            for m in 0..seg.len() {
                grad[(seg.start + m) * bins + k] = d_fused * others[m * bins + k];
            }
        }
        loss += sq / bins as f64;
    }
    Ok((loss / batch, grad))
}

/// Rectangular coordinates of a polar prediction, azimuth in degrees.
pub fn polar_to_rect(azimuth_deg: f64, distance_m: f64) -> [f64; 2] {
    PolarPosition {
        azimuth_deg,
        distance_m,
    }
    .to_xy()
}

/// Downstream objective `(1/B) Σ ‖p − p̂'‖² / 2`.
///
/// `pred` is `B × 2` with columns `(φ̂, d̂)`; `truth_xy` holds rectangular
/// ground truth. Returns the loss and `∂loss/∂pred`.
pub fn downstream_loss(pred: &[f64], truth_xy: &[[f64; 2]]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != 2 * truth_xy.len() {
        return Err(Error::shape("downstream predictions", 2 * truth_xy.len(), pred.len()));
    }
    let batch = truth_xy.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (p, t)) in pred.chunks_exact(2).zip(truth_xy).enumerate() {
        let (s, c) = (p[0] * PI / 180.0).sin_cos();
        let (ex, ey) = (t[0] - p[1] * c, t[1] - p[1] * s);
        loss += 0.5 * (ex * ex + ey * ey);
        let (dx, dy) = (-ex / batch, -ey / batch);
        grad[2 * i] = (PI / 180.0) * p[1] * (dy * c - dx * s);
        grad[2 * i + 1] = dx * c + dy * s;
    }
    Ok((loss / batch, grad))
}
