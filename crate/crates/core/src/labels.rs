//! Angular-domain probability vectors.
//!
//! A detected azimuth becomes a Gaussian over `K` equal-width bins of the
//! direction-finding range, with standard deviation equal to one bin width.
//! Several per-vehicle vectors are fused with the element-wise noisy-OR
//! `1 − ∏(1 − w_i)`, for both image-derived targets and network predictions.

use crate::error::{Error, Result};

/// Partition of `[0, range]` into `bins` equal intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularGrid {
    range_deg: f64,
    bins: usize,
}

impl AngularGrid {
    pub fn new(range_deg: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("angular grid needs at least one bin".into()));
        }
        if !(range_deg.is_finite() && range_deg > 0.0) {
            return Err(Error::Config(format!("direction-finding range must be positive, got {range_deg}")));
        }
        Ok(Self { range_deg, bins })
    }

    pub fn range_deg(&self) -> f64 {
        self.range_deg
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_width(&self) -> f64 {
        self.range_deg / self.bins as f64
    }

    /// Center of zero-based bin `k`, i.e. `(k + 1/2)·ω`.
    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width()
    }

    /// One-based bin index `⌈φ/ω⌉`, with `φ = 0` mapped to bin 1 and the
    /// result capped at `K`.
    pub fn bin_of(&self, azimuth_deg: f64) -> usize {
        let r = (azimuth_deg / self.bin_width()).ceil();
        (r.max(1.0) as usize).min(self.bins)
    }
}

/// Length-`K` vector with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularDistribution(pub Vec<f64>);

impl AngularDistribution {
    pub fn zeros(bins: usize) -> Self {
        Self(vec![0.0; bins])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One-based index of the largest entry; the first one wins ties.
    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = k;
            }
        }
        best + 1
    }
}

pub fn gaussian_vector(grid: &AngularGrid, azimuth_deg: f64) -> Result<AngularDistribution> {
    if !(azimuth_deg >= 0.0 && azimuth_deg <= grid.range_deg) {
        return Err(Error::AzimuthOutOfRange {
            azimuth_deg,
            range_deg: grid.range_deg,
        });
    }
    let w = grid.bin_width();
    let denom = 2.0 * w * w;
    let mut v: Vec<f64> = (0..grid.bins)
        .map(|k| {
            let d = grid.center(k) - azimuth_deg;
            (-d * d / denom).exp()
        })
        .collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    Ok(AngularDistribution(v))
}

/// Element-wise noisy-OR `1 − ∏(1 − w_i)`.
///
/// Evaluated as `−expm1(Σ ln(1 − w_i))` so tiny occupancies are not lost to
/// cancellation. A single input is returned as is.
pub fn nor_fuse(dists: &[AngularDistribution]) -> Result<AngularDistribution> {
    let first = dists.first().ok_or(Error::EmptyFusion)?;
    let bins = first.len();
    if dists.len() == 1 {
        return Ok(first.clone());
    }
    let mut log_keep = vec![0.0; bins];
    for (i, d) in dists.iter().enumerate() {
        if d.len() != bins {
            return Err(Error::shape(format!("noisy-or input {i}"), bins, d.len()));
        }
        for (acc, &w) in log_keep.iter_mut().zip(&d.0) {
            *acc += (-w).ln_1p();
        }
    }
    Ok(AngularDistribution(log_keep.into_iter().map(|s| -s.exp_m1()).collect()))
}

/// Image-derived target vector for one snapshot. An empty detection list
/// yields the all-zeros vector.
pub fn label_snapshot(grid: &AngularGrid, azimuths: &[f64]) -> Result<AngularDistribution> {
    if azimuths.is_empty() {
        return Ok(AngularDistribution::zeros(grid.bins));
    }
    let dists = azimuths
        .iter()
        .map(|&a| gaussian_vector(grid, a))
        .collect::<Result<Vec<_>>>()?;
    nor_fuse(&dists)
}
