//! Datasets converted once into network-ready form.

use std::ops::Range;

use crate::csi::{magnitude_percentile_99, to_tensor};
use crate::error::{Error, Result};
use crate::labels::{label_snapshot, AngularDistribution, AngularGrid};
use crate::nn::model::batch_from_csi;
use crate::nn::Tensor;
use crate::scene::{Dataset, PolarPosition, Snapshot};

fn nhwc_sample(h: &crate::csi::ComplexCsiMatrix) -> Result<Vec<f64>> {
    Ok(batch_from_csi(std::iter::once(&to_tensor(h)))?.into_data())
}

fn gather(samples: &[Vec<f64>], idx: impl Iterator<Item = usize>, hw: (usize, usize)) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for i in idx {
        data.extend_from_slice(&samples[i]);
        n += 1;
    }
    Tensor::new(vec![n, hw.0, hw.1, 3], data)
}

/// 99th-percentile CSI magnitude over snapshots, the divisor applied to the
/// magnitude channel by the encoder.
pub fn magnitude_scale(snapshots: &[Snapshot]) -> f64 {
    magnitude_percentile_99(snapshots.iter().flat_map(|s| s.csi.iter()))
}

/// Unlabeled snapshots: every vehicle's CSI tensor plus the image-derived
/// target of its snapshot.
#[derive(Debug, Clone)]
pub struct PretrainSet {
    pub input_hw: (usize, usize),
    samples: Vec<Vec<f64>>,
    segments: Vec<Range<usize>>,
    targets: Vec<AngularDistribution>,
}

impl PretrainSet {
    /// Snapshots without any CSI carry no trainable signal and are dropped.
    pub fn from_dataset(ds: &Dataset, grid: &AngularGrid) -> Result<Self> {
        let input_hw = (ds.scene.num_antennas, ds.scene.num_subcarriers);
        let mut samples = Vec::new();
        let mut segments = Vec::new();
        let mut targets = Vec::new();
        for snap in ds.snapshots.iter().filter(|s| !s.csi.is_empty()) {
            let start = samples.len();
            for h in &snap.csi {
                samples.push(nhwc_sample(h)?);
            }
            segments.push(start..samples.len());
            targets.push(label_snapshot(grid, &snap.detected_azimuths)?);
        }
        Ok(Self {
            input_hw,
            samples,
            segments,
            targets,
        })
    }

    /// Keeps only snapshots with at least one camera detection, i.e. a
    /// non-zero target.
    pub fn without_undetected(mut self) -> Self {
        let keep: Vec<bool> = self.targets.iter().map(|t| t.0.iter().any(|&w| w > 0.0)).collect();
        let mut samples = Vec::new();
        let mut segments = Vec::new();
        for (seg, _) in self.segments.iter().zip(&keep).filter(|(_, k)| **k) {
            let start = samples.len();
            samples.extend(self.samples[seg.clone()].iter().cloned());
            segments.push(start..samples.len());
        }
        let mut flags = keep.into_iter();
        self.targets.retain(|_| flags.next().unwrap_or(false));
        self.samples = samples;
        self.segments = segments;
        self
    }

    /// Number of snapshots.
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn targets(&self) -> &[AngularDistribution] {
        &self.targets
    }

    /// Stacked CSI of the chosen snapshots, their row ranges within the
    /// stack, and their targets.
    pub fn batch(&self, snapshots: &[usize]) -> Result<(Tensor, Vec<Range<usize>>, Vec<AngularDistribution>)> {
        let mut segs = Vec::with_capacity(snapshots.len());
        let mut rows = Vec::new();
        for &t in snapshots {
            let seg = self.segments.get(t).ok_or_else(|| Error::shape("pretrain batch index", self.len(), t))?;
            let start = rows.len();
            rows.extend(seg.clone());
            segs.push(start..rows.len());
        }
        let x = gather(&self.samples, rows.into_iter(), self.input_hw)?;
        let targets = snapshots.iter().map(|&t| self.targets[t].clone()).collect();
        Ok((x, segs, targets))
    }
}

/// Single-vehicle samples with known positions.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub input_hw: (usize, usize),
    samples: Vec<Vec<f64>>,
    truth: Vec<PolarPosition>,
    truth_xy: Vec<[f64; 2]>,
}

impl LabeledSet {
    /// Each vehicle of every snapshot becomes one sample.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let input_hw = (ds.scene.num_antennas, ds.scene.num_subcarriers);
        let mut samples = Vec::new();
        let mut truth = Vec::new();
        for snap in &ds.snapshots {
            let positions = snap
                .truth_positions
                .as_ref()
                .ok_or_else(|| Error::Corrupt(format!("{} split lacks ground-truth positions", ds.kind.name())))?;
            if positions.len() != snap.csi.len() {
                return Err(Error::CountMismatch(format!(
                    "snapshot {} has {} csi matrices and {} positions",
                    snap.time_index,
                    snap.csi.len(),
                    positions.len()
                )));
            }
            for (h, p) in snap.csi.iter().zip(positions) {
                samples.push(nhwc_sample(h)?);
                truth.push(*p);
            }
        }
        let truth_xy = truth.iter().map(|p| p.to_xy()).collect();
        Ok(Self {
            input_hw,
            samples,
            truth,
            truth_xy,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn truth(&self) -> &[PolarPosition] {
        &self.truth
    }

    pub fn truth_xy(&self) -> &[[f64; 2]] {
        &self.truth_xy
    }

    /// The first `n` samples.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::CountMismatch(format!("requested {n} labeled samples, only {} available", self.len())));
        }
        Ok(Self {
            input_hw: self.input_hw,
            samples: self.samples[..n].to_vec(),
            truth: self.truth[..n].to_vec(),
            truth_xy: self.truth_xy[..n].to_vec(),
        })
    }

    pub fn inputs(&self, idx: &[usize]) -> Result<Tensor> {
        gather(&self.samples, idx.iter().copied(), self.input_hw)
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<[f64; 2]>)> {
        Ok((self.inputs(idx)?, idx.iter().map(|&i| self.truth_xy[i]).collect()))
    }
}
