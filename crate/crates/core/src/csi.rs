//! Complex CSI matrices and their real three-channel encoding.
//!
//! Each complex entry `h[n][k]` becomes `(|h|, sin δ, cos δ)` where `δ` is
//! the phase difference between antenna `n` and antenna `(n + 1) mod N_B`
//! on the same subcarrier.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Channel responses, `num_antennas × num_subcarriers`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexCsiMatrix {
    num_antennas: usize,
    num_subcarriers: usize,
    entries: Vec<Complex64>,
}

impl ComplexCsiMatrix {
    pub fn zeros(num_antennas: usize, num_subcarriers: usize) -> Self {
        Self {
            num_antennas,
            num_subcarriers,
            entries: vec![Complex64::new(0.0, 0.0); num_antennas * num_subcarriers],
        }
    }

    pub fn from_entries(
        num_antennas: usize,
        num_subcarriers: usize,
        entries: Vec<Complex64>,
    ) -> Result<Self> {
        if entries.len() != num_antennas * num_subcarriers {
            return Err(Error::shape(
                "csi matrix entries",
                num_antennas * num_subcarriers,
                entries.len(),
            ));
        }
        if entries.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(Error::Corrupt("csi matrix holds a non-finite entry".into()));
        }
        Ok(Self {
            num_antennas,
            num_subcarriers,
            entries,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.entries[antenna * self.num_subcarriers + subcarrier]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|h| h.norm_sqr()).sum()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            num_antennas: self.num_antennas,
            num_subcarriers: self.num_subcarriers,
            entries: self.entries.iter().map(|h| h * c).collect(),
        }
    }
}

/// Real encoding of one CSI matrix: `3 × num_antennas × num_subcarriers`,
/// channel-major. Channel 0 is magnitude, 1 is `sin δ`, 2 is `cos δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensor {
    num_antennas: usize,
    num_subcarriers: usize,
    data: Vec<f64>,
}

impl CsiTensor {
    pub const CHANNELS: usize = 3;

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, antenna: usize, subcarrier: usize) -> f64 {
        self.data[(channel * self.num_antennas + antenna) * self.num_subcarriers + subcarrier]
    }

    /// Divides the magnitude channel by `scale`.
    pub fn normalize_magnitude(&mut self, scale: f64) {
        let plane = self.num_antennas * self.num_subcarriers;
        for m in &mut self.data[..plane] {
            *m /= scale;
        }
    }
}

fn arg_or_zero(h: Complex64) -> f64 {
    if h.re == 0.0 && h.im == 0.0 {
        0.0
    } else {
        h.arg()
    }
}

/// Phase difference between each antenna and the next one (cyclically),
/// per subcarrier. Returned row-major `num_antennas × num_subcarriers`.
///
/// Computed as `arg(h[n] · conj(h[n+1]))`, which equals the raw difference
/// of arguments modulo 2π. A zero entry contributes phase 0.
pub fn phase_differences(h: &ComplexCsiMatrix) -> Vec<f64> {
    let (nb, nc) = (h.num_antennas, h.num_subcarriers);
    let mut delta = vec![0.0; nb * nc];
    for n in 0..nb {
        let next = (n + 1) % nb;
        for k in 0..nc {
            let a = h.get(n, k);
            let b = h.get(next, k);
            delta[n * nc + k] = if a == Complex64::new(0.0, 0.0) || b == Complex64::new(0.0, 0.0) {
                arg_or_zero(a) - arg_or_zero(b)
            } else {
                (a * b.conj()).arg()
            };
        }
    }
    delta
}

pub fn to_tensor(h: &ComplexCsiMatrix) -> CsiTensor {
    let (nb, nc) = (h.num_antennas, h.num_subcarriers);
    let plane = nb * nc;
    let delta = phase_differences(h);
    let mut data = vec![0.0; 3 * plane];
    for (i, (entry, d)) in h.entries.iter().zip(&delta).enumerate() {
        let (s, c) = d.sin_cos();
        data[i] = entry.norm();
        data[plane + i] = s;
        data[2 * plane + i] = c;
    }
    CsiTensor {
        num_antennas: nb,
        num_subcarriers: nc,
        data,
    }
}

/// Stacks the per-vehicle tensors of one snapshot into a
/// `V × 3 × N_B × N_C` buffer, preserving order.
pub fn stack_snapshot(csi: &[ComplexCsiMatrix]) -> Result<(Vec<usize>, Vec<f64>)> {
    let first = csi
        .first()
        .ok_or_else(|| Error::shape("snapshot stack", "at least one csi matrix", 0))?;
    let (nb, nc) = (first.num_antennas, first.num_subcarriers);
    let mut out = Vec::with_capacity(csi.len() * 3 * nb * nc);
    for (i, h) in csi.iter().enumerate() {
        if h.num_antennas != nb || h.num_subcarriers != nc {
            return Err(Error::shape(
                format!("snapshot stack entry {i}"),
                format!("{nb}x{nc}"),
                format!("{}x{}", h.num_antennas, h.num_subcarriers),
            ));
        }
        out.extend_from_slice(&to_tensor(h).data);
    }
    Ok((vec![csi.len(), 3, nb, nc], out))
}

/// 99th-percentile entry magnitude over a collection of matrices, used as a
/// dataset-wide divisor for the magnitude channel. Returns 1 when every
/// magnitude is zero.
pub fn magnitude_percentile_99<'a>(matrices: impl IntoIterator<Item = &'a ComplexCsiMatrix>) -> f64 {
    let mut mags: Vec<f64> = matrices
        .into_iter()
        .flat_map(|h| h.entries.iter().map(|e| e.norm()))
        .collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() as f64 - 1.0) * 0.99).round() as usize;
    let p = mags[idx];
    if p > 0.0 {
        p
    } else {
        1.0
    }
}
