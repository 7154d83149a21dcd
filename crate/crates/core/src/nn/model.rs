//! Encoder, the two fully connected heads, and their configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{add, sigmoid, softplus, AvgPool2, BatchNorm, Conv2d, Linear, Mode, Module, Param, Relu};
use super::tensor::Tensor;
use crate::csi::CsiTensor;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of the first and second residual block.
    pub block_channels: [usize; 2],
    /// Encoder feature dimension.
    pub feature_dim: usize,
    /// Hidden width of both fully connected heads.
    pub hidden_width: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            block_channels: [16, 32],
            feature_dim: 32,
            hidden_width: 128,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels.contains(&0) || self.feature_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0 && self.bn_eps > 0.0) {
            return Err(Error::Config("batch-norm momentum must lie in (0, 1] and eps be positive".into()));
        }
        Ok(())
    }
}

/// Converts channel-major `3 × N_B × N_C` tensors into one NHWC batch.
pub fn batch_from_csi<'a>(tensors: impl IntoIterator<Item = &'a CsiTensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut n = 0;
    for t in tensors {
        let (h, w) = (t.num_antennas(), t.num_subcarriers());
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::shape("csi batch", format!("{}x{}", d.0, d.1), format!("{h}x{w}")))
            }
            _ => {}
        }
        let src = t.data();
        let plane = h * w;
        for p in 0..plane {
            for c in 0..CsiTensor::CHANNELS {
                data.push(src[c * plane + p]);
            }
        }
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::shape("csi batch", "≥ 1 sample", 0))?;
    Tensor::new(vec![n, h, w, CsiTensor::CHANNELS], data)
}

/// Two 3×3 convolutions with batch norm and a 1×1 skip convolution,
/// followed by 2×2 average pooling.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    relu1: Relu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub skip: Conv2d,
    relu_out: Relu,
    pool: AvgPool2,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, 1, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), cout, cfg.bn_momentum, cfg.bn_eps),
            relu1: Relu::default(),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), cout, cfg.bn_momentum, cfg.bn_eps),
            skip: Conv2d::new(&format!("{name}.skip"), cin, cout, 1, 0, rng),
            relu_out: Relu::default(),
            pool: AvgPool2::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let a = self.conv1.forward(x)?;
        let a = self.bn1.forward(&a, mode)?;
        let a = self.relu1.forward(&a);
        let a = self.conv2.forward(&a)?;
        let a = self.bn2.forward(&a, mode)?;
        let s = self.skip.forward(x)?;
        let y = self.relu_out.forward(&add(&a, &s)?);
        self.pool.forward(&y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let d = self.pool.backward(dy)?;
        let d = self.relu_out.backward(&d)?;
        let ds = self.skip.backward(&d)?;
        let d = self.bn2.backward(&d)?;
        let d = self.conv2.backward(&d)?;
        let d = self.relu1.backward(&d)?;
        let d = self.bn1.backward(&d)?;
        let d = self.conv1.backward(&d)?;
        add(&d, &ds)
    }

    fn pattern(&self, out: &mut Vec<bool>) {
        out.extend_from_slice(self.relu1.pattern());
        out.extend_from_slice(self.relu_out.pattern());
    }

    /// ReLU activation pattern of the last forward pass.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut v = Vec::new();
        self.pattern(&mut v);
        v
    }
}

impl Module for ResidualBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        v.extend(self.skip.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        v.extend(self.skip.params_mut());
        v
    }
}

/// Two residual blocks and a fully connected projection to the feature
/// dimension.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub input_hw: (usize, usize),
    /// Divisor of the magnitude channel, fixed before training.
    pub input_scale: Param,
    pub rb1: ResidualBlock,
    pub rb2: ResidualBlock,
    pub fc: Linear,
    pooled_shape: [usize; 3],
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, input_hw: (usize, usize), rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (h1, w1) = AvgPool2::output_hw(input_hw.0, input_hw.1);
        let (h2, w2) = AvgPool2::output_hw(h1, w1);
        if h2 == 0 || w2 == 0 {
            return Err(Error::shape("encoder input", "at least 4x4", format!("{}x{}", input_hw.0, input_hw.1)));
        }
        let [c1, c2] = cfg.block_channels;
        let rb1 = ResidualBlock::new("encoder.rb1", CsiTensor::CHANNELS, c1, cfg, rng);
        let rb2 = ResidualBlock::new("encoder.rb2", c1, c2, cfg, rng);
        let fc = Linear::new("encoder.fc", h2 * w2 * c2, cfg.feature_dim, rng);
        Ok(Self {
            input_hw,
            input_scale: Param::buffer("encoder.input_scale".into(), vec![1], vec![1.0]),
            rb1,
            rb2,
            fc,
            pooled_shape: [h2, w2, c2],
        })
    }

    /// Feature vectors, `batch × feature_dim`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, h, w) = match x.shape() {
            [n, h, w, c] if *c == CsiTensor::CHANNELS => (*n, *h, *w),
            s => return Err(Error::shape("encoder input", "[batch, N_B, N_C, 3]", format!("{s:?}"))),
        };
        if (h, w) != self.input_hw {
            return Err(Error::shape("encoder input size", format!("{:?}", self.input_hw), format!("{h}x{w}")));
        }
        let scale = self.input_scale.value[0];
        let mut scaled = x.clone();
        for px in scaled.data_mut().chunks_exact_mut(CsiTensor::CHANNELS) {
            px[0] /= scale;
        }
        let a = self.rb1.forward(&scaled, mode)?;
        let a = self.rb2.forward(&a, mode)?;
        let flat = a.reshape(vec![n, self.pooled_shape.iter().product()])?;
        self.fc.forward(&flat)
    }

    pub fn backward(&mut self, dz: &Tensor) -> Result<Tensor> {
        let d = self.fc.backward(dz)?;
        let n = d.rows();
        let [h, w, c] = self.pooled_shape;
        let d = d.reshape(vec![n, h, w, c])?;
        let d = self.rb2.backward(&d)?;
        let mut dx = self.rb1.backward(&d)?;
        let scale = self.input_scale.value[0];
        for px in dx.data_mut().chunks_exact_mut(CsiTensor::CHANNELS) {
            px[0] /= scale;
        }
        Ok(dx)
    }

    pub fn set_input_scale(&mut self, scale: f64) {
        self.input_scale.value[0] = scale;
    }

    pub fn feature_dim(&self) -> usize {
        self.fc.outputs
    }

    /// ReLU activation pattern of the last forward pass.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut v = Vec::new();
        self.rb1.pattern(&mut v);
        self.rb2.pattern(&mut v);
        v
    }
}

impl Module for Encoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.input_scale];
        v.extend(self.rb1.params());
        v.extend(self.rb2.params());
        v.extend(self.fc.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.input_scale];
        v.extend(self.rb1.params_mut());
        v.extend(self.rb2.params_mut());
        v.extend(self.fc.params_mut());
        v
    }
}

/// Two fully connected layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct FnNetwork {
    pub fc1: Linear,
    relu: Relu,
    pub fc2: Linear,
}

impl FnNetwork {
    fn new<R: Rng + ?Sized>(name: &str, inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), inputs, hidden, rng),
            relu: Relu::default(),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, outputs, rng),
        }
    }

    fn forward(&mut self, z: &Tensor) -> Result<Tensor> {
        let a = self.fc1.forward(z)?;
        let a = self.relu.forward(&a);
        self.fc2.forward(&a)
    }

    fn backward(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        let d = self.fc2.backward(dlogits)?;
        let d = self.relu.backward(&d)?;
        self.fc1.backward(&d)
    }

    fn pattern(&self) -> &[bool] {
        self.relu.pattern()
    }
}

impl Module for FnNetwork {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}

/// Angular head: per-bin occupancy `g ∈ (0, 1)^K` via an element-wise logistic.
#[derive(Debug, Clone)]
pub struct AngularHead {
    pub net: FnNetwork,
    probs: Vec<f64>,
}

impl AngularHead {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, hidden: usize, bins: usize, rng: &mut R) -> Self {
        Self {
            net: FnNetwork::new("fn1", feature_dim, hidden, bins, rng),
            probs: Vec::new(),
        }
    }

    pub fn bins(&self) -> usize {
        self.net.fc2.outputs
    }

    /// `batch × K` occupancies.
    pub fn forward(&mut self, z: &Tensor) -> Result<Tensor> {
        let logits = self.net.forward(z)?;
        self.probs = logits.data().iter().map(|&v| sigmoid(v)).collect();
        Tensor::new(logits.shape().to_vec(), self.probs.clone())
    }

    /// Takes `∂L/∂g`, returns `∂L/∂z`.
    pub fn backward(&mut self, dg: &Tensor) -> Result<Tensor> {
        if dg.len() != self.probs.len() {
            return Err(Error::shape("angular head gradient", self.probs.len(), dg.len()));
        }
        let data = dg
            .data()
            .iter()
            .zip(&self.probs)
            .map(|(d, g)| d * g * (1.0 - g))
            .collect();
        self.net.backward(&Tensor::new(dg.shape().to_vec(), data)?)
    }

    pub fn activation_pattern(&self) -> &[bool] {
        self.net.pattern()
    }
}

impl Module for AngularHead {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

/// Polar head: `(φ̂, d̂)` with `φ̂ = Ω·σ(a)` and `d̂ = R·softplus(b)`.
#[derive(Debug, Clone)]
pub struct PolarHead {
    pub net: FnNetwork,
    pub range_deg: f64,
    pub max_range_m: f64,
    logits: Vec<f64>,
}

impl PolarHead {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden: usize,
        range_deg: f64,
        max_range_m: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            net: FnNetwork::new("fn2", feature_dim, hidden, 2, rng),
            range_deg,
            max_range_m,
            logits: Vec::new(),
        }
    }

    /// Maps raw logits to `(azimuth_deg, distance_m)`.
    pub fn activate(&self, azimuth_logit: f64, distance_logit: f64) -> (f64, f64) {
        (self.range_deg * sigmoid(azimuth_logit), self.max_range_m * softplus(distance_logit))
    }

    /// `batch × 2` predictions, columns `(φ̂, d̂)`.
    pub fn forward(&mut self, z: &Tensor) -> Result<Tensor> {
        let logits = self.net.forward(z)?;
        self.logits = logits.data().to_vec();
        let data = logits
            .data()
            .chunks_exact(2)
            .flat_map(|l| {
                let (a, d) = self.activate(l[0], l[1]);
                [a, d]
            })
            .collect();
        Tensor::new(logits.shape().to_vec(), data)
    }

    /// Takes `∂L/∂(φ̂, d̂)`, returns `∂L/∂z`.
    pub fn backward(&mut self, dpred: &Tensor) -> Result<Tensor> {
        if dpred.len() != self.logits.len() {
            return Err(Error::shape("polar head gradient", self.logits.len(), dpred.len()));
        }
        let mut dl = vec![0.0; self.logits.len()];
        for (i, (l, d)) in self.logits.chunks_exact(2).zip(dpred.data().chunks_exact(2)).enumerate() {
            let s = sigmoid(l[0]);
            dl[2 * i] = d[0] * self.range_deg * s * (1.0 - s);
            dl[2 * i + 1] = d[1] * self.max_range_m * sigmoid(l[1]);
        }
        self.net.backward(&Tensor::new(dpred.shape().to_vec(), dl)?)
    }

    pub fn activation_pattern(&self) -> &[bool] {
        self.net.pattern()
    }
}

impl Module for PolarHead {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params<M: Module>(m: &mut M) {
        for p in m.params_mut() {
            if p.is_trainable() {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn zero_angular_head_outputs_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut head = AngularHead::new(4, 8, 15, &mut rng);
        zero_params(&mut head);
        let z = Tensor::new(vec![3, 4], vec![0.7; 12]).unwrap();
        let g = head.forward(&z).unwrap();
        assert_eq!(g.shape(), &[3, 15]);
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_polar_head_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut head = PolarHead::new(4, 8, 180.0, 40.0, &mut rng);
        zero_params(&mut head);
        let p = head.forward(&Tensor::new(vec![1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap()).unwrap();
        assert_eq!(p.data()[0], 90.0);
        assert!((p.data()[1] - 40.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn head_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ang = AngularHead::new(4, 16, 10, &mut rng);
        let mut pol = PolarHead::new(4, 16, 180.0, 40.0, &mut rng);
        let z = Tensor::new(vec![5, 4], (0..20).map(|i| (i as f64 - 10.0) * 0.9).collect()).unwrap();
        assert!(ang.forward(&z).unwrap().data().iter().all(|&g| g > 0.0 && g < 1.0));
        for row in pol.forward(&z).unwrap().data().chunks(2) {
            assert!((0.0..=180.0).contains(&row[0]) && row[1] >= 0.0);
        }
    }

    fn small_encoder(rng: &mut ChaCha8Rng) -> Encoder {
        let cfg = ModelConfig {
            block_channels: [4, 6],
            feature_dim: 5,
            ..ModelConfig::default()
        };
        Encoder::new(&cfg, (8, 12), rng).unwrap()
    }

    #[test]
    fn zero_input_gives_finite_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = small_encoder(&mut rng);
        let z = enc.forward(&Tensor::zeros(vec![2, 8, 12, 3]), Mode::Train).unwrap();
        assert_eq!(z.shape(), &[2, 5]);
        assert!(z.is_finite());
        let z = enc.forward(&Tensor::zeros(vec![1, 8, 12, 3]), Mode::Inference).unwrap();
        assert!(z.is_finite());
    }

    #[test]
    fn inference_rows_are_independent_of_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = small_encoder(&mut rng);
        let x = Tensor::new(vec![3, 8, 12, 3], (0..3 * 8 * 12 * 3).map(|i| (i as f64 * 0.13).sin()).collect()).unwrap();
        // Warm the running statistics.
        for _ in 0..5 {
            enc.forward(&x, Mode::Train).unwrap();
        }
        let all = enc.forward(&x, Mode::Inference).unwrap();
        let plane = 8 * 12 * 3;
        for i in 0..3 {
            let xi = Tensor::new(vec![1, 8, 12, 3], x.data()[i * plane..(i + 1) * plane].to_vec()).unwrap();
            let zi = enc.forward(&xi, Mode::Inference).unwrap();
            for (a, b) in zi.data().iter().zip(all.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_wrong_input_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = small_encoder(&mut rng);
        assert!(enc.forward(&Tensor::zeros(vec![1, 8, 10, 3]), Mode::Train).is_err());
        assert!(Encoder::new(&ModelConfig::default(), (2, 16), &mut rng).is_err());
    }
}
