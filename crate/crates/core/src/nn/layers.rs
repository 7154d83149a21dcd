//! Layers with hand-written backward passes.
//!
//! Image activations are NHWC (`batch × height × width × channels`). Each
//! layer caches what its backward pass needs during `forward`; `backward`
//! overwrites the parameter gradients and returns the input gradient.

use rand::Rng;

use super::gemm::{gemm, Mat};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named buffer. Trainable entries carry a gradient of matching length;
/// non-trainable ones (running statistics) leave `grad` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    fn trainable(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            name,
            shape,
            value,
            grad: vec![0.0; n],
        }
    }

    pub(crate) fn buffer(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        Self {
            name,
            shape,
            value,
            grad: Vec::new(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        !self.grad.is_empty()
    }
}

fn fan_in_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Access to every named buffer of a module, in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

/// Whether normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

fn nhwc(x: &Tensor, context: &str) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(4, context)?;
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// Stride-1 square convolution with symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// `(ky, kx, c_in) × c_out`.
    pub weight: Param,
    pub bias: Param,
    cols: Vec<f64>,
    in_shape: [usize; 4],
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let weight = fan_in_uniform(rng, fan_in * out_channels, fan_in);
        let bias = fan_in_uniform(rng, out_channels, fan_in);
        Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight: Param::trainable(format!("{name}.weight"), vec![fan_in, out_channels], weight),
            bias: Param::trainable(format!("{name}.bias"), vec![out_channels], bias),
            cols: Vec::new(),
            in_shape: [0; 4],
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (h2, w2) = (h + 2 * self.padding, w + 2 * self.padding);
        if h2 < self.kernel || w2 < self.kernel {
            return Err(Error::shape("conv2d spatial size", format!("≥ {}", self.kernel), format!("{h}x{w}")));
        }
        Ok((h2 - self.kernel + 1, w2 - self.kernel + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.padding == 0
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, c) = nhwc(x, "conv2d input")?;
        if c != self.in_channels {
            return Err(Error::shape("conv2d input channels", self.in_channels, c));
        }
        let (oh, ow) = self.out_hw(h, w)?;
        let rows = n * oh * ow;
        let kk = self.kernel * self.kernel * c;
        self.in_shape = [n, h, w, c];
        if self.is_pointwise() {
            self.cols.clear();
            self.cols.extend_from_slice(x.data());
        } else {
            self.cols.clear();
            self.cols.resize(rows * kk, 0.0);
            let xd = x.data();
            let (k, p) = (self.kernel as isize, self.padding as isize);
            for b in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let r = (b * oh + oy) * ow + ox;
                        let row = &mut self.cols[r * kk..(r + 1) * kk];
                        for ky in 0..k {
                            let iy = oy as isize + ky - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize + kx - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let src = ((b * h + iy as usize) * w + ix as usize) * c;
                                let dst = ((ky * k + kx) as usize) * c;
                                row[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                            }
                        }
                    }
                }
            }
        }
        let co = self.out_channels;
        let mut out = Vec::with_capacity(rows * co);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(
            Mat::new(&self.cols, rows, kk),
            Mat::new(&self.weight.value, kk, co),
            &mut out,
            1.0,
        );
        Tensor::new(vec![n, oh, ow, co], out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let [n, h, w, c] = self.in_shape;
        let (oh, ow) = self.out_hw(h, w)?;
        let co = self.out_channels;
        if dy.shape() != [n, oh, ow, co] {
            return Err(Error::shape("conv2d output gradient", format!("{:?}", [n, oh, ow, co]), format!("{:?}", dy.shape())));
        }
        let rows = n * oh * ow;
        let kk = self.kernel * self.kernel * c;
        let g = dy.data();
        gemm(
            Mat::new(&self.cols, rows, kk).t(),
            Mat::new(g, rows, co),
            &mut self.weight.grad,
            0.0,
        );
        self.bias.grad.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..rows {
            for (bg, v) in self.bias.grad.iter_mut().zip(&g[r * co..(r + 1) * co]) {
                *bg += v;
            }
        }
        let mut dcols = vec![0.0; rows * kk];
        gemm(
            Mat::new(g, rows, co),
            Mat::new(&self.weight.value, kk, co).t(),
            &mut dcols,
            0.0,
        );
        if self.is_pointwise() {
            return Tensor::new(vec![n, h, w, c], dcols);
        }
        let mut dx = vec![0.0; n * h * w * c];
        let (k, p) = (self.kernel as isize, self.padding as isize);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let r = (b * oh + oy) * ow + ox;
                    let row = &dcols[r * kk..(r + 1) * kk];
                    for ky in 0..k {
                        let iy = oy as isize + ky - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize + kx - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                            let src = ((ky * k + kx) as usize) * c;
                            for (d, s) in dx[dst..dst + c].iter_mut().zip(&row[src..src + c]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, h, w, c], dx)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Per-channel batch normalization over every axis but the last.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize, momentum: f64, eps: f64) -> Self {
        Self {
            channels,
            momentum,
            eps,
            gamma: Param::trainable(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::trainable(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels]),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            mode: Mode::Train,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels;
        if x.shape().last() != Some(&c) {
            return Err(Error::shape("batchnorm channels", c, format!("{:?}", x.shape())));
        }
        let rows = x.len() / c;
        if rows == 0 {
            return Err(Error::shape("batchnorm rows", "≥ 1", 0));
        }
        let xd = x.data();
        self.mode = mode;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for r in 0..rows {
                    for (m, v) in mean.iter_mut().zip(&xd[r * c..(r + 1) * c]) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for r in 0..rows {
                    for ((s, v), m) in var.iter_mut().zip(&xd[r * c..(r + 1) * c]).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                let unbias = if rows > 1 { rows as f64 / (rows as f64 - 1.0) } else { 1.0 };
                let mo = self.momentum;
                for ch in 0..c {
                    let rm = &mut self.running_mean.value[ch];
                    *rm = (1.0 - mo) * *rm + mo * mean[ch];
                    let rv = &mut self.running_var.value[ch];
                    *rv = (1.0 - mo) * *rv + mo * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Inference => (self.running_mean.value.clone(), self.running_var.value.clone()),
        };
        self.inv_std = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        self.xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            for ch in 0..c {
                let i = r * c + ch;
                let xh = (xd[i] - mean[ch]) * self.inv_std[ch];
                self.xhat[i] = xh;
                out[i] = self.gamma.value[ch] * xh + self.beta.value[ch];
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let c = self.channels;
        if dy.len() != self.xhat.len() {
            return Err(Error::shape("batchnorm output gradient", self.xhat.len(), dy.len()));
        }
        let rows = dy.len() / c;
        let g = dy.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for r in 0..rows {
            for ch in 0..c {
                let i = r * c + ch;
                dgamma[ch] += g[i] * self.xhat[i];
                dbeta[ch] += g[i];
            }
        }
        let mut dx = vec![0.0; g.len()];
        match self.mode {
            Mode::Train => {
                // dxhat = g·γ;  dx = inv_std/R · (R·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                let nr = rows as f64;
                for r in 0..rows {
                    for ch in 0..c {
                        let i = r * c + ch;
                        let gam = self.gamma.value[ch];
                        dx[i] = self.inv_std[ch] / nr
                            * (nr * g[i] * gam - dbeta[ch] * gam - self.xhat[i] * dgamma[ch] * gam);
                    }
                }
            }
            Mode::Inference => {
                for r in 0..rows {
                    for ch in 0..c {
                        let i = r * c + ch;
                        dx[i] = g[i] * self.gamma.value[ch] * self.inv_std[ch];
                    }
                }
            }
        }
        self.gamma.grad = dgamma;
        self.beta.grad = dbeta;
        Tensor::new(dy.shape().to_vec(), dx)
    }
}

impl Module for BatchNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        // `f64::max` would turn NaN into 0 and hide a diverged input.
        let data = x.data().iter().map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 }).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        if dy.len() != self.mask.len() {
            return Err(Error::shape("relu output gradient", self.mask.len(), dy.len()));
        }
        let data = dy
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(dy.shape().to_vec(), data)
    }

    /// Active units from the last forward pass.
    pub fn pattern(&self) -> &[bool] {
        &self.mask
    }
}

impl Module for Relu {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// 2×2 average pooling with stride 2; trailing odd rows/columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2 {
    in_shape: [usize; 4],
}

impl AvgPool2 {
    pub fn output_hw(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, c) = nhwc(x, "avgpool input")?;
        let (oh, ow) = Self::output_hw(h, w);
        if oh == 0 || ow == 0 {
            return Err(Error::shape("avgpool spatial size", "≥ 2x2", format!("{h}x{w}")));
        }
        self.in_shape = [n, h, w, c];
        let xd = x.data();
        let mut out = vec![0.0; n * oh * ow * c];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = ((b * oh + oy) * ow + ox) * c;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                        for ch in 0..c {
                            out[o + ch] += 0.25 * xd[i + ch];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, oh, ow, c], out)
    }

    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        let [n, h, w, c] = self.in_shape;
        let (oh, ow) = Self::output_hw(h, w);
        if dy.shape() != [n, oh, ow, c] {
            return Err(Error::shape("avgpool output gradient", format!("{:?}", [n, oh, ow, c]), format!("{:?}", dy.shape())));
        }
        let g = dy.data();
        let mut dx = vec![0.0; n * h * w * c];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = ((b * oh + oy) * ow + ox) * c;
                    for (ddy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + ddy) * w + 2 * ox + ddx) * c;
                        for ch in 0..c {
                            dx[i + ch] = 0.25 * g[o + ch];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, h, w, c], dx)
    }
}

impl Module for AvgPool2 {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Fully connected layer on `rows × in` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// `in × out`.
    pub weight: Param,
    pub bias: Param,
    input: Vec<f64>,
    in_shape: Vec<usize>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = fan_in_uniform(rng, inputs * outputs, inputs);
        let bias = fan_in_uniform(rng, outputs, inputs);
        Self {
            inputs,
            outputs,
            weight: Param::trainable(format!("{name}.weight"), vec![inputs, outputs], weight),
            bias: Param::trainable(format!("{name}.bias"), vec![outputs], bias),
            input: Vec::new(),
            in_shape: Vec::new(),
        }
    }

    /// Accepts any tensor whose trailing axes flatten to `inputs` per row.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let rows = x.rows();
        if x.row_len() != self.inputs || x.shape().len() < 2 {
            return Err(Error::shape("linear input width", self.inputs, format!("{:?}", x.shape())));
        }
        self.input.clear();
        self.input.extend_from_slice(x.data());
        self.in_shape = x.shape().to_vec();
        let mut out = Vec::with_capacity(rows * self.outputs);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(
            Mat::new(x.data(), rows, self.inputs),
            Mat::new(&self.weight.value, self.inputs, self.outputs),
            &mut out,
            1.0,
        );
        Tensor::new(vec![rows, self.outputs], out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let rows = self.in_shape.first().copied().unwrap_or(0);
        if dy.shape() != [rows, self.outputs] {
            return Err(Error::shape("linear output gradient", format!("[{rows}, {}]", self.outputs), format!("{:?}", dy.shape())));
        }
        gemm(
            Mat::new(&self.input, rows, self.inputs).t(),
            Mat::new(dy.data(), rows, self.outputs),
            &mut self.weight.grad,
            0.0,
        );
        self.bias.grad.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..rows {
            for (b, g) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *b += g;
            }
        }
        let mut dx = vec![0.0; rows * self.inputs];
        gemm(
            Mat::new(dy.data(), rows, self.outputs),
            Mat::new(&self.weight.value, self.inputs, self.outputs).t(),
            &mut dx,
            0.0,
        );
        Tensor::new(self.in_shape.clone(), dx)
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Element-wise sum of two same-shape tensors (skip connection).
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
