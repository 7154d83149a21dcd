//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each case reduces its output to a scalar (a random linear functional for
//! plain layers, the actual objective for the loss heads) and compares the
//! analytic gradient of every trainable tensor and of the input against
//! `(f(θ + h) − f(θ − h)) / 2h` on a random subset of entries. A probe whose
//! perturbation flips a ReLU is retried with smaller `h` and skipped if it
//! still does, because the function is not differentiable across the kink.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{label_snapshot, AngularDistribution, AngularGrid};
use crate::nn::layers::{add, AvgPool2, BatchNorm, Conv2d, Linear, Relu};
use crate::nn::model::ResidualBlock;
use crate::nn::{AngularHead, Encoder, Mode, ModelConfig, Module, PolarHead, Tensor};
use crate::train::loss::{downstream_loss, pretrain_loss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries probed per tensor.
    pub max_probes: usize,
    /// Largest tolerated fraction of skipped probes per case.
    pub max_skip_fraction: f64,
    /// Gradient magnitude, relative to `max(1, |f|)`, below which errors are
    /// measured absolutely so that exactly-zero gradients are not judged on
    /// rounding noise.
    pub magnitude_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            max_probes: 64,
            max_skip_fraction: 0.01,
            magnitude_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub case: String,
    pub tensor: String,
    pub seed: u64,
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|, floor)`.
    pub relative_error: f64,
    pub probed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.checks.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }

    /// `(case, probed, skipped)` aggregated over seeds and tensors.
    pub fn per_case(&self) -> Vec<(String, usize, usize, f64)> {
        let mut out: Vec<(String, usize, usize, f64)> = Vec::new();
        for c in &self.checks {
            match out.iter_mut().find(|(n, ..)| *n == c.case) {
                Some(e) => {
                    e.1 += c.probed;
                    e.2 += c.skipped;
                    e.3 = e.3.max(c.relative_error);
                }
                None => out.push((c.case.clone(), c.probed, c.skipped, c.relative_error)),
            }
        }
        out
    }

    /// Errors describing every violated threshold, empty when all pass.
    pub fn failures(&self, cfg: &GradCheckConfig) -> Vec<String> {
        let mut out: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !(c.relative_error < cfg.tolerance))
            .map(|c| format!("{} / {} (seed {}): relative error {:.3e}", c.case, c.tensor, c.seed, c.relative_error))
            .collect();
        for (case, probed, skipped, _) in self.per_case() {
            if skipped as f64 > cfg.max_skip_fraction * probed as f64 {
                out.push(format!("{case}: {skipped} of {probed} probes crossed a ReLU kink"));
            }
        }
        out
    }

    pub fn into_result(self, cfg: &GradCheckConfig) -> Result<Self> {
        let failures = self.failures(cfg);
        if failures.is_empty() {
            Ok(self)
        } else {
            Err(Error::GradCheck(failures.join("; ")))
        }
    }
}

/// A differentiable scalar function of a fixed list of tensors.
trait Case {
    fn name(&self) -> &'static str;
    /// Scalar value and ReLU activation pattern at the current tensors.
    fn eval(&mut self) -> Result<(f64, Vec<bool>)>;
    /// Analytic gradient of every tensor, in `tensor_names` order.
    fn analytic(&mut self) -> Result<Vec<Vec<f64>>>;
    fn tensor_names(&self) -> Vec<String>;
    fn tensor_mut(&mut self, i: usize) -> &mut [f64];
}

fn check_case(case: &mut dyn Case, seed: u64, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<Vec<TensorCheck>> {
    let (value, pattern) = case.eval()?;
    let floor = cfg.magnitude_floor * value.abs().max(1.0);
    let analytic = case.analytic()?;
    let names = case.tensor_names();
    let mut out = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let len = case.tensor_mut(ti).len();
        let probes = sample(rng, len, cfg.max_probes.min(len)).into_vec();
        let (mut max_diff, mut max_a, mut max_n) = (0.0f64, 0.0f64, 0.0f64);
        let mut skipped = 0;
        for &j in &probes {
            let Some(numeric) = central_difference(case, ti, j, &pattern, cfg.step)? else {
                skipped += 1;
                continue;
            };
            let a = analytic[ti][j];
            max_diff = max_diff.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
        }
        let scale = max_a.max(max_n).max(floor);
        out.push(TensorCheck {
            case: case.name().to_string(),
            tensor: name,
            seed,
            relative_error: max_diff / scale,
            probed: probes.len(),
            skipped,
        });
    }
    Ok(out)
}

/// Central difference at entry `j` of tensor `ti`, retried with smaller steps
/// while the perturbation crosses a ReLU kink. `None` if every step does.
fn central_difference(case: &mut dyn Case, ti: usize, j: usize, pattern: &[bool], step: f64) -> Result<Option<f64>> {
    let original = case.tensor_mut(ti)[j];
    for h in [step, step / 10.0, step / 100.0] {
        case.tensor_mut(ti)[j] = original + h;
        let (plus, pat_plus) = case.eval()?;
        case.tensor_mut(ti)[j] = original - h;
        let (minus, pat_minus) = case.eval()?;
        case.tensor_mut(ti)[j] = original;
        if pat_plus == pattern && pat_minus == pattern {
            return Ok(Some((plus - minus) / (2.0 * h)));
        }
    }
    Ok(None)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type Forward<M> = fn(&mut M, &Tensor) -> Result<Tensor>;
type Pattern<M> = fn(&M) -> Vec<bool>;

/// A single module under the loss `Σ r ⊙ y` for a fixed random `r`.
struct LayerCase<M: Module> {
    name: &'static str,
    module: M,
    input: Tensor,
    weights: Vec<f64>,
    forward: Forward<M>,
    backward: Forward<M>,
    pattern: Pattern<M>,
}

fn no_pattern<M>(_: &M) -> Vec<bool> {
    Vec::new()
}

impl<M: Module> LayerCase<M> {
    fn trainable_count(&self) -> usize {
        self.module.params().iter().filter(|p| p.is_trainable()).count()
    }
}

impl<M: Module> Case for LayerCase<M> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn eval(&mut self) -> Result<(f64, Vec<bool>)> {
        let y = (self.forward)(&mut self.module, &self.input)?;
        if self.weights.len() != y.len() {
            return Err(Error::shape("gradcheck functional", self.weights.len(), y.len()));
        }
        Ok((dot(&self.weights, y.data()), (self.pattern)(&self.module)))
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let y = (self.forward)(&mut self.module, &self.input)?;
        let dx = (self.backward)(&mut self.module, &Tensor::new(y.shape().to_vec(), self.weights.clone())?)?;
        let mut grads: Vec<Vec<f64>> = self
            .module
            .params()
            .iter()
            .filter(|p| p.is_trainable())
            .map(|p| p.grad.clone())
            .collect();
        grads.push(dx.into_data());
        Ok(grads)
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .module
            .params()
            .iter()
            .filter(|p| p.is_trainable())
            .map(|p| p.name.clone())
            .collect();
        v.push("input".into());
        v
    }

    fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        if i < self.trainable_count() {
            self.module
                .params_mut()
                .into_iter()
                .filter(|p| p.is_trainable())
                .nth(i)
                .map(|p| p.value.as_mut_slice())
                .expect("tensor index in range")
        } else {
            self.input.data_mut()
        }
    }
}

/// Parameterless two-input sum; both inputs are perturbed.
struct AddCase {
    a: Tensor,
    b: Tensor,
    weights: Vec<f64>,
}

impl Case for AddCase {
    fn name(&self) -> &'static str {
        "add"
    }
    fn eval(&mut self) -> Result<(f64, Vec<bool>)> {
        Ok((dot(&self.weights, add(&self.a, &self.b)?.data()), Vec::new()))
    }
    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.weights.clone(), self.weights.clone()])
    }
    fn tensor_names(&self) -> Vec<String> {
        vec!["lhs".into(), "rhs".into()]
    }
    fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        if i == 0 {
            self.a.data_mut()
        } else {
            self.b.data_mut()
        }
    }
}

/// A loss evaluated directly on head outputs.
struct LossCase {
    name: &'static str,
    values: Vec<f64>,
    loss: Box<dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>>,
}

impl Case for LossCase {
    fn name(&self) -> &'static str {
        self.name
    }
    fn eval(&mut self) -> Result<(f64, Vec<bool>)> {
        Ok(((self.loss)(&self.values)?.0, Vec::new()))
    }
    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        Ok(vec![(self.loss)(&self.values)?.1])
    }
    fn tensor_names(&self) -> Vec<String> {
        vec!["head output".into()]
    }
    fn tensor_mut(&mut self, _: usize) -> &mut [f64] {
        &mut self.values
    }
}

enum Objective {
    Pretrain {
        head: AngularHead,
        segments: Vec<std::ops::Range<usize>>,
        targets: Vec<AngularDistribution>,
    },
    Downstream {
        head: PolarHead,
        truth_xy: Vec<[f64; 2]>,
    },
}

/// Encoder, head and objective end to end.
struct PipelineCase {
    name: &'static str,
    encoder: Encoder,
    objective: Objective,
    input: Tensor,
    input_grad: Vec<f64>,
}

impl PipelineCase {
    fn params(&self) -> Vec<&crate::nn::Param> {
        let mut v = self.encoder.params();
        match &self.objective {
            Objective::Pretrain { head, .. } => v.extend(head.params()),
            Objective::Downstream { head, .. } => v.extend(head.params()),
        }
        v.retain(|p| p.is_trainable());
        v
    }

    fn run(&mut self, backward: bool) -> Result<(f64, Vec<bool>)> {
        let z = self.encoder.forward(&self.input, Mode::Train)?;
        let mut pattern = self.encoder.activation_pattern();
        let (loss, dz) = match &mut self.objective {
            Objective::Pretrain { head, segments, targets } => {
                let g = head.forward(&z)?;
                pattern.extend_from_slice(head.activation_pattern());
                let (loss, dg) = pretrain_loss(g.data(), head.bins(), segments, targets)?;
                let dz = if backward { Some(head.backward(&Tensor::new(g.shape().to_vec(), dg)?)?) } else { None };
                (loss, dz)
            }
            Objective::Downstream { head, truth_xy } => {
                let p = head.forward(&z)?;
                pattern.extend_from_slice(head.activation_pattern());
                let (loss, dp) = downstream_loss(p.data(), truth_xy)?;
                let dz = if backward { Some(head.backward(&Tensor::new(p.shape().to_vec(), dp)?)?) } else { None };
                (loss, dz)
            }
        };
        if let Some(dz) = dz {
            self.input_grad = self.encoder.backward(&dz)?.into_data();
        }
        Ok((loss, pattern))
    }
}

impl Case for PipelineCase {
    fn name(&self) -> &'static str {
        self.name
    }

    fn eval(&mut self) -> Result<(f64, Vec<bool>)> {
        self.run(false)
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        self.run(true)?;
        let mut v: Vec<Vec<f64>> = self.params().iter().map(|p| p.grad.clone()).collect();
        v.push(self.input_grad.clone());
        Ok(v)
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.params().iter().map(|p| p.name.clone()).collect();
        v.push("input".into());
        v
    }

    fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        let mut params = self.encoder.params_mut();
        match &mut self.objective {
            Objective::Pretrain { head, .. } => params.extend(head.params_mut()),
            Objective::Downstream { head, .. } => params.extend(head.params_mut()),
        }
        params.retain(|p| p.is_trainable());
        if i < params.len() {
            params.swap_remove(i).value.as_mut_slice()
        } else {
            self.input.data_mut()
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform(rng, n, -1.0, 1.0)).expect("shape matches data")
}

fn layer_case<M: Module + 'static>(
    name: &'static str,
    module: M,
    input: Tensor,
    out_len: usize,
    forward: Forward<M>,
    backward: Forward<M>,
    pattern: Pattern<M>,
    rng: &mut ChaCha8Rng,
) -> Box<dyn Case> {
    Box::new(LayerCase {
        name,
        module,
        input,
        weights: uniform(rng, out_len, -1.0, 1.0),
        forward,
        backward,
        pattern,
    })
}

/// Input entries bounded away from zero so that no probe crosses the kink.
fn relu_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        block_channels: [3, 4],
        feature_dim: 5,
        hidden_width: 6,
        ..ModelConfig::default()
    }
}

fn random_targets(rng: &mut ChaCha8Rng, grid: &AngularGrid, snapshots: usize, max_vehicles: usize) -> Result<(Vec<std::ops::Range<usize>>, Vec<AngularDistribution>)> {
    let mut segments = Vec::with_capacity(snapshots);
    let mut targets = Vec::with_capacity(snapshots);
    let mut row = 0;
    for _ in 0..snapshots {
        let v = rng.gen_range(1..=max_vehicles);
        segments.push(row..row + v);
        row += v;
        let detected = rng.gen_range(0..=v + 1);
        let az: Vec<f64> = (0..detected).map(|_| rng.gen_range(0.0..=grid.range_deg())).collect();
        targets.push(label_snapshot(grid, &az)?);
    }
    Ok((segments, targets))
}

fn cases(rng: &mut ChaCha8Rng) -> Result<Vec<Box<dyn Case>>> {
    let mut out: Vec<Box<dyn Case>> = Vec::new();

    let conv = Conv2d::new("conv3x3", 2, 3, 3, 1, rng);
    let x = random_tensor(rng, vec![2, 4, 5, 2]);
    out.push(layer_case("conv3x3", conv, x, 2 * 4 * 5 * 3, Conv2d::forward, Conv2d::backward, no_pattern, rng));

    let conv = Conv2d::new("conv1x1", 3, 2, 1, 0, rng);
    let x = random_tensor(rng, vec![2, 3, 3, 3]);
    out.push(layer_case("conv1x1", conv, x, 2 * 3 * 3 * 2, Conv2d::forward, Conv2d::backward, no_pattern, rng));

    let mut bn = BatchNorm::new("bn", 3, 0.1, 1e-5);
    bn.gamma.value = uniform(rng, 3, 0.5, 1.5);
    bn.beta.value = uniform(rng, 3, -0.5, 0.5);
    let x = random_tensor(rng, vec![3, 2, 2, 3]);
    out.push(layer_case("batchnorm-train", bn.clone(), x.clone(), x.len(), |m, x| m.forward(x, Mode::Train), BatchNorm::backward, no_pattern, rng));
    bn.running_mean.value = uniform(rng, 3, -0.5, 0.5);
    bn.running_var.value = uniform(rng, 3, 0.5, 2.0);
    out.push(layer_case("batchnorm-inference", bn, x.clone(), x.len(), |m, x| m.forward(x, Mode::Inference), BatchNorm::backward, no_pattern, rng));

    let x = Tensor::new(vec![2, 7], relu_input(rng, 14))?;
    out.push(layer_case("relu", Relu::default(), x, 14, |m, x| Ok(m.forward(x)), |m, d| m.backward(d), |m| m.pattern().to_vec(), rng));

    let x = random_tensor(rng, vec![2, 5, 4, 2]);
    out.push(layer_case("avgpool", AvgPool2::default(), x, 2 * 2 * 2 * 2, AvgPool2::forward, |m, d| m.backward(d), no_pattern, rng));

    let lin = Linear::new("linear", 4, 3, rng);
    let x = random_tensor(rng, vec![5, 4]);
    out.push(layer_case("linear", lin, x, 15, Linear::forward, Linear::backward, no_pattern, rng));

    let (a, b) = (random_tensor(rng, vec![2, 3]), random_tensor(rng, vec![2, 3]));
    out.push(Box::new(AddCase {
        a,
        b,
        weights: uniform(rng, 6, -1.0, 1.0),
    }));

    let model = small_model();
    let block = ResidualBlock::new("block", 3, 4, &model, rng);
    let x = random_tensor(rng, vec![2, 4, 6, 3]);
    out.push(layer_case("residual-block", block, x, 2 * 2 * 3 * 4, |m, x| m.forward(x, Mode::Train), ResidualBlock::backward, |m| m.activation_pattern(), rng));

    let mut enc = Encoder::new(&model, (4, 4), rng)?;
    enc.set_input_scale(rng.gen_range(0.5..2.0));
    let x = random_tensor(rng, vec![3, 4, 4, 3]);
    out.push(layer_case("encoder", enc, x, 3 * model.feature_dim, |m, x| m.forward(x, Mode::Train), Encoder::backward, |m| m.activation_pattern(), rng));

    let head = AngularHead::new(4, 6, 5, rng);
    let z = random_tensor(rng, vec![3, 4]);
    out.push(layer_case("fn1", head, z, 15, AngularHead::forward, AngularHead::backward, |m| m.activation_pattern().to_vec(), rng));

    let head = PolarHead::new(4, 6, 180.0, 40.0, rng);
    let z = random_tensor(rng, vec![3, 4]);
    out.push(layer_case("fn2", head, z, 6, PolarHead::forward, PolarHead::backward, |m| m.activation_pattern().to_vec(), rng));

    let bins = 6;
    let grid = AngularGrid::new(180.0, bins)?;
    let (segments, targets) = random_targets(rng, &grid, 4, 3)?;
    let rows = segments.last().map_or(0, |s| s.end);
    let g = uniform(rng, rows * bins, 0.05, 0.95);
    out.push(Box::new(LossCase {
        name: "pretrain-loss",
        values: g,
        loss: Box::new(move |g| pretrain_loss(g, bins, &segments, &targets)),
    }));

    let truth: Vec<[f64; 2]> = (0..4).map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(1.0..30.0)]).collect();
    let pred: Vec<f64> = (0..4).flat_map(|_| [rng.gen_range(0.0..180.0), rng.gen_range(0.5..40.0)]).collect();
    out.push(Box::new(LossCase {
        name: "downstream-loss",
        values: pred,
        loss: Box::new(move |p| downstream_loss(p, &truth)),
    }));

    let (segments, targets) = random_targets(rng, &grid, 3, 2)?;
    let rows = segments.last().map_or(0, |s| s.end);
    let mut encoder = Encoder::new(&model, (4, 4), rng)?;
    encoder.set_input_scale(rng.gen_range(0.5..2.0));
    let head = AngularHead::new(model.feature_dim, model.hidden_width, bins, rng);
    out.push(Box::new(PipelineCase {
        name: "pretrain-pipeline",
        encoder,
        objective: Objective::Pretrain { head, segments, targets },
        input: random_tensor(rng, vec![rows, 4, 4, 3]),
        input_grad: Vec::new(),
    }));

    let encoder = Encoder::new(&model, (4, 4), rng)?;
    let head = PolarHead::new(model.feature_dim, model.hidden_width, 180.0, 40.0, rng);
    let truth_xy = (0..3).map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(1.0..30.0)]).collect();
    out.push(Box::new(PipelineCase {
        name: "downstream-pipeline",
        encoder,
        objective: Objective::Downstream { head, truth_xy },
        input: random_tensor(rng, vec![3, 4, 4, 3]),
        input_grad: Vec::new(),
    }));

    Ok(out)
}

/// Names of the checked cases, in suite order.
pub fn case_names() -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    cases(&mut rng).map(|c| c.iter().map(|c| c.name()).collect()).unwrap_or_default()
}

/// Runs every case once with tensors drawn from `seed`.
pub fn run_suite(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for mut case in cases(&mut rng)? {
        report.checks.extend(check_case(case.as_mut(), seed, cfg, &mut rng)?);
    }
    Ok(report)
}

/// Runs the suite for each seed and merges the results.
pub fn run_seeds(seeds: impl IntoIterator<Item = u64>, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    for seed in seeds {
        report.checks.extend(run_suite(seed, cfg)?.checks);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_for_a_few_seeds() {
        let cfg = GradCheckConfig::default();
        let report = run_seeds(0..3, &cfg).unwrap();
        assert!(report.failures(&cfg).is_empty(), "{:?}", report.failures(&cfg));
        assert_eq!(report.per_case().len(), case_names().len());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let cfg = GradCheckConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut case = LossCase {
            name: "broken",
            values: vec![0.3, -0.2],
            loss: Box::new(|v| Ok((v[0] * v[0] + v[1], vec![2.0 * v[0], 1.1]))),
        };
        let checks = check_case(&mut case, 5, &cfg, &mut rng).unwrap();
        assert!(checks[0].relative_error > 1e-2);
    }
}
