//! Fully connected ReLU network trained with Adam on shuffled minibatches.
//!
//! Parameters live in one flat vector; layer `l` stores its weight matrix
//! (row-major, `out x in`) followed by its bias. Inputs are standardized
//! column-wise with statistics from the training sample.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::logistic::{expit, softplus};
use crate::data::FunctionEstimate;
use crate::error::{Error, Result};
use crate::folds::{derive_seed, rng_from_seed};
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplier on the He standard deviation `sqrt(2 / fan_in)`.
    pub weight_init_scale: f64,
    /// Off by default: train for exactly `epochs` and keep the final weights.
    #[serde(default)]
    pub early_stopping: Option<EarlyStopping>,
}

/// Hold out part of the rows, track their loss after every epoch, and keep
/// the best weights seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    /// Epochs without improvement before training stops.
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            validation_fraction: 0.2,
            patience: 10,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 64,
            seed: 0,
            weight_init_scale: 1.0,
            early_stopping: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg(
                "train config needs learning_rate > 0, epochs >= 1, batch_size >= 1",
            ));
        }
        if let Some(es) = self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) || es.patience == 0 {
                return Err(Error::arg(
                    "early stopping needs validation_fraction in (0, 1) and patience >= 1",
                ));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// `depth` hidden ReLU layers of constant `width`, scalar output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub depth: usize,
    pub width: usize,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self { depth: 4, width: 80 }
    }
}

impl MlpArchitecture {
    fn layer_dims(&self, input: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        let mut fan_in = input;
        for _ in 0..self.depth {
            dims.push((self.width, fan_in));
            fan_in = self.width;
        }
        dims.push((1, fan_in));
        dims
    }

    /// Total parameter count for `input` covariates.
    pub fn n_params(&self, input: usize) -> usize {
        self.layer_dims(input).iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    SquaredError,
    /// Per-row weights; may be negative.
    WeightedSquaredError(Vec<f64>),
    CrossEntropyOnLogits,
}

impl LossKind {
    fn value(&self, out: f64, target: f64, weight: f64) -> f64 {
        match self {
            LossKind::SquaredError => (out - target).powi(2),
            LossKind::WeightedSquaredError(_) => weight * (out - target).powi(2),
            LossKind::CrossEntropyOnLogits => softplus(out) - target * out,
        }
    }

    fn derivative(&self, out: f64, target: f64, weight: f64) -> f64 {
        match self {
            LossKind::SquaredError => 2.0 * (out - target),
            LossKind::WeightedSquaredError(_) => 2.0 * weight * (out - target),
            LossKind::CrossEntropyOnLogits => expit(out) - target,
        }
    }

    fn weights(&self) -> Option<&[f64]> {
        match self {
            LossKind::WeightedSquaredError(w) => Some(w),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerSlot {
    out: usize,
    inp: usize,
    offset: usize,
}

/// A trained (or freshly initialized) network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSlot>,
    params: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

struct Forward {
    /// Inputs to each layer (the first is the standardized batch).
    inputs: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl Mlp {
    fn slots(arch: &MlpArchitecture, input: usize) -> Result<Vec<LayerSlot>> {
        if arch.depth == 0 || arch.width == 0 || input == 0 {
            return Err(Error::arg("network needs depth >= 1, width >= 1, inputs >= 1"));
        }
        let mut offset = 0;
        Ok(arch
            .layer_dims(input)
            .into_iter()
            .map(|(out, inp)| {
                let slot = LayerSlot { out, inp, offset };
                offset += out * inp + out;
                slot
            })
            .collect())
    }

    /// All weights and biases zero.
    pub fn zeros(arch: &MlpArchitecture, input: usize) -> Result<Self> {
        let layers = Self::slots(arch, input)?;
        Ok(Self {
            params: vec![0.0; arch.n_params(input)],
            layers,
            shift: vec![0.0; input],
            scale: vec![1.0; input],
        })
    }

    /// He-initialized weights, zero biases.
    pub fn init(arch: &MlpArchitecture, input: usize, seed: u64, init_scale: f64) -> Result<Self> {
        let mut net = Self::zeros(arch, input)?;
        let mut rng = rng_from_seed(seed);
        for slot in &net.layers {
            let sd = init_scale * (2.0 / slot.inp as f64).sqrt();
            for w in &mut net.params[slot.offset..slot.offset + slot.out * slot.inp] {
                let g: f64 = StandardNormal.sample(&mut rng);
                *w = sd * g;
            }
        }
        Ok(net)
    }

    /// Zero output weights and output bias `c`: the network starts as the
    /// constant `c`.
    fn start_constant(&mut self, c: f64) {
        let last = self.layers.last().expect("at least one layer");
        let w_end = last.offset + last.out * last.inp;
        self.params[last.offset..w_end].iter_mut().for_each(|w| *w = 0.0);
        self.params[w_end] = c;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::arg("parameter length mismatch"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.shift.len()
    }

    fn weight(&self, s: &LayerSlot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((s.out, s.inp), &self.params[s.offset..s.offset + s.out * s.inp])
            .expect("layer shape")
    }

    fn bias(&self, s: &LayerSlot) -> ArrayView1<'_, f64> {
        let start = s.offset + s.out * s.inp;
        ArrayView1::from(&self.params[start..start + s.out])
    }

    fn standardize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (mut col, (m, s)) in z.columns_mut().into_iter().zip(self.shift.iter().zip(&self.scale)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        z
    }

    fn forward(&self, xs: Array2<f64>) -> Forward {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = xs;
        for (l, s) in self.layers.iter().enumerate() {
            let mut z = a.dot(&self.weight(s).t());
            z += &self.bias(s);
            inputs.push(a);
            if l == last {
                let output = z.column(0).to_owned();
                return Forward { inputs, output };
            }
            z.mapv_inplace(|v| v.max(0.0));
            a = z;
        }
        unreachable!("network has an output layer")
    }

    /// Mean loss and its gradient with respect to the flat parameters, on
    /// already standardized inputs.
    fn loss_grad_std(
        &self,
        xs: Array2<f64>,
        targets: &[f64],
        weights: Option<&[f64]>,
        loss: &LossKind,
        grad: &mut [f64],
    ) -> f64 {
        let b = targets.len() as f64;
        let fwd = self.forward(xs);
        let mut total = 0.0;
        let mut delta = Array2::<f64>::zeros((targets.len(), 1));
        for (i, (&o, &t)) in fwd.output.iter().zip(targets).enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            total += loss.value(o, t, w);
            delta[[i, 0]] = loss.derivative(o, t, w) / b;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (l, s) in self.layers.iter().enumerate().rev() {
            let a_prev = &fwd.inputs[l];
            let (gw, rest) = grad[s.offset..].split_at_mut(s.out * s.inp);
            let mut gw = ArrayViewMut2::from_shape((s.out, s.inp), gw).expect("layer shape");
            general_mat_mul(1.0, &delta.t(), a_prev, 0.0, &mut gw);
            for (g, v) in rest[..s.out].iter_mut().zip(delta.sum_axis(Axis(0))) {
                *g = v;
            }
            if l > 0 {
                let mut back = delta.dot(&self.weight(s));
                // a_prev = relu(z_prev), so a_prev > 0 exactly where relu' = 1
                back.zip_mut_with(a_prev, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        total / b
    }

    /// Mean loss over `x` and its gradient, using the network's own
    /// input standardization.
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[f64],
        loss: &LossKind,
    ) -> Result<(f64, Vec<f64>)> {
        check_inputs(x, targets, loss, self.input_dim())?;
        let mut grad = vec![0.0; self.params.len()];
        let l = self.loss_grad_std(self.standardize(x), targets, loss.weights(), loss, &mut grad);
        Ok((l, grad))
    }

    /// Mean loss only.
    pub fn loss(&self, x: ArrayView2<'_, f64>, targets: &[f64], loss: &LossKind) -> f64 {
        self.mean_loss_std(self.standardize(x), targets, loss.weights(), loss)
    }

    fn mean_loss_std(&self, xs: Array2<f64>, targets: &[f64], w: Option<&[f64]>, loss: &LossKind) -> f64 {
        let out = self.forward(xs).output;
        out.iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&o, &t))| loss.value(o, t, w.map_or(1.0, |w| w[i])))
            .sum::<f64>()
            / targets.len() as f64
    }
}

impl FunctionEstimate for Mlp {
    fn evaluate(&self, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let last = self.layers.len() - 1;
        for (l, s) in self.layers.iter().enumerate() {
            let w = &self.params[s.offset..s.offset + s.out * s.inp];
            let b = &self.params[s.offset + s.out * s.inp..s.offset + s.out * s.inp + s.out];
            let next: Vec<f64> = (0..s.out)
                .map(|o| {
                    let z = b[o] + w[o * s.inp..(o + 1) * s.inp].iter().zip(&a).map(|(p, v)| p * v).sum::<f64>();
                    if l == last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            a = next;
        }
        a[0]
    }

    fn evaluate_batch(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        self.forward(self.standardize(x)).output.to_vec()
    }
}

fn check_inputs(x: ArrayView2<'_, f64>, targets: &[f64], loss: &LossKind, p: usize) -> Result<()> {
    let n = x.nrows();
    if targets.len() != n || loss.weights().is_some_and(|w| w.len() != n) {
        return Err(Error::arg("mlp: length mismatch"));
    }
    if x.ncols() != p {
        return Err(Error::arg("mlp: covariate dimension mismatch"));
    }
    if x.iter().chain(targets).chain(loss.weights().unwrap_or(&[])).any(|v| !v.is_finite()) {
        return Err(Error::arg("mlp: non-finite input"));
    }
    if matches!(loss, LossKind::CrossEntropyOnLogits) && targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::arg("mlp: cross-entropy targets must be 0 or 1"));
    }
    Ok(())
}

/// Loss-minimizing constant over `rows`: the (weighted) mean target, or
/// the log-odds of the label mean for cross-entropy.
fn base_value(rows: &[usize], targets: &[f64], weights: Option<&[f64]>, loss: &LossKind) -> f64 {
    let n = rows.len() as f64;
    match (loss, weights) {
        (LossKind::CrossEntropyOnLogits, _) => {
            let mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / n;
            super::logistic::logit(mean.clamp(1e-6, 1.0 - 1e-6))
        }
        (_, Some(w)) => {
            let sw: f64 = rows.iter().map(|&i| w[i]).sum();
            let swt: f64 = rows.iter().map(|&i| w[i] * targets[i]).sum();
            if sw > 0.0 && (swt / sw).is_finite() {
                swt / sw
            } else {
                0.0
            }
        }
        (_, None) => rows.iter().map(|&i| targets[i]).sum::<f64>() / n,
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Train a network by Adam for `config.epochs` epochs and return the final
/// weights. With early stopping, training ends after `patience` epochs
/// without validation improvement and the best validation weights are kept.
pub fn fit_mlp(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    loss: &LossKind,
    arch: &MlpArchitecture,
    config: &TrainConfig,
) -> Result<Mlp> {
    config.validate()?;
    let (n, p) = x.dim();
    check_inputs(x, targets, loss, p)?;

    let mut rows: Vec<usize> = (0..n).collect();
    let held_out = match config.early_stopping {
        Some(es) => {
            rows.shuffle(&mut rng_from_seed(config.seed ^ 0x0A11_DA7E_5EED_0001));
            let k = ((es.validation_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
            let val = rows.split_off(n - k);
            rows.sort_unstable();
            Some(val)
        }
        None => None,
    };
    if rows.len() < config.batch_size {
        return Err(Error::arg(format!(
            "mlp: {} training rows is fewer than batch size {}",
            rows.len(),
            config.batch_size
        )));
    }

    let mut net = Mlp::init(arch, p, config.seed, config.weight_init_scale)?;
    for (j, col) in x.columns().into_iter().enumerate() {
        let mean = col.mean().unwrap_or(0.0);
        let sd = col.std(0.0);
        net.shift[j] = mean;
        net.scale[j] = if sd > 0.0 { sd } else { 1.0 };
    }
    let xs = net.standardize(x);
    let weights = loss.weights();
    net.start_constant(base_value(&rows, targets, weights, loss));

    // a separate stream for shuffling so initialization is unaffected by n
    let mut rng = rng_from_seed(config.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let np = net.params.len();
    let (mut m, mut v, mut grad) = (vec![0.0; np], vec![0.0; np], vec![0.0; np]);
    let mut order = rows;
    let mut step = 0i32;
    let validation = held_out.map(|idx| {
        let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let w: Option<Vec<f64>> = weights.map(|w| idx.iter().map(|&i| w[i]).collect());
        (xs.select(Axis(0), &idx), t, w)
    });
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0;
    let mut tb = Vec::with_capacity(config.batch_size);
    let mut wb = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = xs.select(Axis(0), chunk);
            tb.clear();
            tb.extend(chunk.iter().map(|&i| targets[i]));
            let wb = weights.map(|w| {
                wb.clear();
                wb.extend(chunk.iter().map(|&i| w[i]));
                wb.as_slice()
            });
            let l = net.loss_grad_std(xb, &tb, wb, loss, &mut grad);
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            for k in 0..np {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
                net.params[k] -= config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
        if net.params.iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        if let (Some((xv, tv, wv)), Some(es)) = (&validation, config.early_stopping) {
            let l = net.mean_loss_std(xv.clone(), tv, wv.as_deref(), loss);
            if !l.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            if best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, net.params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    Ok(net)
}

/// Central finite differences with this step.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative discrepancy between the backpropagated gradient of a
/// freshly initialized network and central finite differences.
pub fn gradient_check(
    arch: &MlpArchitecture,
    loss: &LossKind,
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    seed: u64,
) -> Result<f64> {
    let mut net = Mlp::init(arch, x.ncols(), seed, 1.0)?;
    // zero biases put units with all-dead inputs exactly on the ReLU kink
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    for s in &net.layers {
        let start = s.offset + s.out * s.inp;
        for b in &mut net.params[start..start + s.out] {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    gradient_check_at(&net, loss, x, targets)
}

/// As [`gradient_check`], at the given network's parameters.
pub fn gradient_check_at(
    net: &Mlp,
    loss: &LossKind,
    x: ArrayView2<'_, f64>,
    targets: &[f64],
) -> Result<f64> {
    let (_, analytic) = net.loss_and_gradient(x, targets, loss)?;
    let mut probe = net.clone();
    let base = net.params().to_vec();
    let mut worst = 0.0f64;
    for k in 0..base.len() {
        probe.params[k] = base[k] + FD_STEP;
        let up = probe.loss(x, targets, loss);
        probe.params[k] = base[k] - FD_STEP;
        let down = probe.loss(x, targets, loss);
        probe.params[k] = base[k];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(worst)
}
