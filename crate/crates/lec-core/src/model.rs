//! Dense multiclass classifier with per-example losses and an Adam step.
//!
//! The network is a stack of fully connected layers with ReLU activations
//! and inverted dropout on the hidden layers, softmax on the output. All
//! math is `f64`. Stochastic forward passes derive their dropout masks from
//! an explicit seed, so equal seeds reproduce equal outputs bit for bit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matrix::Matrix;
use crate::rng::{self, tag};

/// Probability floor inside `-ln(p)` so a zero probability cannot produce
/// an infinite loss.
const PROB_FLOOR: f64 = 1e-12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Network shape and dropout rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Drop probability on each hidden activation, in `[0, 1)`.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize, dropout: f64) -> Result<Self> {
        if input_dim == 0 || classes < 2 {
            return Err(Error::InvalidParam(format!(
                "need input_dim >= 1 and classes >= 2, got {input_dim} and {classes}"
            )));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParam("zero-width hidden layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidParam(format!(
                "dropout {dropout} outside [0, 1)"
            )));
        }
        Ok(ModelConfig {
            input_dim,
            hidden,
            classes,
            dropout,
        })
    }

    /// Layer widths from input to output.
    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden);
        d.push(self.classes);
        d
    }
}

/// How a forward pass treats stochastic operations.
///
/// `Stochastic` applies dropout with masks derived from the seed; equal
/// seeds on equal inputs and parameters yield identical outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Deterministic,
    Stochastic(u64),
}

/// Per-example cross-entropy losses, aligned by position with the example
/// ids they were computed for.
#[derive(Clone, Debug, PartialEq)]
pub struct LossVector {
    values: Vec<f64>,
}

impl LossVector {
    /// Wrap raw loss values; every entry must be finite and non-negative.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParam(format!("invalid loss value {v}")));
        }
        Ok(LossVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// One fully connected layer; `weights` is `input x output` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient of the mean loss with respect to one layer.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct AdamMoments {
    m_weights: Matrix,
    v_weights: Matrix,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

/// Classifier parameters plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    layers: Vec<DenseLayer>,
    moments: Vec<AdamMoments>,
    step: u64,
}

impl ModelState {
    /// Initialize with He-style uniform weights, `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`,
    /// and zero biases. Deterministic under `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let dims = config.dims();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut moments = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut r = rng::stream(seed, &[tag::MODEL_INIT, l as u64]);
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| r.gen_range(-bound..bound))
                .collect();
            layers.push(DenseLayer {
                weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
                bias: vec![0.0; fan_out],
            });
            moments.push(AdamMoments {
                m_weights: Matrix::zeros(fan_in, fan_out),
                v_weights: Matrix::zeros(fan_in, fan_out),
                m_bias: vec![0.0; fan_out],
                v_bias: vec![0.0; fan_out],
            });
        }
        ModelState {
            config,
            layers,
            moments,
            step: 0,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable layer access, for parameter perturbation in gradient checks.
    /// Optimizer moments are not resized; callers must keep shapes intact.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.config.input_dim {
            return Err(Error::Shape {
                expected: format!("{} feature columns", self.config.input_dim),
                got: format!("{} columns", features.cols()),
            });
        }
        Ok(())
    }

    fn check_labels(&self, features: &Matrix, labels: &[usize]) -> Result<()> {
        if labels.len() != features.rows() {
            return Err(Error::Shape {
                expected: format!("{} labels", features.rows()),
                got: format!("{} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.config.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: self.config.classes,
            });
        }
        Ok(())
    }

    /// Class probabilities for each input row.
    ///
    /// Every output row is a probability simplex. Dropout is applied only in
    /// [`ForwardMode::Stochastic`].
    pub fn forward(&self, features: &Matrix, mode: ForwardMode) -> Result<Matrix> {
        self.forward_exec(features, mode, Exec::default())
    }

    /// [`ModelState::forward`] on an explicit execution backend.
    pub fn forward_exec(&self, features: &Matrix, mode: ForwardMode, exec: Exec) -> Result<Matrix> {
        let cache = self.forward_cached(features, mode, exec)?;
        Ok(cache.probs)
    }

    /// Per-example cross-entropy `-ln(p[label])` computed from
    /// [`ModelState::forward`] under the given mode.
    pub fn per_example_loss(
        &self,
        features: &Matrix,
        labels: &[usize],
        mode: ForwardMode,
    ) -> Result<LossVector> {
        self.per_example_loss_exec(features, labels, mode, Exec::default())
    }

    /// [`ModelState::per_example_loss`] on an explicit execution backend.
    pub fn per_example_loss_exec(
        &self,
        features: &Matrix,
        labels: &[usize],
        mode: ForwardMode,
        exec: Exec,
    ) -> Result<LossVector> {
        self.check_labels(features, labels)?;
        let probs = self.forward_exec(features, mode, exec)?;
        let values = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -(probs.get(i, y).max(PROB_FLOOR)).ln())
            .collect();
        LossVector::new(values)
    }

    /// Mean loss and per-layer gradients, without touching parameters.
    pub fn loss_gradients(
        &self,
        features: &Matrix,
        labels: &[usize],
        mode: ForwardMode,
        exec: Exec,
    ) -> Result<(f64, Vec<LayerGrads>)> {
        self.check_labels(features, labels)?;
        if features.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let cache = self.forward_cached(features, mode, exec)?;
        let mean_loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -(cache.probs.get(i, y).max(PROB_FLOOR)).ln())
            .sum::<f64>()
            / labels.len() as f64;
        let grads = self.backward(features, labels, &cache, exec);
        Ok((mean_loss, grads))
    }

    /// One optimizer update on the mean-loss gradient of the batch.
    ///
    /// Adam with fixed `beta1 = 0.9`, `beta2 = 0.999`; the step counter
    /// increments exactly once. An empty batch is rejected with
    /// [`Error::EmptyBatch`] so callers can decide how to count it.
    pub fn sgd_step(
        &mut self,
        features: &Matrix,
        labels: &[usize],
        learning_rate: f64,
        mode: ForwardMode,
    ) -> Result<()> {
        self.sgd_step_exec(features, labels, learning_rate, mode, Exec::default())
    }

    /// [`ModelState::sgd_step`] on an explicit execution backend.
    pub fn sgd_step_exec(
        &mut self,
        features: &Matrix,
        labels: &[usize],
        learning_rate: f64,
        mode: ForwardMode,
        exec: Exec,
    ) -> Result<()> {
        let (_, grads) = self.loss_gradients(features, labels, mode, exec)?;
        self.apply_adam(&grads, learning_rate);
        self.step += 1;
        if !self.is_finite() {
            return Err(Error::NonFiniteUpdate { step: self.step });
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn apply_adam(&mut self, grads: &[LayerGrads], learning_rate: f64) {
        let t = (self.step + 1) as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for (l, g) in grads.iter().enumerate() {
            let layer = &mut self.layers[l];
            let mom = &mut self.moments[l];
            adam_update(
                layer.weights.data_mut(),
                mom.m_weights.data_mut(),
                mom.v_weights.data_mut(),
                g.weights.data(),
                learning_rate,
                bias1,
                bias2,
            );
            adam_update(
                &mut layer.bias,
                &mut mom.m_bias,
                &mut mom.v_bias,
                &g.bias,
                learning_rate,
                bias1,
                bias2,
            );
        }
    }

    /// Forward pass keeping the intermediates backward needs.
    fn forward_cached(&self, features: &Matrix, mode: ForwardMode, exec: Exec) -> Result<Cache> {
        self.check_features(features)?;
        let n = features.rows();
        let dropout = self.config.dropout;
        let dropout_seed = match mode {
            ForwardMode::Stochastic(seed) if dropout > 0.0 => Some(seed),
            _ => None,
        };

        let mut hidden = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut input = features;
        for (l, layer) in self.layers.iter().enumerate() {
            let last = l == self.layers.len() - 1;
            let out_dim = layer.bias.len();
            let mut out = Matrix::zeros(n, out_dim);
            exec.for_each_chunk_mut(out.data_mut(), out_dim, |i, row| {
                affine_row(input.row(i), layer, row);
                if last {
                    softmax_row(row);
                } else {
                    for v in row.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
            });
            if last {
                return Ok(Cache {
                    hidden,
                    probs: out,
                });
            }
            // Inverted dropout: surviving activations scale by 1/keep so the
            // deterministic pass needs no rescaling.
            let mask = match dropout_seed {
                Some(seed) => {
                    let mut mask = Matrix::zeros(n, out_dim);
                    let scale = 1.0 / (1.0 - dropout);
                    exec.for_each_chunk_mut(mask.data_mut(), out_dim, |i, row| {
                        let mut r = rng::stream(seed, &[tag::DROPOUT_ROW, l as u64, i as u64]);
                        for v in row.iter_mut() {
                            *v = if r.gen::<f64>() < dropout { 0.0 } else { scale };
                        }
                    });
                    Some(mask)
                }
                None => None,
            };
            let dropped = match &mask {
                Some(mask) => {
                    let mut dropped = out.clone();
                    exec.for_each_chunk_mut(dropped.data_mut(), out_dim, |i, row| {
                        for (v, m) in row.iter_mut().zip(mask.row(i)) {
                            *v *= m;
                        }
                    });
                    dropped
                }
                None => out.clone(),
            };
            hidden.push(HiddenCache {
                pre_dropout: out,
                mask,
                dropped,
            });
            input = &hidden.last().expect("just pushed").dropped;
        }
        unreachable!("layer stack always ends with the output layer");
    }

    fn backward(
        &self,
        features: &Matrix,
        labels: &[usize],
        cache: &Cache,
        exec: Exec,
    ) -> Vec<LayerGrads> {
        let n = features.rows();
        let inv_n = 1.0 / n as f64;
        let classes = self.config.classes;

        // d(mean loss)/d(logits) for softmax cross-entropy.
        let mut delta = cache.probs.clone();
        exec.for_each_chunk_mut(delta.data_mut(), classes, |i, row| {
            row[labels[i]] -= 1.0;
            for v in row.iter_mut() {
                *v *= inv_n;
            }
        });

        let mut grads: Vec<Option<LayerGrads>> = (0..self.layers.len()).map(|_| None).collect();
        for l in (0..self.layers.len()).rev() {
            let layer_input: &Matrix = if l == 0 {
                features
            } else {
                &cache.hidden[l - 1].dropped
            };
            let layer = &self.layers[l];
            let (in_dim, out_dim) = (layer.weights.rows(), layer.bias.len());

            // dW[i][j] = sum_n input[n][i] * delta[n][j], fixed order over n.
            let mut dw = Matrix::zeros(in_dim, out_dim);
            exec.for_each_chunk_mut(dw.data_mut(), out_dim, |i, row| {
                for r in 0..n {
                    let x = layer_input.get(r, i);
                    if x != 0.0 {
                        for (v, d) in row.iter_mut().zip(delta.row(r)) {
                            *v += x * d;
                        }
                    }
                }
            });
            let mut db = vec![0.0; out_dim];
            for r in 0..n {
                for (v, d) in db.iter_mut().zip(delta.row(r)) {
                    *v += d;
                }
            }
            grads[l] = Some(LayerGrads {
                weights: dw,
                bias: db,
            });

            if l == 0 {
                break;
            }

            // Propagate: d(dropped input) = delta . W^T, then undo dropout
            // and the ReLU gate of the previous hidden layer.
            let prev = &cache.hidden[l - 1];
            let mut dprev = Matrix::zeros(n, in_dim);
            exec.for_each_chunk_mut(dprev.data_mut(), in_dim, |r, row| {
                let drow = delta.row(r);
                for (i, v) in row.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (d, w) in drow.iter().zip(layer.weights.row(i)) {
                        s += d * w;
                    }
                    *v = s;
                }
                if let Some(mask) = &prev.mask {
                    for (v, m) in row.iter_mut().zip(mask.row(r)) {
                        *v *= m;
                    }
                }
                for (v, a) in row.iter_mut().zip(prev.pre_dropout.row(r)) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
            });
            delta = dprev;
        }
        grads.into_iter().map(|g| g.expect("filled above")).collect()
    }
}

struct HiddenCache {
    pre_dropout: Matrix,
    mask: Option<Matrix>,
    dropped: Matrix,
}

struct Cache {
    hidden: Vec<HiddenCache>,
    probs: Matrix,
}

fn affine_row(input: &[f64], layer: &DenseLayer, out: &mut [f64]) {
    out.copy_from_slice(&layer.bias);
    for (x, wrow) in input.iter().zip(layer.weights.iter_rows()) {
        if *x != 0.0 {
            for (o, w) in out.iter_mut().zip(wrow) {
                *o += x * w;
            }
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..params.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let mhat = m[i] / bias1;
        let vhat = v[i] / bias2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}
