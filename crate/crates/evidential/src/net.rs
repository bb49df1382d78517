//! A small fully connected network with reverse-mode backpropagation, the
//! evidential output head, and an Adam trainer.
//!
//! The network maps an input to `n(n+3)/2 + 1` raw outputs `p`. The head
//! reads them as the prediction `μ₀ = p[..n]`, the flat Cholesky
//! parametrization `ℓ = p[n..n+n(n+1)/2]`, and a bounded gate
//! `ν = (ν_hi+ν_lo)/2 + (ν_hi−ν_lo)/2 · tanh(p_last)`, which keeps `ν` in
//! the open interval `(ν_lo, ν_hi)`. The lower bound enforces `ν > n + 1`
//! (finite moments) and the upper bound is the numerical cut-off for the
//! `ν → ∞` limit; no additional clipping is applied anywhere.
//!
//! Training minimizes the mean coupled evidential loss over the batch.
//! Gradients flow through the hand-derived loss gradients, the head chain
//! rule, and layer-by-layer reverse accumulation through the affine/ReLU
//! stack.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::losses::{coupled_niw_nll, uncertainty_from_head, CoupledHeadParams, UncertaintyReport};
use crate::linalg::lower_tri_len;
use crate::rng::RngStream;

/// Checkpoint file format version.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
}

/// Output-head configuration: target dimension, the ν=rκ coupling constant,
/// and the open ν interval. Defaults for n=2 are `(3, 13)`, i.e.
/// `ν = 8 + 5·tanh(p_last)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n: usize,
    pub r: f64,
    pub nu_lo: f64,
    pub nu_hi: f64,
}

impl HeadConfig {
    pub fn new(n: usize, r: f64, nu_lo: f64, nu_hi: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("head dimension must be positive"));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::domain("coupling r must be positive and finite"));
        }
        // ν lives in the OPEN interval, so ν_lo = n+1 is admissible.
        if !(nu_lo >= n as f64 + 1.0) {
            return Err(Error::domain(format!(
                "nu_lo must be at least n + 1 = {}",
                n as f64 + 1.0
            )));
        }
        if !(nu_hi > nu_lo) {
            return Err(Error::domain("nu_hi must exceed nu_lo"));
        }
        Ok(HeadConfig { n, r, nu_lo, nu_hi })
    }

    /// Default head for a given dimension: `r = 1`, `ν ∈ (n+1, n+11)`.
    pub fn default_for(n: usize) -> Self {
        HeadConfig::new(n, 1.0, n as f64 + 1.0, n as f64 + 11.0)
            .expect("default head bounds are valid")
    }

    /// Raw outputs the head consumes: `n(n+3)/2 + 1`.
    pub fn output_dim(&self) -> usize {
        self.n + lower_tri_len(self.n) + 1
    }

    /// The bounded gate map. `tanh` saturates to ±1 in floating point, so
    /// its value is nudged inside by 1 ulp-scale epsilon to keep ν strictly
    /// inside the open interval.
    pub fn nu_from_raw(&self, p: f64) -> f64 {
        let mid = 0.5 * (self.nu_hi + self.nu_lo);
        let half = 0.5 * (self.nu_hi - self.nu_lo);
        let t = p.tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        mid + half * t
    }

    /// Derivative of [`Self::nu_from_raw`] with respect to the raw output.
    pub fn nu_raw_derivative(&self, p: f64) -> f64 {
        let half = 0.5 * (self.nu_hi - self.nu_lo);
        let t = p.tanh();
        half * (1.0 - t * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: HeadConfig,
}

impl NetworkConfig {
    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.output_dim(), prev));
        dims
    }
}

/// One affine layer, `rows × cols` weights stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let mut z = self.bias[i];
                for j in 0..self.cols {
                    z += self.weights[i * self.cols + j] * input[j];
                }
                z
            })
            .collect()
    }
}

/// Weights, biases, head configuration, and the seed used at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl ModelState {
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flatten all parameters, layer by layer, weights then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            flat.extend_from_slice(&l.weights);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    /// Overwrite all parameters from a flat vector (inverse of
    /// [`Self::to_flat`]).
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
    }
}

/// Optimizer settings. The defaults train the circle experiment: full batch,
/// 2000 epochs, learning rate 1e-3.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 300,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain("learning rate must be nonnegative"));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::domain(format!("adam_{name} must be in (0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::domain("adam_eps must be positive"));
        }
        Ok(())
    }
}

/// He-style fan-in-scaled normal initialization, deterministic per seed.
/// Biases start at zero.
pub fn init(config: &NetworkConfig, seed: u64) -> ModelState {
    let mut rng = RngStream::new(seed);
    let layers = config
        .layer_dims()
        .iter()
        .map(|&(rows, cols)| {
            let scale = (2.0 / cols as f64).sqrt();
            Layer {
                rows,
                cols,
                weights: (0..rows * cols).map(|_| scale * rng.normal()).collect(),
                bias: vec![0.0; rows],
            }
        })
        .collect();
    ModelState {
        config: config.clone(),
        layers,
        seed,
    }
}

/// Forward pass: affine layers with ReLU between them, linear output.
pub fn forward(model: &ModelState, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != model.config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.config.input_dim,
            actual: input.len(),
        });
    }
    let last = model.layers.len() - 1;
    let mut a = input.to_vec();
    for (l, layer) in model.layers.iter().enumerate() {
        a = layer.forward(&a);
        if l < last {
            for v in &mut a {
                *v = v.max(0.0);
            }
        }
    }
    Ok(a)
}

/// Interpret raw network outputs as coupled head parameters.
pub fn head_transform(p: &[f64], head: &HeadConfig) -> CoupledHeadParams {
    assert_eq!(p.len(), head.output_dim(), "raw output length");
    let n = head.n;
    let tri = lower_tri_len(n);
    let nu = head.nu_from_raw(p[n + tri]);
    assert!(
        nu > head.nu_lo && nu < head.nu_hi,
        "gate value escaped its open interval"
    );
    CoupledHeadParams::new(p[..n].to_vec(), p[n..n + tri].to_vec(), nu, head.r)
        .expect("bounded head outputs are always valid")
}

/// Mean coupled loss over a batch and its gradient with respect to every
/// network parameter (layout matching [`ModelState::to_flat`]).
pub fn loss_and_grad(model: &ModelState, batch: &[(f64, Vec<f64>)]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::domain("batch must be non-empty"));
    }
    let head = &model.config.head;
    let n = head.n;
    let tri = lower_tri_len(n);
    let last = model.layers.len() - 1;
    let mut grad = vec![0.0; model.param_count()];
    let mut total = 0.0;

    for (t, y) in batch {
        // Forward, keeping post-activation values per layer.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(model.layers.len() + 1);
        activations.push(vec![*t]);
        for (l, layer) in model.layers.iter().enumerate() {
            let mut z = layer.forward(activations.last().unwrap());
            if l < last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            activations.push(z);
        }
        let p = activations.last().unwrap();
        let h = head_transform(p, head);
        let lv = coupled_niw_nll(y, &h)?;
        total += lv.value;

        // Chain the loss gradient through the head: μ and ℓ map identically,
        // the gate through the tanh derivative.
        let mut delta: Vec<f64> = lv.gradients[..n + tri].to_vec();
        delta.push(lv.gradients[n + tri] * head.nu_raw_derivative(p[n + tri]));

        // Reverse through the stack.
        let mut offset = grad.len();
        for l in (0..model.layers.len()).rev() {
            let layer = &model.layers[l];
            offset -= layer.weights.len() + layer.bias.len();
            let input = &activations[l];
            let wgrad = &mut grad[offset..offset + layer.weights.len()];
            for i in 0..layer.rows {
                for j in 0..layer.cols {
                    wgrad[i * layer.cols + j] += delta[i] * input[j];
                }
            }
            let bgrad = &mut grad[offset + layer.weights.len()..offset + layer.weights.len() + layer.rows];
            for i in 0..layer.rows {
                bgrad[i] += delta[i];
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.cols];
                for j in 0..layer.cols {
                    let mut s = 0.0;
                    for i in 0..layer.rows {
                        s += layer.weights[i * layer.cols + j] * delta[i];
                    }
                    // ReLU gate: the stored activation is max(z, 0), so a
                    // zero activation means a dead unit.
                    prev[j] = if activations[l][j] > 0.0 { s } else { 0.0 };
                }
                delta = prev;
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((total * scale, grad))
}

/// Train with Adam. Returns the trained model and the per-epoch mean loss.
/// Deterministic given `(model, data, cfg)`: batches are drawn in a fixed
/// seeded order and the optimizer state is rebuilt from scratch.
pub fn train(
    model: &ModelState,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelState, Vec<f64>)> {
    cfg.validate()?;
    if data.records.is_empty() {
        return Err(Error::domain("training data must be non-empty"));
    }
    let mut state = model.clone();
    let mut params = state.to_flat();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut step = 0u32;
    let mut history = Vec::with_capacity(cfg.epochs);
    let shuffle = cfg.batch_size < data.records.len();
    let base_stream = RngStream::new(cfg.seed);

    for epoch in 0..cfg.epochs {
        let order: Vec<usize> = if shuffle {
            let mut idx: Vec<usize> = (0..data.records.len()).collect();
            let mut stream = base_stream.split(epoch as u64);
            for i in (1..idx.len()).rev() {
                idx.swap(i, stream.index(i + 1));
            }
            idx
        } else {
            (0..data.records.len()).collect()
        };

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(f64, Vec<f64>)> = chunk
                .iter()
                .map(|&i| data.records[i].clone())
                .collect();
            let (loss, grad) = loss_and_grad(&state, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;

            step += 1;
            let bc1 = 1.0 - cfg.adam_beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.adam_beta2.powi(step as i32);
            for i in 0..params.len() {
                m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
                v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
            state.set_flat(&params);
        }
        let mean = epoch_loss / data.records.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(mean);
    }
    Ok((state, history))
}

/// Forward → head → uncertainty moments, with the raw gate value exposed.
pub fn predict(model: &ModelState, input: &[f64]) -> Result<UncertaintyReport> {
    let p = forward(model, input)?;
    let h = head_transform(&p, &model.config.head);
    uncertainty_from_head(&h)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: ModelState,
}

/// Persist a model as versioned JSON. Weights round-trip bit-exactly.
pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {}",
            ckpt.format_version
        )));
    }
    Ok(ckpt.model)
}
