//! View score regressor.
//!
//! A two-stage MLP predicts the scaled score of the view taken from camera
//! angles `(θ, φ)`, given the feature vector of the pose's top view:
//!
//! ```text
//! embedding ─ MLP1 ─┐
//!                   concat ─ MLP2 ─ FC(1) + BN + sigmoid
//!   (θ, φ) ─────────┘
//! ```
//!
//! Every hidden block is `FC + BN + ReLU`; all blocks but the first of each
//! MLP apply dropout to their input. Training minimizes mean squared error
//! with Adam.

mod io;

pub use io::{load_model, load_model_for, read_model, save_model, write_model};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetModel;
use crate::geometry::{cos_deg, sin_deg};
use crate::scoring::ScoreTable;
use crate::seeds::stream_rng;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("invalid regressor configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("example {index}: {reason}")]
    InvalidExample { index: usize, reason: String },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated")]
    Truncated,
    #[error("model checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleEncoding {
    /// `(θ/360, φ/90)` with θ reduced to `[0, 360)`.
    Raw,
    /// `(sin θ, cos θ, sin φ, cos φ)`.
    Sincos,
}

impl AngleEncoding {
    pub fn width(self) -> usize {
        match self {
            AngleEncoding::Raw => 2,
            AngleEncoding::Sincos => 4,
        }
    }

    pub fn encode(self, theta: f64, phi: f64, out: &mut Vec<f64>) {
        let theta = theta.rem_euclid(360.0);
        match self {
            AngleEncoding::Raw => out.extend([theta / 360.0, phi / 90.0]),
            AngleEncoding::Sincos => {
                out.extend([sin_deg(theta), cos_deg(theta), sin_deg(phi), cos_deg(phi)])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub embed_dim: usize,
    pub mlp1_widths: Vec<usize>,
    pub mlp2_widths: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub angle_encoding: AngleEncoding,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            mlp1_widths: vec![256, 256],
            mlp2_widths: vec![64, 64, 64],
            dropout: 0.25,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            angle_encoding: AngleEncoding::Raw,
            seed: 0,
        }
    }
}

impl RegressorConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.embed_dim == 0 {
            out.push("embed_dim must be > 0".to_string());
        }
        if self.mlp1_widths.is_empty() || self.mlp1_widths.contains(&0) {
            out.push("mlp1_widths must be nonempty with every width > 0".to_string());
        }
        if self.mlp2_widths.is_empty() || self.mlp2_widths.contains(&0) {
            out.push("mlp2_widths must be nonempty with every width > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push("dropout must be in [0, 1)".to_string());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            out.push("learning_rate must be finite and >= 0".to_string());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be > 0".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), RegressorError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(RegressorError::InvalidConfig(v.join("; ")))
        }
    }
}

/// One `{top embedding, angles} → scaled score` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub top_embedding: Vec<f64>,
    pub theta: f64,
    pub phi: f64,
    pub target: f64,
}

/// One example per scored view: the pose's top-view features, the view's
/// angles and its per-pose scaled score. Views without a score entry (for
/// instance those of held-out categories) are skipped.
pub fn build_examples(model: &DatasetModel, table: &ScoreTable) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for (_, _, pose) in model.index().poses() {
        let top = model.record(pose.top);
        for &v in &pose.views {
            let r = model.record(v);
            let Some(e) = table.get(&r.id) else { continue };
            out.push(TrainingExample {
                top_embedding: top.features.iter().map(|&x| x as f64).collect(),
                theta: r.theta,
                phi: r.phi,
                target: e.scaled,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active, running statistics updated.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Which statistics batch norm uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnStats {
    Batch,
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// `FC + BN + activation`, optionally preceded by dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub dropout_before: bool,
    pub activation: Activation,
}

impl Layer {
    fn new(
        n_in: usize,
        n_out: usize,
        dropout_before: bool,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let a = 1.0 / (n_in as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(n_out, n_in, |_, _| rng.random_range(-a..a)),
            bias: DVector::zeros(n_out),
            gamma: DVector::from_element(n_out, 1.0),
            beta: DVector::zeros(n_out),
            running_mean: DVector::zeros(n_out),
            running_var: DVector::from_element(n_out, 1.0),
            dropout_before,
            activation,
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [
            self.weight.as_slice(),
            self.bias.as_slice(),
            self.gamma.as_slice(),
            self.beta.as_slice(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.weight.as_mut_slice(),
            self.bias.as_mut_slice(),
            self.gamma.as_mut_slice(),
            self.beta.as_mut_slice(),
        ]
    }
}

/// Gradients of one layer's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
}

impl LayerGrads {
    fn tensors(&self) -> [&[f64]; 4] {
        [
            self.weight.as_slice(),
            self.bias.as_slice(),
            self.gamma.as_slice(),
            self.beta.as_slice(),
        ]
    }
}

struct Cache {
    input: DMatrix<f64>,
    mask: Option<DMatrix<f64>>,
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
    output: DMatrix<f64>,
    batch_mean: DVector<f64>,
    batch_var: DVector<f64>,
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorState {
    pub embed_dim: usize,
    pub angle_encoding: AngleEncoding,
    pub dropout: f64,
    pub layers: Vec<Layer>,
    /// Index of the first layer whose input is `[MLP1 output, angles]`.
    pub concat_at: usize,
    pub training: bool,
}

impl RegressorState {
    /// Fresh network: fan-in uniform weights, zero biases, BN scale 1 and shift 0.
    pub fn new(cfg: &RegressorConfig, rng: &mut impl Rng) -> Result<Self, RegressorError> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut prev = cfg.embed_dim;
        for (i, &w) in cfg.mlp1_widths.iter().enumerate() {
            layers.push(Layer::new(prev, w, i > 0, Activation::Relu, rng));
            prev = w;
        }
        let concat_at = layers.len();
        prev += cfg.angle_encoding.width();
        for (i, &w) in cfg.mlp2_widths.iter().enumerate() {
            layers.push(Layer::new(prev, w, i > 0, Activation::Relu, rng));
            prev = w;
        }
        layers.push(Layer::new(prev, 1, false, Activation::Sigmoid, rng));
        Ok(Self {
            embed_dim: cfg.embed_dim,
            angle_encoding: cfg.angle_encoding,
            dropout: cfg.dropout,
            layers,
            concat_at,
            training: false,
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.tensors().iter().map(|t| t.len()).sum::<usize>())
            .sum()
    }

    /// Builds the embedding and angle input matrices.
    pub fn encode<'e>(
        &self,
        rows: impl ExactSizeIterator<Item = (&'e [f64], f64, f64)>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), RegressorError> {
        let n = rows.len();
        let aw = self.angle_encoding.width();
        let mut x = DMatrix::zeros(n, self.embed_dim);
        let mut a = DMatrix::zeros(n, aw);
        let mut buf = Vec::with_capacity(aw);
        for (i, (emb, theta, phi)) in rows.enumerate() {
            if emb.len() != self.embed_dim {
                return Err(RegressorError::DimensionMismatch {
                    expected: self.embed_dim,
                    found: emb.len(),
                });
            }
            if !emb.iter().all(|v| v.is_finite()) || !theta.is_finite() || !phi.is_finite() {
                return Err(RegressorError::InvalidExample {
                    index: i,
                    reason: "non-finite input".into(),
                });
            }
            for (j, &v) in emb.iter().enumerate() {
                x[(i, j)] = v;
            }
            buf.clear();
            self.angle_encoding.encode(theta, phi, &mut buf);
            for (j, &v) in buf.iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        Ok((x, a))
    }

    fn encode_examples(
        &self,
        examples: &[TrainingExample],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), RegressorError> {
        self.encode(
            examples
                .iter()
                .map(|e| (e.top_embedding.as_slice(), e.theta, e.phi)),
        )
    }

    fn forward_impl(
        &self,
        x: &DMatrix<f64>,
        angles: &DMatrix<f64>,
        bn: BnStats,
        mut dropout: Option<&mut dyn rand::RngCore>,
    ) -> Result<(DMatrix<f64>, Vec<Cache>), RegressorError> {
        let n = x.nrows();
        let mut caches: Vec<Cache> = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            if li == self.concat_at {
                let mut joined = DMatrix::zeros(n, a.ncols() + angles.ncols());
                joined.columns_mut(0, a.ncols()).copy_from(&a);
                joined
                    .columns_mut(a.ncols(), angles.ncols())
                    .copy_from(angles);
                a = joined;
            }
            let mut mask = None;
            if layer.dropout_before && self.dropout > 0.0 {
                if let Some(rng) = dropout.as_deref_mut() {
                    let keep = 1.0 / (1.0 - self.dropout);
                    let p = self.dropout;
                    let m = DMatrix::from_fn(n, a.ncols(), |_, _| {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    });
                    a.component_mul_assign(&m);
                    mask = Some(m);
                }
            }
            let mut z = &a * layer.weight.transpose();
            for j in 0..z.ncols() {
                let b = layer.bias[j];
                z.column_mut(j).add_scalar_mut(b);
            }
            let units = z.ncols();
            let mut batch_mean = DVector::zeros(units);
            let mut batch_var = DVector::zeros(units);
            let mut inv_std = DVector::zeros(units);
            let mut xhat = z;
            for j in 0..units {
                let mut col = xhat.column_mut(j);
                let (mean, var) = match bn {
                    BnStats::Batch => {
                        let m = col.mean();
                        let v = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                        batch_mean[j] = m;
                        batch_var[j] = v;
                        (m, v)
                    }
                    BnStats::Running => (layer.running_mean[j], layer.running_var[j]),
                };
                let inv = 1.0 / (var + BN_EPS).sqrt();
                inv_std[j] = inv;
                col.apply(|v| *v = (*v - mean) * inv);
            }
            let mut out = xhat.clone();
            for j in 0..units {
                let (g, b) = (layer.gamma[j], layer.beta[j]);
                out.column_mut(j).apply(|v| {
                    let y = g * *v + b;
                    *v = match layer.activation {
                        Activation::Relu => y.max(0.0),
                        Activation::Sigmoid => 1.0 / (1.0 + (-y).exp()),
                    }
                });
            }
            if !out.iter().all(|v| v.is_finite()) {
                return Err(RegressorError::NonFinite { layer: li });
            }
            let next = out.clone();
            caches.push(Cache {
                input: a,
                mask,
                xhat,
                inv_std,
                output: out,
                batch_mean,
                batch_var,
            });
            a = next;
        }
        Ok((a, caches))
    }

    fn backward(&self, caches: &[Cache], d_out: DMatrix<f64>, bn: BnStats) -> Vec<LayerGrads> {
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut d = d_out;
        for (li, (layer, c)) in self.layers.iter().zip(caches).enumerate().rev() {
            let n = d.nrows() as f64;
            // Through the activation.
            let mut dy = d;
            match layer.activation {
                Activation::Relu => dy.zip_apply(&c.output, |g, o| {
                    if o <= 0.0 {
                        *g = 0.0
                    }
                }),
                Activation::Sigmoid => dy.zip_apply(&c.output, |g, o| *g *= o * (1.0 - o)),
            }
            let units = dy.ncols();
            let mut d_gamma = DVector::zeros(units);
            let mut d_beta = DVector::zeros(units);
            let mut dz = dy;
            for j in 0..units {
                let xh = c.xhat.column(j);
                let mut col = dz.column_mut(j);
                d_gamma[j] = col.dot(&xh);
                d_beta[j] = col.sum();
                let g = layer.gamma[j];
                let inv = c.inv_std[j];
                match bn {
                    BnStats::Batch => {
                        // dxhat = dy·γ; dz = inv/n·(n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        let s1 = d_beta[j] * g;
                        let s2 = d_gamma[j] * g;
                        for (v, x) in col.iter_mut().zip(xh.iter()) {
                            *v = inv / n * (n * *v * g - s1 - x * s2);
                        }
                    }
                    BnStats::Running => col.apply(|v| *v *= g * inv),
                }
            }
            let d_weight = dz.transpose() * &c.input;
            let d_bias = DVector::from_iterator(units, dz.column_iter().map(|col| col.sum()));
            grads.push(LayerGrads {
                weight: d_weight,
                bias: d_bias,
                gamma: d_gamma,
                beta: d_beta,
            });
            if li == 0 {
                break;
            }
            let mut da = &dz * &layer.weight;
            if let Some(m) = &c.mask {
                da.component_mul_assign(m);
            }
            if li == self.concat_at {
                let w = self.layers[li - 1].n_out();
                da = da.columns(0, w).into_owned();
            }
            d = da;
        }
        grads.reverse();
        grads
    }

    /// Mean squared error and its gradients over `examples`, without dropout.
    pub fn loss_and_gradients(
        &self,
        examples: &[TrainingExample],
        bn: BnStats,
    ) -> Result<(f64, Vec<LayerGrads>), RegressorError> {
        let (x, a) = self.encode_examples(examples)?;
        let t = DVector::from_iterator(examples.len(), examples.iter().map(|e| e.target));
        let (out, caches) = self.forward_impl(&x, &a, bn, None)?;
        let (loss, d_out) = mse(&out, &t);
        Ok((loss, self.backward(&caches, d_out, bn)))
    }

    fn loss_only(
        &self,
        x: &DMatrix<f64>,
        a: &DMatrix<f64>,
        t: &DVector<f64>,
        bn: BnStats,
    ) -> Result<f64, RegressorError> {
        let (out, _) = self.forward_impl(x, a, bn, None)?;
        Ok(mse(&out, t).0)
    }

    /// Forward pass over a batch. Train mode uses batch statistics, applies
    /// dropout drawn from `rng` and updates the running statistics.
    pub fn forward(
        &mut self,
        x: &DMatrix<f64>,
        angles: &DMatrix<f64>,
        mode: Mode,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<f64>, RegressorError> {
        match mode {
            Mode::Eval => Ok(self
                .forward_impl(x, angles, BnStats::Running, None)?
                .0
                .column(0)
                .iter()
                .copied()
                .collect()),
            Mode::Train => {
                let (out, caches) = self.forward_impl(x, angles, BnStats::Batch, Some(rng))?;
                self.update_running(&caches, x.nrows());
                Ok(out.column(0).iter().copied().collect())
            }
        }
    }

    fn update_running(&mut self, caches: &[Cache], n: usize) {
        let unbias = if n > 1 {
            n as f64 / (n - 1) as f64
        } else {
            1.0
        };
        for (layer, c) in self.layers.iter_mut().zip(caches) {
            for j in 0..layer.n_out() {
                layer.running_mean[j] =
                    BN_MOMENTUM * layer.running_mean[j] + (1.0 - BN_MOMENTUM) * c.batch_mean[j];
                layer.running_var[j] = BN_MOMENTUM * layer.running_var[j]
                    + (1.0 - BN_MOMENTUM) * c.batch_var[j] * unbias;
            }
        }
    }

    /// Eval-mode prediction for one input.
    pub fn predict(&self, embedding: &[f64], theta: f64, phi: f64) -> Result<f64, RegressorError> {
        Ok(self.predict_batch(&[(embedding, theta, phi)])?[0])
    }

    /// Eval-mode predictions; each equals the corresponding [`predict`](Self::predict).
    pub fn predict_batch(&self, inputs: &[(&[f64], f64, f64)]) -> Result<Vec<f64>, RegressorError> {
        let (x, a) = self.encode(inputs.iter().copied())?;
        let (out, _) = self.forward_impl(&x, &a, BnStats::Running, None)?;
        Ok(out.column(0).iter().copied().collect())
    }

    /// Mean squared error of eval-mode predictions.
    pub fn eval_loss(&self, examples: &[TrainingExample]) -> Result<f64, RegressorError> {
        let (x, a) = self.encode_examples(examples)?;
        let t = DVector::from_iterator(examples.len(), examples.iter().map(|e| e.target));
        self.loss_only(&x, &a, &t, BnStats::Running)
    }
}

fn mse(out: &DMatrix<f64>, t: &DVector<f64>) -> (f64, DMatrix<f64>) {
    let n = t.len() as f64;
    let mut loss = 0.0;
    let d = DMatrix::from_fn(t.len(), 1, |i, _| {
        let e = out[(i, 0)] - t[i];
        loss += e * e;
        2.0 * e / n
    });
    (loss / n, d)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(state: &RegressorState, lr: f64) -> Self {
        let shapes: Vec<usize> = state
            .layers
            .iter()
            .flat_map(|l| l.tensors().map(|t| t.len()))
            .collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, state: &mut RegressorState, grads: &[LayerGrads]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let mut k = 0;
        for (layer, g) in state.layers.iter_mut().zip(grads) {
            for (p, gt) in layer.tensors_mut().into_iter().zip(g.tensors()) {
                let (m, v) = (&mut self.m[k], &mut self.v[k]);
                for i in 0..p.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gt[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gt[i] * gt[i];
                    p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
                k += 1;
            }
        }
    }
}

fn check_examples(examples: &[TrainingExample], embed_dim: usize) -> Result<(), RegressorError> {
    if examples.is_empty() {
        return Err(RegressorError::EmptyDataset);
    }
    for (index, e) in examples.iter().enumerate() {
        if e.top_embedding.len() != embed_dim {
            return Err(RegressorError::DimensionMismatch {
                expected: embed_dim,
                found: e.top_embedding.len(),
            });
        }
        if !(0.0..=1.0).contains(&e.target) {
            return Err(RegressorError::InvalidExample {
                index,
                reason: format!("target {} outside [0, 1]", e.target),
            });
        }
    }
    Ok(())
}

/// Trains a fresh network on `examples`. Returns the state (in eval mode)
/// and the mean train-mode loss of every epoch.
///
/// A trailing mini-batch of a single example is skipped: its batch
/// statistics are undefined.
pub fn train(
    examples: &[TrainingExample],
    cfg: &RegressorConfig,
) -> Result<(RegressorState, Vec<f64>), RegressorError> {
    cfg.validate()?;
    check_examples(examples, cfg.embed_dim)?;
    let mut state = RegressorState::new(cfg, &mut stream_rng(cfg.seed, 0))?;
    let mut rng = stream_rng(cfg.seed, 1);
    let mut adam = Adam::new(&state, cfg.learning_rate);
    let (x, a) = state.encode_examples(examples)?;
    let t = DVector::from_iterator(examples.len(), examples.iter().map(|e| e.target));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    state.training = true;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() == 1 && examples.len() > 1 {
                continue;
            }
            let xb = x.select_rows(batch);
            let ab = a.select_rows(batch);
            let tb = DVector::from_iterator(batch.len(), batch.iter().map(|&i| t[i]));
            let (out, caches) = state
                .forward_impl(&xb, &ab, BnStats::Batch, Some(&mut rng))
                .map_err(|_| RegressorError::NonFiniteLoss { epoch })?;
            let (loss, d_out) = mse(&out, &tb);
            if !loss.is_finite() {
                return Err(RegressorError::NonFiniteLoss { epoch });
            }
            let grads = state.backward(&caches, d_out, BnStats::Batch);
            state.update_running(&caches, batch.len());
            adam.step(&mut state, &grads);
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        let epoch_loss = total / seen.max(1) as f64;
        if !epoch_loss.is_finite() {
            return Err(RegressorError::NonFiniteLoss { epoch });
        }
        history.push(epoch_loss);
    }
    state.training = false;
    Ok((state, history))
}

/// Relative errors below this gradient magnitude are measured against it
/// instead; central differences cannot resolve smaller gradients.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the mean squared error with central finite
/// differences for every trainable parameter, dropout disabled. Returns the
/// largest `|a − n| / max(|a|, |n|, GRADIENT_CHECK_FLOOR)`.
pub fn gradient_check(
    state: &RegressorState,
    examples: &[TrainingExample],
    epsilon: f64,
    bn: BnStats,
) -> Result<f64, RegressorError> {
    check_examples(examples, state.embed_dim)?;
    let (_, grads) = state.loss_and_gradients(examples, bn)?;
    let (x, a) = state.encode_examples(examples)?;
    let t = DVector::from_iterator(examples.len(), examples.iter().map(|e| e.target));
    let mut probe = state.clone();
    let mut worst: f64 = 0.0;
    for (li, g) in grads.iter().enumerate() {
        for k in 0..4 {
            let len = probe.layers[li].tensors()[k].len();
            for i in 0..len {
                let orig = probe.layers[li].tensors()[k][i];
                probe.layers[li].tensors_mut()[k][i] = orig + epsilon;
                let up = probe.loss_only(&x, &a, &t, bn)?;
                probe.layers[li].tensors_mut()[k][i] = orig - epsilon;
                let down = probe.loss_only(&x, &a, &t, bn)?;
                probe.layers[li].tensors_mut()[k][i] = orig;
                let numeric = (up - down) / (2.0 * epsilon);
                let analytic = g.tensors()[k][i];
                let scale = analytic.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
