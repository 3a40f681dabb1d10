//! Feed-forward network kernel.
//!
//! A network is a [`NetworkSpec`] plus a flat [`ParamVector`] genome. The
//! genome order is canonical: for each layer, the weight matrix of shape
//! `(out_dim, in_dim)` in row-major order, followed by the bias vector of
//! length `out_dim`. Masks and noise vectors index this layout directly, so it
//! must never change.
//!
//! Genomes are held as `f64` in memory. Trained parents and checkpoints are
//! `f32`-valued, and mutation noise is drawn as `f32` values, so a child
//! `θ ± γ` is computed without rounding and mirrored children cancel exactly.
//! Activations and accumulators are `f64`.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{loss_and_gradient, train_model, EpochStats, OptimizerKind, TrainConfig, TrainOutcome};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from, stream};

/// Probability floor applied before any logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture of a fully connected classifier. The last entry of
/// `layer_sizes` is the class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation, seed: u64) -> Self {
        Self {
            layer_sizes,
            hidden_activation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("a network needs at least an input and an output size"));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::config(format!("layer size at position {pos} is zero")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    /// `(in_dim, out_dim)` for each weight layer.
    pub fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|p| (p[0], p[1]))
    }

    /// Total parameter count `w`.
    pub fn param_count(&self) -> usize {
        self.layer_dims().map(|(i, o)| i * o + o).sum()
    }

    /// Same architecture, ignoring the initialization seed.
    pub fn same_architecture(&self, other: &NetworkSpec) -> bool {
        self.layer_sizes == other.layer_sizes && self.hidden_activation == other.hidden_activation
    }
}

/// Flat genome of all trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!("parameter {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(w: usize) -> Self {
        Self(vec![0.0; w])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Rounds every coordinate to the nearest `f32` value.
    pub fn round_to_f32(&self) -> Self {
        Self(self.0.iter().map(|&v| f64::from(v as f32)).collect())
    }

    pub fn is_f32_valued(&self) -> bool {
        self.0.iter().all(|&v| f64::from(v as f32) == v)
    }

    /// Splits the genome into per-layer views.
    pub fn layers(&self, spec: &NetworkSpec) -> Result<Vec<Layer>> {
        if self.len() != spec.param_count() {
            return Err(Error::shape(format!(
                "genome has {} parameters, architecture needs {}",
                self.len(),
                spec.param_count()
            )));
        }
        let mut offset = 0;
        let mut out = Vec::new();
        for (din, dout) in spec.layer_dims() {
            let weights = self.0[offset..offset + din * dout].to_vec();
            offset += din * dout;
            let bias = self.0[offset..offset + dout].to_vec();
            offset += dout;
            out.push(Layer {
                in_dim: din,
                out_dim: dout,
                weights,
                bias,
            });
        }
        Ok(out)
    }

    /// Inverse of [`ParamVector::layers`].
    pub fn from_layers(layers: &[Layer]) -> Self {
        let mut v = Vec::with_capacity(layers.iter().map(|l| l.weights.len() + l.bias.len()).sum());
        for l in layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        Self(v)
    }
}

/// One dense layer materialized from a genome.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `(out_dim, in_dim)`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// A network value. Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamVector,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::shape(format!(
                "genome has {} parameters, architecture {:?} needs {}",
                params.len(),
                spec.layer_sizes,
                spec.param_count()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Same architecture, different genome.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Network::new(self.spec.clone(), params)
    }

    /// Logits for every input row.
    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        forward_params(&self.spec, self.params.as_slice(), inputs)
    }

    /// Softmax of [`Network::forward`].
    pub fn predict_proba(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(softmax(&self.forward(inputs)?))
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`, rounded to `f32`), zero biases.
pub fn init_network(spec: &NetworkSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = rng_from(derive_seed(spec.seed, &[stream::INIT]));
    let mut values = Vec::with_capacity(spec.param_count());
    for (din, dout) in spec.layer_dims() {
        let normal = Normal::new(0.0f64, (2.0 / din as f64).sqrt()).expect("positive std");
        values.extend((0..din * dout).map(|_| f64::from(normal.sample(&mut rng) as f32)));
        values.extend(std::iter::repeat_n(0.0, dout));
    }
    Network::new(spec.clone(), ParamVector::from_raw(values))
}

pub(crate) fn check_input_dim(spec: &NetworkSpec, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != spec.input_dim() {
        return Err(Error::shape(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            spec.input_dim()
        )));
    }
    Ok(())
}

/// Forward pass over an `f64` genome. Shared by inference and gradient checks.
pub fn forward_params(spec: &NetworkSpec, params: &[f64], inputs: &Matrix) -> Result<Matrix> {
    check_input_dim(spec, inputs)?;
    if params.len() != spec.param_count() {
        return Err(Error::shape(format!(
            "genome has {} parameters, architecture needs {}",
            params.len(),
            spec.param_count()
        )));
    }
    let out_dim = spec.output_dim();
    let mut logits = Matrix::zeros(inputs.rows(), out_dim);
    let mut scratch = Scratch::new(spec);
    for r in 0..inputs.rows() {
        let out = scratch.run(spec, params, inputs.row(r));
        logits.row_mut(r).copy_from_slice(out);
    }
    Ok(logits)
}

/// Per-sample activation buffers, one per layer boundary.
pub(crate) struct Scratch {
    pub(crate) acts: Vec<Vec<f64>>,
}

impl Scratch {
    pub(crate) fn new(spec: &NetworkSpec) -> Self {
        Self {
            acts: spec.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Runs one sample, leaving every layer's output in `acts`. Returns the logits.
    pub(crate) fn run(&mut self, spec: &NetworkSpec, params: &[f64], x: &[f64]) -> &[f64] {
        self.acts[0].copy_from_slice(x);
        let n_layers = spec.layer_sizes.len() - 1;
        let mut offset = 0;
        for (l, (din, dout)) in spec.layer_dims().enumerate() {
            let w = &params[offset..offset + din * dout];
            let b = &params[offset + din * dout..offset + din * dout + dout];
            offset += din * dout + dout;
            let (prev, next) = self.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let output = &mut next[0];
            for j in 0..dout {
                let row = &w[j * din..(j + 1) * din];
                let z = b[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                output[j] = if l + 1 < n_layers {
                    spec.hidden_activation.apply(z)
                } else {
                    z
                };
            }
        }
        &self.acts[n_layers]
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean negative log likelihood of the labelled class, with probabilities
/// floored at [`PROB_EPS`].
pub fn nll_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::config("nll of an empty sample set"));
    }
    let mut total = 0.0;
    for (row, &y) in probs.iter_rows().zip(labels) {
        if y >= row.len() {
            return Err(Error::shape(format!(
                "label {y} out of range for {} classes",
                row.len()
            )));
        }
        total -= row[y].max(PROB_EPS).ln();
    }
    Ok(total / labels.len() as f64)
}
