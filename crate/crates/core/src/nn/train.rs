use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_input_dim, forward_params, Network, NetworkSpec, ParamVector, Scratch};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::argmax;
use crate::rng::{derive_seed, rng_from, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch cross-entropy seen during the epoch.
    pub loss: f64,
    /// Training-set accuracy after the epoch's last update.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Full-training-set cross-entropy before the first update.
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().map(|e| e.accuracy)
    }
}

/// Offsets of each layer's weights and biases inside the genome.
struct LayerOffsets {
    din: usize,
    dout: usize,
    w: usize,
    b: usize,
}

fn layer_offsets(spec: &NetworkSpec) -> Vec<LayerOffsets> {
    let mut offset = 0;
    spec.layer_dims()
        .map(|(din, dout)| {
            let l = LayerOffsets {
                din,
                dout,
                w: offset,
                b: offset + din * dout,
            };
            offset += din * dout + dout;
            l
        })
        .collect()
}

/// Mean softmax cross-entropy over `rows` and its gradient with respect to
/// every genome coordinate, accumulated into `grad` (which is zeroed first).
#[allow(clippy::too_many_arguments)]
fn batch_loss_and_grad(
    spec: &NetworkSpec,
    offsets: &[LayerOffsets],
    params: &[f64],
    inputs: &Matrix,
    labels: &[usize],
    rows: &[usize],
    scratch: &mut Scratch,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / rows.len() as f64;
    let n_layers = offsets.len();
    let max_width = spec.layer_sizes.iter().copied().max().unwrap_or(0);
    let mut delta = vec![0.0; max_width];
    let mut delta_prev = vec![0.0; max_width];
    let mut loss = 0.0;

    for &r in rows {
        let y = labels[r];
        let logits = scratch.run(spec, params, inputs.row(r));
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - logits[y];
        let out_dim = logits.len();
        for (o, d) in delta[..out_dim].iter_mut().enumerate() {
            let p = (logits[o] - log_z).exp();
            *d = (p - if o == y { 1.0 } else { 0.0 }) * scale;
        }

        for l in (0..n_layers).rev() {
            let LayerOffsets { din, dout, w, b } = offsets[l];
            let input = &scratch.acts[l];
            for j in 0..dout {
                let dj = delta[j];
                grad[b + j] += dj;
                if dj != 0.0 {
                    let g_row = &mut grad[w + j * din..w + (j + 1) * din];
                    for (g, &a) in g_row.iter_mut().zip(input) {
                        *g += dj * a;
                    }
                }
            }
            if l > 0 {
                let weights = &params[w..w + din * dout];
                delta_prev[..din].iter_mut().for_each(|d| *d = 0.0);
                for j in 0..dout {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    for (dp, &wji) in delta_prev[..din].iter_mut().zip(&weights[j * din..(j + 1) * din]) {
                        *dp += wji * dj;
                    }
                }
                for (i, dp) in delta_prev[..din].iter_mut().enumerate() {
                    *dp *= spec.hidden_activation.derivative_from_output(input[i]);
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }
    loss * scale
}

fn check_labels(spec: &NetworkSpec, labels: &[usize], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!("{rows} input rows but {} labels", labels.len())));
    }
    if let Some(i) = labels.iter().position(|&y| y >= spec.output_dim()) {
        return Err(Error::shape(format!(
            "label {} at row {i} exceeds the {} network outputs",
            labels[i],
            spec.output_dim()
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy of an `f64` genome over all rows, plus its
/// analytic gradient in canonical genome order.
pub fn loss_and_gradient(
    spec: &NetworkSpec,
    params: &[f64],
    inputs: &Matrix,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    check_input_dim(spec, inputs)?;
    check_labels(spec, labels, inputs.rows())?;
    if params.len() != spec.param_count() {
        return Err(Error::shape("genome length does not match architecture"));
    }
    if labels.is_empty() {
        return Err(Error::config("loss of an empty batch"));
    }
    let offsets = layer_offsets(spec);
    let rows: Vec<usize> = (0..inputs.rows()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut scratch = Scratch::new(spec);
    let loss = batch_loss_and_grad(spec, &offsets, params, inputs, labels, &rows, &mut scratch, &mut grad);
    Ok((loss, grad))
}

fn full_loss_and_accuracy(spec: &NetworkSpec, params: &[f64], data: &Dataset) -> Result<(f64, f64)> {
    let logits = forward_params(spec, params, data.inputs())?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (row, &y) in logits.iter_rows().zip(data.labels()) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += log_z - row[y];
        correct += usize::from(argmax(row) == y);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Minibatch training with softmax cross-entropy. Serial and bit-reproducible
/// for a fixed `(network, data, cfg)`. Optimizer state is `f64`; the returned
/// genome is rounded to `f32` values.
pub fn train_model(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = net.spec();
    check_input_dim(spec, data.inputs())?;
    check_labels(spec, data.labels(), data.len())?;

    let offsets = layer_offsets(spec);
    let mut params = net.params().as_slice().to_vec();
    let (initial_loss, _) = full_loss_and_accuracy(spec, &params, data)?;

    let w = params.len();
    let mut grad = vec![0.0; w];
    let mut m = vec![0.0; w];
    let mut v = vec![0.0; w];
    let mut step = 0i32;
    let mut scratch = Scratch::new(spec);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = rng_from(derive_seed(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let loss = batch_loss_and_grad(
                spec,
                &offsets,
                &params,
                data.inputs(),
                data.labels(),
                rows,
                &mut scratch,
                &mut grad,
            );
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDivergence {
                    epoch: epoch + 1,
                    batch: batch + 1,
                });
            }
            loss_sum += loss * rows.len() as f64;
            step += 1;
            match cfg.optimizer {
                OptimizerKind::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for i in 0..w {
                        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                    }
                }
            }
        }
        let stored: Vec<f64> = params.iter().map(|&p| f64::from(p as f32)).collect();
        let (_, accuracy) = full_loss_and_accuracy(spec, &stored, data)?;
        history.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            accuracy,
        });
    }

    let values: Vec<f64> = params.iter().map(|&p| f64::from(p as f32)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDivergence {
            epoch: cfg.epochs,
            batch: 0,
        });
    }
    Ok(TrainOutcome {
        network: net.with_params(ParamVector::from_raw(values))?,
        initial_loss,
        history,
    })
}
