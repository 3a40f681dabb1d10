//! Accuracy, negative log likelihood and expected calibration error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::nll_loss;

/// Default number of equal-width confidence bins for [`ece`].
pub const ECE_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.is_empty() || probs.rows() == 0 {
        return Err(Error::config("metrics need at least one sample"));
    }
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check(probs, labels)?;
    let correct = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Equal-width max-confidence binning; bin `b` covers `(b/bins, (b+1)/bins]`.
pub fn ece(probs: &Matrix, labels: &[usize], bins: usize) -> Result<f64> {
    check(probs, labels)?;
    if bins == 0 {
        return Err(Error::config("ece needs at least one bin"));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct = vec![0usize; bins];
    for (row, &y) in probs.iter_rows().zip(labels) {
        let pred = argmax(row);
        let conf = row[pred];
        let b = bin_index(conf, bins);
        count[b] += 1;
        conf_sum[b] += conf;
        correct[b] += usize::from(pred == y);
    }
    let n = labels.len() as f64;
    let total = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (correct[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum();
    Ok(total)
}

fn bin_index(conf: f64, bins: usize) -> usize {
    let scaled = conf * bins as f64;
    let mut b = (scaled.ceil() as usize).clamp(1, bins) - 1;
    // guard against rounding pushing a boundary value into the next bin
    if b > 0 && conf <= b as f64 / bins as f64 {
        b -= 1;
    }
    b
}

pub fn metric_triple(probs: &Matrix, labels: &[usize]) -> Result<MetricTriple> {
    Ok(MetricTriple {
        accuracy: accuracy(probs, labels)?,
        nll: nll_loss(probs, labels)?,
        ece: ece(probs, labels, ECE_BINS)?,
    })
}
