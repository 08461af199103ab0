//! Multinomial logistic regression on binary features.

use serde::{Deserialize, Serialize};

use super::{FeatureMask, LabeledDataset};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// Softmax regression weights: `weights[c * d + f]` and one bias per class.
#[derive(Clone, Debug, PartialEq)]
pub struct LogReg {
    pub n_classes: usize,
    pub features: Vec<usize>,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Positions (within `features`) of the active features of each example.
fn active_sets(ds: &LabeledDataset, features: &[usize]) -> Vec<Vec<u32>> {
    (0..ds.n_samples())
        .map(|n| {
            features
                .iter()
                .enumerate()
                .filter(|&(_, &i)| ds.pixel(n, i) == 1)
                .map(|(f, _)| f as u32)
                .collect()
        })
        .collect()
}

impl LogReg {
    fn scores(&self, active: &[u32], out: &mut [f64]) {
        let d = self.features.len();
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.biases[c] + active.iter().map(|&f| self.weights[c * d + f as usize]).sum::<f64>();
        }
    }

    /// Full-batch gradient descent on mean cross-entropy plus
    /// `l2 / 2 * ||W||^2`, from all-zero parameters.
    pub fn fit(ds: &LabeledDataset, features: &[usize], cfg: &LogRegConfig) -> Result<Self> {
        if features.is_empty() {
            return invalid("classifier needs at least one feature");
        }
        if ds.n_samples() == 0 {
            return invalid("empty training set");
        }
        let c = ds.n_classes();
        let d = features.len();
        let mut model = LogReg {
            n_classes: c,
            features: features.to_vec(),
            weights: vec![0.0; c * d],
            biases: vec![0.0; c],
        };
        let active = active_sets(ds, features);
        let inv_n = 1.0 / ds.n_samples() as f64;
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        let mut p = vec![0.0; c];
        for _ in 0..cfg.iterations {
            gw.fill(0.0);
            gb.fill(0.0);
            for (n, act) in active.iter().enumerate() {
                model.scores(act, &mut p);
                let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in &mut p {
                    *v = (*v - m).exp();
                    z += *v;
                }
                let y = ds.label(n) as usize;
                for (k, v) in p.iter_mut().enumerate() {
                    *v /= z;
                    let g = *v - if k == y { 1.0 } else { 0.0 };
                    gb[k] += g;
                    for &f in act {
                        gw[k * d + f as usize] += g;
                    }
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * (g * inv_n + cfg.l2 * *w);
            }
            for (b, g) in model.biases.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g * inv_n;
            }
        }
        Ok(model)
    }

    /// Most probable class; ties go to the lower class id.
    pub fn predict(&self, ds: &LabeledDataset, n: usize) -> usize {
        let act: Vec<u32> = self
            .features
            .iter()
            .enumerate()
            .filter(|&(_, &i)| ds.pixel(n, i) == 1)
            .map(|(f, _)| f as u32)
            .collect();
        let mut s = vec![0.0; self.n_classes];
        self.scores(&act, &mut s);
        let mut best = 0;
        for k in 1..s.len() {
            if s[k] > s[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> f64 {
        let correct = (0..ds.n_samples())
            .filter(|&n| self.predict(ds, n) == ds.label(n) as usize)
            .count();
        correct as f64 / ds.n_samples() as f64
    }
}

/// Train on the masked training pixels and return test accuracy.
pub fn evaluate_mask(
    train: &LabeledDataset,
    test: &LabeledDataset,
    mask: &FeatureMask,
    cfg: &LogRegConfig,
) -> Result<f64> {
    if mask.k() == 0 {
        return invalid("empty feature mask");
    }
    if train.n_pixels() != test.n_pixels() || mask.len() != train.n_pixels() {
        return invalid("mask, training and test data disagree on the pixel count");
    }
    let model = LogReg::fit(train, &mask.indices(), cfg)?;
    Ok(model.accuracy(test))
}
