//! Conditional masked autoregressive density estimator over a block's bits.
//!
//! `q(x | k) = prod_t q(x_{o_t} | x_{o_<t}, k)`, each factor a Bernoulli with
//! logistic parameter. The context `k` (the block's Hamming weight) enters
//! every hidden layer as a one-hot vector through an unmasked weight matrix.
//!
//! Degrees: the input at ordering position `t` has degree `t + 1`; hidden
//! units take degrees in `0..|B|`, and a degree-0 unit sees only the context.
//! A hidden unit connects to lower-layer units of degree at most its own; an
//! output connects to last-layer units of strictly smaller degree.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::partition::BlockId;
use crate::qaoa::BlockSampleSet;
use crate::rng;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest block for which [`ConditionalMadeModel::distribution`] enumerates states.
pub const MAX_EXACT_BITS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hidden layer widths; empty means two layers of `4 |B|`.
    pub hidden_widths: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_widths: Vec::new(),
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 60,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn widths_for(&self, block_size: usize) -> Vec<usize> {
        if self.hidden_widths.is_empty() {
            vec![4 * block_size; 2]
        } else {
            self.hidden_widths.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.contains(&0) {
            return invalid("hidden widths must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return invalid("learning rate must be positive and momentum in [0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return invalid("batch size and epochs must be positive");
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return invalid("validation fraction must lie in [0, 0.5]");
        }
        Ok(())
    }
}

/// One weighted layer. Weights are row-major `rows x cols`; masked entries
/// are kept at exactly zero.
#[derive(Clone, Debug, PartialEq)]
struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    mask: Vec<bool>,
    biases: Vec<f64>,
    /// `rows x context_dim`; absent on the output layer.
    context: Option<Vec<f64>>,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len() + self.context.as_ref().map_or(0, Vec::len)
    }

    /// `out = W in + b (+ C[:, k])`.
    fn forward(&self, input: &[f64], k: usize, context_dim: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.biases[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            if let Some(c) = &self.context {
                acc += c[r * context_dim + k];
            }
            out[r] = acc;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMadeModel {
    pub block_id: BlockId,
    block_size: usize,
    /// `ordering[t]` is the local bit generated at step `t`.
    ordering: Vec<usize>,
    layers: Vec<Layer>,
    context_dim: usize,
}

/// Per-epoch mean log-likelihoods.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    pub train_ll: Vec<f64>,
    /// Empty when no validation split was held out.
    pub val_ll: Vec<f64>,
}

impl TrainingReport {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "epoch,train_ll,val_ll")?;
        for (e, t) in self.train_ll.iter().enumerate() {
            match self.val_ll.get(e) {
                Some(v) => writeln!(w, "{},{t},{v}", e + 1)?,
                None => writeln!(w, "{},{t},", e + 1)?,
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        self.write_csv(&mut out)?;
        fs::write(path, out)?;
        Ok(())
    }
}

/// Hidden activations kept for backpropagation.
struct Trace {
    /// `acts[0]` is the input; `acts[l + 1]` is hidden layer `l` after ReLU.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Clamped probability of `bit` under logit `z`, and d(log q)/dz.
fn bernoulli(z: f64, bit: u8) -> (f64, f64) {
    let p = sigmoid(z);
    let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let clamped = pc != p;
    if bit == 1 {
        (pc.ln(), if clamped { 0.0 } else { 1.0 - p })
    } else {
        ((1.0 - pc).ln(), if clamped { 0.0 } else { -p })
    }
}

impl ConditionalMadeModel {
    /// Random masked network for a block with the identity variable order.
    pub fn new(block_id: BlockId, block_size: usize, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        Self::with_ordering(block_id, (0..block_size).collect(), cfg, seed)
    }

    pub fn with_ordering(block_id: BlockId, ordering: Vec<usize>, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let d = ordering.len();
        if d == 0 {
            return invalid("block size must be at least 1");
        }
        if d > 32 {
            return Err(Error::ResourceLimit(format!("block of {d} bits exceeds the 32-bit limit")));
        }
        let mut seen = vec![false; d];
        for &i in &ordering {
            if i >= d || std::mem::replace(&mut seen[i], true) {
                return invalid("ordering is not a permutation");
            }
        }
        let widths = cfg.widths_for(d);
        if widths.contains(&0) {
            return invalid("hidden widths must be positive");
        }
        let context_dim = d + 1;
        let mut rng = rng::stream(seed, 0);

        // input degree of local bit i is its ordering position + 1
        let mut in_deg = vec![0usize; d];
        for (t, &i) in ordering.iter().enumerate() {
            in_deg[i] = t + 1;
        }
        let mut layers = Vec::with_capacity(widths.len() + 1);
        let mut prev_deg = in_deg.clone();
        for &w in &widths {
            // every degree in 0..d is present, then order is randomized
            let mut deg: Vec<usize> = (0..w).map(|h| h % d).collect();
            deg.shuffle(&mut rng);
            let cols = prev_deg.len();
            let mask: Vec<bool> = (0..w * cols).map(|e| deg[e / cols] >= prev_deg[e % cols]).collect();
            let bound = (6.0 / (cols + w) as f64).sqrt();
            let weights = mask
                .iter()
                .map(|&m| {
                    let v = rng.random_range(-bound..bound);
                    if m { v } else { 0.0 }
                })
                .collect();
            let cbound = (6.0 / (context_dim + w) as f64).sqrt();
            let context = (0..w * context_dim).map(|_| rng.random_range(-cbound..cbound)).collect();
            layers.push(Layer {
                rows: w,
                cols,
                weights,
                mask,
                biases: vec![0.0; w],
                context: Some(context),
            });
            prev_deg = deg;
        }
        let cols = prev_deg.len();
        let mask: Vec<bool> = (0..d * cols).map(|e| in_deg[e / cols] > prev_deg[e % cols]).collect();
        let bound = (6.0 / (cols + d) as f64).sqrt();
        let weights = mask
            .iter()
            .map(|&m| {
                let v = rng.random_range(-bound..bound);
                if m { v } else { 0.0 }
            })
            .collect();
        layers.push(Layer {
            rows: d,
            cols,
            weights,
            mask,
            biases: vec![0.0; d],
            context: None,
        });
        Ok(Self {
            block_id,
            block_size: d,
            ordering,
            layers,
            context_dim,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.rows).collect()
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.block_size {
            return invalid(format!("context {k} outside 0..={}", self.block_size));
        }
        Ok(())
    }

    fn check_bits(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.block_size {
            return invalid(format!("expected {} bits, got {}", self.block_size, x.len()));
        }
        Ok(())
    }

    fn trace(&self, x: &[u8], k: usize) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(x.iter().map(|&b| f64::from(b)).collect::<Vec<f64>>());
        let (out_layer, hidden) = self.layers.split_last().expect("output layer");
        for layer in hidden {
            let mut a = vec![0.0; layer.rows];
            layer.forward(acts.last().unwrap(), k, self.context_dim, &mut a);
            for v in &mut a {
                *v = v.max(0.0);
            }
            acts.push(a);
        }
        let mut logits = vec![0.0; self.block_size];
        out_layer.forward(acts.last().unwrap(), k, self.context_dim, &mut logits);
        Trace { acts, logits }
    }

    /// Output logits indexed by local bit. Logit `i` depends only on the
    /// bits that precede `i` in the ordering, and on `k`.
    pub fn logits(&self, x: &[u8], k: usize) -> Result<Vec<f64>> {
        self.check_bits(x)?;
        self.check_k(k)?;
        Ok(self.trace(x, k).logits)
    }

    /// `log q(x | k)`.
    pub fn log_prob(&self, x: &[u8], k: usize) -> Result<f64> {
        self.check_bits(x)?;
        self.check_k(k)?;
        let logits = self.trace(x, k).logits;
        Ok(self
            .ordering
            .iter()
            .map(|&i| bernoulli(logits[i], x[i]).0)
            .sum())
    }

    /// Ancestral sample and its log-probability. Each step reruns the network
    /// on the partial sample; since later bits are masked out, every
    /// conditional is bit-identical to the one [`log_prob`](Self::log_prob) sees.
    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<(Vec<u8>, f64)> {
        self.check_k(k)?;
        let mut x = vec![0u8; self.block_size];
        let mut lp = 0.0;
        for &i in &self.ordering {
            let z = self.trace(&x, k).logits[i];
            let p = sigmoid(z).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            x[i] = u8::from(rng.random::<f64>() < p);
            lp += bernoulli(z, x[i]).0;
        }
        Ok((x, lp))
    }

    /// Exact `q(. | k)` over all basis indices (bit `t` = local bit `t`).
    pub fn distribution(&self, k: usize) -> Result<Vec<f64>> {
        self.check_k(k)?;
        if self.block_size > MAX_EXACT_BITS {
            return Err(Error::ResourceLimit(format!(
                "exhaustive distribution over {} bits",
                self.block_size
            )));
        }
        Ok((0..1u32 << self.block_size)
            .map(|z| {
                let x = crate::qaoa::index_to_bits(z, self.block_size);
                let logits = self.trace(&x, k).logits;
                self.ordering
                    .iter()
                    .map(|&i| bernoulli(logits[i], x[i]).0)
                    .sum::<f64>()
                    .exp()
            })
            .collect())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters: per layer weights, biases, then context weights.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(&l.weights);
            out.extend(&l.biases);
            if let Some(c) = &l.context {
                out.extend(c);
            }
        }
        out
    }

    /// Inverse of [`params`](Self::params); masked weights are forced to zero.
    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return invalid("parameter vector has the wrong length");
        }
        let mut off = 0;
        for l in &mut self.layers {
            for (e, w) in l.weights.iter_mut().enumerate() {
                *w = if l.mask[e] { theta[off + e] } else { 0.0 };
            }
            off += l.weights.len();
            l.biases.copy_from_slice(&theta[off..off + l.rows]);
            off += l.rows;
            if let Some(c) = &mut l.context {
                let n = c.len();
                c.copy_from_slice(&theta[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Add `d log q(x | k) / d theta` into `grad` (layout of [`params`](Self::params)); returns `log q`.
    fn accumulate_grad(&self, x: &[u8], k: usize, grad: &mut [f64]) -> f64 {
        let tr = self.trace(x, k);
        let mut lp = 0.0;
        let mut delta: Vec<f64> = vec![0.0; self.block_size];
        for &i in &self.ordering {
            let (l, d) = bernoulli(tr.logits[i], x[i]);
            lp += l;
            delta[i] = d;
        }
        // parameter offsets per layer
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &tr.acts[li];
            let base = offsets[li];
            for r in 0..layer.rows {
                let dr = delta[r];
                if dr == 0.0 {
                    continue;
                }
                let row = base + r * layer.cols;
                for c in 0..layer.cols {
                    if layer.mask[r * layer.cols + c] {
                        grad[row + c] += dr * input[c];
                    }
                }
                grad[base + layer.weights.len() + r] += dr;
                if layer.context.is_some() {
                    grad[base + layer.weights.len() + layer.rows + r * self.context_dim + k] += dr;
                }
            }
            if li == 0 {
                break;
            }
            // back through the weights and the ReLU of the layer below
            let mut below = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let dr = delta[r];
                if dr == 0.0 {
                    continue;
                }
                for (c, b) in below.iter_mut().enumerate() {
                    *b += layer.weights[r * layer.cols + c] * dr;
                }
            }
            for (b, &a) in below.iter_mut().zip(&tr.acts[li]) {
                if a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = below;
        }
        lp
    }

    /// Gradient of `log q(x | k)` with respect to [`params`](Self::params).
    pub fn grad_log_prob(&self, x: &[u8], k: usize) -> Result<Vec<f64>> {
        self.check_bits(x)?;
        self.check_k(k)?;
        let mut g = vec![0.0; self.param_count()];
        self.accumulate_grad(x, k, &mut g);
        Ok(g)
    }

    fn mean_log_prob(&self, data: &BlockSampleSet, idx: &[usize]) -> f64 {
        let total: f64 = idx
            .iter()
            .map(|&n| {
                let x = data.bits(n);
                let logits = self.trace(&x, data.weights[n] as usize).logits;
                self.ordering
                    .iter()
                    .map(|&i| bernoulli(logits[i], x[i]).0)
                    .sum::<f64>()
            })
            .sum();
        total / idx.len() as f64
    }

    /// Maximum-likelihood fit by mini-batch gradient ascent with momentum.
    /// Each sample's own Hamming weight is its context.
    pub fn train(&mut self, data: &BlockSampleSet, cfg: &TrainConfig) -> Result<TrainingReport> {
        cfg.validate()?;
        if data.is_empty() {
            return invalid("empty training set");
        }
        if data.block_size != self.block_size {
            return invalid(format!(
                "samples have {} bits, model expects {}",
                data.block_size, self.block_size
            ));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = rng::stream(cfg.seed, 1);
        order.shuffle(&mut rng);
        let n_val = ((data.len() as f64) * cfg.validation_fraction).floor() as usize;
        let n_val = n_val.min(data.len() - 1);
        let (val, train) = order.split_at(n_val);
        let val = val.to_vec();
        let mut train = train.to_vec();

        let mut theta = self.params();
        let mut velocity = vec![0.0; theta.len()];
        let mut grad = vec![0.0; theta.len()];
        let mut report = TrainingReport::default();
        for _ in 0..cfg.epochs {
            train.shuffle(&mut rng);
            for batch in train.chunks(cfg.batch_size) {
                grad.fill(0.0);
                for &n in batch {
                    let x = data.bits(n);
                    self.accumulate_grad(&x, data.weights[n] as usize, &mut grad);
                }
                let scale = cfg.learning_rate / batch.len() as f64;
                for ((t, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = cfg.momentum * *v + scale * g;
                    *t += *v;
                }
                self.set_params(&theta)?;
            }
            report.train_ll.push(self.mean_log_prob(data, &train));
            if !val.is_empty() {
                report.val_ll.push(self.mean_log_prob(data, &val));
            }
        }
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    const MAGIC: &'static [u8; 4] = b"CMAD";
    const VERSION: u16 = 1;

    /// Header `{magic, version, partition, block index, |B|, context_dim,
    /// ordering, layer count, widths}`, then per layer the mask bytes,
    /// weights, biases and (hidden layers) context weights as f64.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u16::<LittleEndian>(Self::VERSION)?;
        w.write_u8(self.block_id.partition)?;
        w.write_u32::<LittleEndian>(self.block_id.index as u32)?;
        w.write_u16::<LittleEndian>(self.block_size as u16)?;
        w.write_u16::<LittleEndian>(self.context_dim as u16)?;
        for &i in &self.ordering {
            w.write_u16::<LittleEndian>(i as u16)?;
        }
        w.write_u16::<LittleEndian>(self.layers.len() as u16)?;
        for l in &self.layers {
            w.write_u32::<LittleEndian>(l.rows as u32)?;
        }
        for l in &self.layers {
            for &m in &l.mask {
                w.write_u8(u8::from(m))?;
            }
            for v in l.weights.iter().chain(&l.biases).chain(l.context.iter().flatten()) {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut &[u8]) -> Result<Self> {
        let total = r.len() as u64;
        let at = |r: &&[u8]| total - r.len() as u64;
        let mut magic = [0u8; 4];
        if r.read_exact(&mut magic).is_err() || &magic != Self::MAGIC {
            return format_err(0, "not a surrogate model file");
        }
        macro_rules! read {
            ($e:expr, $what:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(_) => return format_err(at(r), concat!("truncated ", $what)),
                }
            };
        }
        let version = read!(r.read_u16::<LittleEndian>(), "header");
        if version != Self::VERSION {
            return format_err(4, format!("unsupported version {version}"));
        }
        let partition = read!(r.read_u8(), "header");
        let index = read!(r.read_u32::<LittleEndian>(), "header") as usize;
        let block_size = read!(r.read_u16::<LittleEndian>(), "header") as usize;
        let context_dim = read!(r.read_u16::<LittleEndian>(), "header") as usize;
        if block_size == 0 || context_dim != block_size + 1 {
            return format_err(at(r), "inconsistent block size and context dimension");
        }
        let mut ordering = Vec::with_capacity(block_size);
        for _ in 0..block_size {
            ordering.push(read!(r.read_u16::<LittleEndian>(), "ordering") as usize);
        }
        let n_layers = read!(r.read_u16::<LittleEndian>(), "header") as usize;
        if n_layers == 0 {
            return format_err(at(r), "model has no layers");
        }
        let mut rows = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            rows.push(read!(r.read_u32::<LittleEndian>(), "widths") as usize);
        }
        if rows[n_layers - 1] != block_size {
            return format_err(at(r), "output width differs from block size");
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut cols = block_size;
        for (li, &nr) in rows.iter().enumerate() {
            let hidden = li + 1 < n_layers;
            let n_w = nr * cols;
            let need = n_w + 8 * (n_w + nr + if hidden { nr * context_dim } else { 0 });
            if r.len() < need {
                return format_err(at(r), format!("truncated layer {li}"));
            }
            let mut mask = Vec::with_capacity(n_w);
            for _ in 0..n_w {
                mask.push(r.read_u8()? != 0);
            }
            let mut vals = |n: usize| -> Result<Vec<f64>> {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(r.read_f64::<LittleEndian>()?);
                }
                Ok(v)
            };
            let weights = vals(n_w)?;
            let biases = vals(nr)?;
            let context = if hidden { Some(vals(nr * context_dim)?) } else { None };
            layers.push(Layer {
                rows: nr,
                cols,
                weights,
                mask,
                biases,
                context,
            });
            cols = nr;
        }
        let model = Self {
            block_id: BlockId::new(partition, index),
            block_size,
            ordering,
            layers,
            context_dim,
        };
        let mut sorted = model.ordering.clone();
        sorted.sort_unstable();
        if sorted != (0..block_size).collect::<Vec<_>>() {
            return format_err(0, "ordering is not a permutation");
        }
        Ok(model)
    }
}

/// Build a model and fit it to a block's samples.
pub fn train_block_model(
    data: &BlockSampleSet,
    cfg: &TrainConfig,
) -> Result<(ConditionalMadeModel, TrainingReport)> {
    let mut model = ConditionalMadeModel::new(data.block_id, data.block_size, cfg, cfg.seed)?;
    let report = model.train(data, cfg)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qaoa::{bits_to_index, index_to_bits};

    fn id() -> BlockId {
        BlockId::new(1, 0)
    }

    fn model(d: usize, seed: u64) -> ConditionalMadeModel {
        ConditionalMadeModel::new(id(), d, &TrainConfig::default(), seed).unwrap()
    }

    /// Random nonzero biases too, so the tests exercise every parameter.
    fn perturbed(d: usize, seed: u64) -> ConditionalMadeModel {
        let mut m = model(d, seed);
        let mut rng = rng::stream(seed, 9);
        let theta: Vec<f64> = m.params().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        m.set_params(&theta).unwrap();
        m
    }

    fn data(d: usize, samples: Vec<u32>) -> BlockSampleSet {
        let n = samples.len();
        BlockSampleSet::new(id(), d, samples, vec![0; n]).unwrap()
    }

    fn logsumexp(v: &[f64]) -> f64 {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn single_bit_depends_on_context_only() {
        let m = perturbed(1, 1);
        let l0 = m.logits(&[0], 0).unwrap();
        assert_eq!(l0, m.logits(&[1], 0).unwrap());
        // the context does reach the lone output
        let mut any = false;
        for k in 0..=1 {
            any |= m.logits(&[0], k).unwrap() != l0;
        }
        assert!(any);
        let s: f64 = m.distribution(1).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn autoregressive_sparsity() {
        for d in [3, 6] {
            let m = perturbed(d, 2);
            let mut rng = rng::stream(2, 3);
            for _ in 0..50 {
                let x: Vec<u8> = (0..d).map(|_| rng.random_range(0..2)).collect();
                let k = rng.random_range(0..=d);
                let base = m.logits(&x, k).unwrap();
                for t in 0..d {
                    let mut y = x.clone();
                    y[m.ordering()[t]] ^= 1;
                    let l = m.logits(&y, k).unwrap();
                    for s in 0..=t {
                        assert_eq!(l[m.ordering()[s]], base[m.ordering()[s]]);
                    }
                }
            }
        }
    }

    #[test]
    fn custom_ordering_is_respected() {
        let m = ConditionalMadeModel::with_ordering(id(), vec![2, 0, 1], &TrainConfig::default(), 4).unwrap();
        let base = m.logits(&[0, 0, 0], 1).unwrap();
        // bit 1 is last, so flipping it changes no logit
        assert_eq!(m.logits(&[0, 1, 0], 1).unwrap(), base);
        assert!(ConditionalMadeModel::with_ordering(id(), vec![0, 0], &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn normalization_for_every_context() {
        for d in [1, 2, 5, 8, 10] {
            let m = perturbed(d, d as u64);
            for k in 0..=d {
                let s: f64 = m.distribution(k).unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "d={d} k={k} sum={s}");
            }
        }
        let m = perturbed(6, 5);
        let lps: Vec<f64> = (0..64u32).map(|z| m.log_prob(&index_to_bits(z, 6), 3).unwrap()).collect();
        assert!(logsumexp(&lps).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_give_fair_coins() {
        let mut m = model(5, 0);
        let zeros = vec![0.0; m.param_count()];
        m.set_params(&zeros).unwrap();
        let lp = m.log_prob(&[1, 0, 1, 1, 0], 2).unwrap();
        assert!((lp - 5.0 * 0.5f64.ln()).abs() < 1e-12);
        let mut rng = rng::stream(1, 0);
        let mut ones = [0usize; 5];
        for _ in 0..10_000 {
            let (x, _) = m.sample(2, &mut rng).unwrap();
            for (o, b) in ones.iter_mut().zip(&x) {
                *o += *b as usize;
            }
        }
        for o in ones {
            assert!((o as f64 / 1e4 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn sample_log_prob_is_self_consistent() {
        let m = perturbed(7, 3);
        let mut rng = rng::stream(3, 0);
        for _ in 0..200 {
            let k = rng.random_range(0..=7);
            let (x, lp) = m.sample(k, &mut rng).unwrap();
            assert_eq!(m.log_prob(&x, k).unwrap(), lp);
        }
    }

    fn sample_counts(m: &ConditionalMadeModel, k: usize, draws: usize, seed: u64) -> Vec<usize> {
        let mut rng = rng::stream(seed, 0);
        let mut counts = vec![0usize; 1 << m.block_size()];
        for _ in 0..draws {
            counts[bits_to_index(&m.sample(k, &mut rng).unwrap().0) as usize] += 1;
        }
        counts
    }

    #[test]
    fn sampling_matches_exact_distribution_chi_square() {
        let m = perturbed(6, 8);
        let exact = m.distribution(3).unwrap();
        let draws = 100_000;
        let counts = sample_counts(&m, 3, draws, 8);
        let chi2: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, &p)| (c as f64 - p * draws as f64).powi(2) / (p * draws as f64))
            .sum();
        // 63 degrees of freedom; 6 standard deviations above the mean
        assert!(chi2 < 63.0 + 6.0 * (126f64).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn trained_sampling_total_variation() {
        // weight-3 patterns with a skewed frequency profile
        let mut rng = rng::stream(9, 0);
        let patterns: Vec<u32> = (0..64u32).filter(|z| z.count_ones() == 3).collect();
        let samples: Vec<u32> = (0..4000)
            .map(|_| {
                let u: f64 = rng.random();
                patterns[((u * u) * patterns.len() as f64) as usize]
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        let (m, _) = train_block_model(&data(6, samples), &cfg).unwrap();
        let exact = m.distribution(3).unwrap();
        let draws = 100_000;
        let counts = sample_counts(&m, 3, draws, 10);
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, &p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = perturbed(4, 6);
        let theta = m.params();
        let mut probe = m.clone();
        let h = 1e-5;
        for (x, k) in [(vec![1, 0, 1, 1], 3), (vec![0, 0, 1, 0], 1), (vec![1, 1, 1, 1], 0)] {
            let g = m.grad_log_prob(&x, k).unwrap();
            let mut worst: f64 = 0.0;
            for p in 0..theta.len() {
                let mut t = theta.clone();
                t[p] += h;
                probe.set_params(&t).unwrap();
                let up = probe.log_prob(&x, k).unwrap();
                t[p] -= 2.0 * h;
                probe.set_params(&t).unwrap();
                let down = probe.log_prob(&x, k).unwrap();
                let fd = (up - down) / (2.0 * h);
                // masked weights have zero gradient on both sides
                let err = (g[p] - fd).abs() / g[p].abs().max(fd.abs()).max(1e-3);
                worst = worst.max(err);
            }
            assert!(worst < 1e-4, "relative gradient error {worst}");
        }
    }

    #[test]
    fn degenerate_data_is_learned() {
        let target = 0b0110u32;
        let set = data(4, vec![target; 256]);
        let cfg = TrainConfig {
            epochs: 200,
            validation_fraction: 0.0,
            ..Default::default()
        };
        let (m, report) = train_block_model(&set, &cfg).unwrap();
        let q = m.log_prob(&index_to_bits(target, 4), 2).unwrap().exp();
        assert!(q >= 0.9, "q = {q}");
        assert_eq!(report.train_ll.len(), 200);
        assert!(report.val_ll.is_empty());
    }

    #[test]
    fn uniform_data_approaches_entropy() {
        let mut rng = rng::stream(4, 0);
        let d = 4;
        let set = data(d, (0..4000).map(|_| rng.random_range(0..16u32)).collect());
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 0.01,
            validation_fraction: 0.2,
            ..Default::default()
        };
        let (_, report) = train_block_model(&set, &cfg).unwrap();
        // the context is the sample's own weight, which carries information;
        // the bound is the entropy of the uniform source
        let last = *report.val_ll.last().unwrap();
        let uniform = -(d as f64) * 2f64.ln();
        assert!(last > uniform - 0.05, "val ll {last} vs {uniform}");
    }

    #[test]
    fn training_beats_untrained_on_held_out_data() {
        // weight-2 strings concentrated on two patterns
        let mut rng = rng::stream(5, 0);
        let pick = |r: &mut rng::Rng| if r.random::<f64>() < 0.8 { 0b0011 } else { 0b1100 };
        let train = data(4, (0..2000).map(|_| pick(&mut rng)).collect());
        let held: Vec<u32> = (0..500).map(|_| pick(&mut rng)).collect();
        let cfg = TrainConfig {
            epochs: 30,
            ..Default::default()
        };
        let untrained = ConditionalMadeModel::new(id(), 4, &cfg, cfg.seed).unwrap();
        let (trained, _) = train_block_model(&train, &cfg).unwrap();
        let mean = |m: &ConditionalMadeModel| {
            held.iter().map(|&z| m.log_prob(&index_to_bits(z, 4), 2).unwrap()).sum::<f64>() / 500.0
        };
        assert!(mean(&trained) > mean(&untrained));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = rng::stream(6, 0);
        let set = data(5, (0..300).map(|_| rng.random_range(0..32u32)).collect());
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let (a, ra) = train_block_model(&set, &cfg).unwrap();
        let (b, rb) = train_block_model(&set, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn argument_errors() {
        let mut m = model(3, 0);
        assert!(matches!(m.log_prob(&[0, 1, 0], 4), Err(Error::InvalidArgument(_))));
        assert!(m.log_prob(&[0, 1], 1).is_err());
        assert!(m.sample(9, &mut rng::stream(0, 0)).is_err());
        let empty = data(3, vec![]);
        assert!(matches!(m.train(&empty, &TrainConfig::default()), Err(Error::InvalidArgument(_))));
        let wrong = data(4, vec![1, 2]);
        assert!(m.train(&wrong, &TrainConfig::default()).is_err());
        assert!(ConditionalMadeModel::new(id(), 0, &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = perturbed(5, 7);
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        let back = ConditionalMadeModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            ConditionalMadeModel::read_from(&mut &cut[..]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            ConditionalMadeModel::read_from(&mut bad.as_slice()),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn report_csv() {
        let r = TrainingReport {
            train_ll: vec![-1.5, -1.25],
            val_ll: vec![-1.75, -1.5],
        };
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_ll,val_ll\n1,-1.5,-1.75\n2,-1.25,-1.5\n");
    }
}
