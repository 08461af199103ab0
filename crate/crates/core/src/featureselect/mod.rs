//! Pixel selection as a fixed-weight QUBO.
//!
//! With binarised pixels `z_i` and labels `y`, the energy
//! `E(x) = -sum_i I(z_i; y) x_i + 1/(K-1) sum_{i<j} I(z_i; z_j) x_i x_j`
//! rewards informative pixels and penalises redundant pairs. Pairwise terms
//! below a threshold are dropped to keep the graph sparse.

mod idx;
mod logreg;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::ising::QuboInstance;
use crate::rng;

pub use idx::{load_idx, parse_images, parse_labels, write_images, write_labels, RawDataset};
pub use logreg::{evaluate_mask, LogReg, LogRegConfig};

pub const DEFAULT_BINARIZE_THRESHOLD: u8 = 127;
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-3;

/// Binary pixels with labels, plus per-pixel and per-class bitsets over
/// examples for counting.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    n_samples: usize,
    n_pixels: usize,
    n_classes: usize,
    /// Row-major `n_samples x n_pixels`, values 0 or 1.
    pixels: Vec<u8>,
    labels: Vec<u8>,
    columns: Vec<Vec<u64>>,
    classes: Vec<Vec<u64>>,
}

fn popcount_and(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| u64::from((x & y).count_ones())).sum()
}

fn popcount(a: &[u64]) -> u64 {
    a.iter().map(|x| u64::from(x.count_ones())).sum()
}

impl LabeledDataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, n_pixels: usize, n_classes: usize) -> Result<Self> {
        let n_samples = labels.len();
        if pixels.len() != n_samples * n_pixels {
            return invalid("pixel count does not match labels times pixels per example");
        }
        if pixels.iter().any(|&p| p > 1) {
            return invalid("pixels must be 0 or 1");
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return invalid(format!("label {bad} outside 0..{n_classes}"));
        }
        let words = n_samples.div_ceil(64);
        let mut columns = vec![vec![0u64; words]; n_pixels];
        let mut classes = vec![vec![0u64; words]; n_classes];
        for n in 0..n_samples {
            let bit = 1u64 << (n % 64);
            for (i, col) in columns.iter_mut().enumerate() {
                if pixels[n * n_pixels + i] == 1 {
                    col[n / 64] |= bit;
                }
            }
            classes[labels[n] as usize][n / 64] |= bit;
        }
        Ok(Self {
            n_samples,
            n_pixels,
            n_classes,
            pixels,
            labels,
            columns,
            classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    #[inline]
    pub fn pixel(&self, n: usize, i: usize) -> u8 {
        self.pixels[n * self.n_pixels + i]
    }

    #[inline]
    pub fn label(&self, n: usize) -> u8 {
        self.labels[n]
    }

    pub fn ones_count(&self, i: usize) -> u64 {
        popcount(&self.columns[i])
    }
}

/// `z = 1` iff the grey level exceeds `threshold`. Classes are `0..=max label`.
pub fn binarize(raw: &RawDataset, threshold: u8) -> LabeledDataset {
    let pixels = raw.pixels.iter().map(|&p| u8::from(p > threshold)).collect();
    let n_classes = raw.labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    LabeledDataset::new(pixels, raw.labels.clone(), raw.n_pixels(), n_classes)
        .expect("binarised pixels are 0/1 and labels are in range")
}

/// Plug-in mutual information (nats) from a joint count table; `0 log 0 = 0`.
fn mi_from_counts(joint: &[Vec<u64>], total: u64) -> f64 {
    let n = total as f64;
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..joint[0].len())
        .map(|c| joint.iter().map(|r| r[c]).sum::<u64>() as f64)
        .collect();
    let mut mi = 0.0;
    for (a, r) in joint.iter().enumerate() {
        for (b, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[a] * cols[b])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// `I(z_i; y)`.
pub fn mutual_info_feature_label(ds: &LabeledDataset, i: usize) -> f64 {
    let ones: Vec<u64> = ds.classes.iter().map(|c| popcount_and(&ds.columns[i], c)).collect();
    let zeros: Vec<u64> = ds
        .classes
        .iter()
        .zip(&ones)
        .map(|(c, &o)| popcount(c) - o)
        .collect();
    mi_from_counts(&[zeros, ones], ds.n_samples as u64)
}

/// `I(z_i; z_j)`.
pub fn mutual_info_pairwise(ds: &LabeledDataset, i: usize, j: usize) -> f64 {
    // fixed order keeps the result bit-identical under swapping
    let (i, j) = (i.min(j), i.max(j));
    let n = ds.n_samples as u64;
    let n1i = ds.ones_count(i);
    let n1j = ds.ones_count(j);
    let n11 = popcount_and(&ds.columns[i], &ds.columns[j]);
    let n10 = n1i - n11;
    let n01 = n1j - n11;
    let n00 = n - n11 - n10 - n01;
    mi_from_counts(&[vec![n00, n01], vec![n10, n11]], n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiTable {
    pub feature_label: Vec<f64>,
    /// `I(z_i; z_j)` for `i < j`.
    pub pairwise: BTreeMap<(usize, usize), f64>,
}

impl MiTable {
    pub fn compute(ds: &LabeledDataset) -> Self {
        let p = ds.n_pixels;
        let feature_label = (0..p).map(|i| mutual_info_feature_label(ds, i)).collect();
        let mut pairwise = BTreeMap::new();
        for i in 0..p {
            for j in i + 1..p {
                pairwise.insert((i, j), mutual_info_pairwise(ds, i, j));
            }
        }
        Self {
            feature_label,
            pairwise,
        }
    }

    pub fn pair(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.pairwise.get(&key).copied().unwrap_or(0.0)
    }

    /// Rows `i,j,value`; feature-label rows carry `label` in the `j` column.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "i,j,value")?;
        for (i, v) in self.feature_label.iter().enumerate() {
            writeln!(w, "{i},label,{v}")?;
        }
        for (&(i, j), v) in &self.pairwise {
            writeln!(w, "{i},{j},{v}")?;
        }
        Ok(())
    }
}

/// Linear terms `-I(z_i; y)`, couplings `I(z_i; z_j) / (K - 1)` where that
/// coefficient reaches `edge_threshold`, no constant.
pub fn build_feature_qubo(mi: &MiTable, k: usize, edge_threshold: f64) -> Result<QuboInstance> {
    if k < 2 {
        return invalid(format!("K = {k}: the redundancy normalisation needs K >= 2"));
    }
    let scale = 1.0 / (k - 1) as f64;
    let edges: Vec<_> = mi
        .pairwise
        .iter()
        .filter_map(|(&(i, j), &v)| {
            let w = v * scale;
            (w >= edge_threshold && w > 0.0).then_some((i, j, w))
        })
        .collect();
    let lin = mi.feature_label.iter().map(|v| -v).collect();
    QuboInstance::new(mi.feature_label.len(), edges, lin, 0.0)
}

/// Exactly `k` selected pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMask {
    selected: Vec<u8>,
}

impl FeatureMask {
    pub fn from_indices(n_pixels: usize, indices: &[usize]) -> Result<Self> {
        let mut selected = vec![0u8; n_pixels];
        for &i in indices {
            if i >= n_pixels {
                return invalid(format!("pixel {i} outside 0..{n_pixels}"));
            }
            if selected[i] == 1 {
                return invalid(format!("pixel {i} selected twice"));
            }
            selected[i] = 1;
        }
        Ok(Self { selected })
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return invalid("mask bits must be 0 or 1");
        }
        Ok(Self {
            selected: bits.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn k(&self) -> usize {
        self.selected.iter().filter(|&&b| b == 1).count()
    }

    pub fn bits(&self) -> &[u8] {
        &self.selected
    }

    /// Selected pixels in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.selected.len()).filter(|&i| self.selected[i] == 1).collect()
    }

    /// One selected index per line, sorted.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text: String = self.indices().iter().map(|i| format!("{i}\n")).collect();
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, n_pixels: usize) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut idx = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line.parse::<usize>() {
                Ok(i) => idx.push(i),
                Err(_) => return invalid(format!("bad mask line '{line}'")),
            }
        }
        Self::from_indices(n_pixels, &idx)
    }
}

/// Uniformly random `k`-pixel mask.
pub fn random_mask(n_pixels: usize, k: usize, seed: u64) -> Result<FeatureMask> {
    if k > n_pixels {
        return invalid(format!("K = {k} exceeds {n_pixels} pixels"));
    }
    let mut r = rng::stream(seed, 0);
    let idx = rand::seq::index::sample(&mut r, n_pixels, k).into_vec();
    FeatureMask::from_indices(n_pixels, &idx)
}

/// The `k` pixels with the largest `|lin|`, i.e. the largest `I(z_i; y)`;
/// ties go to the lower index.
pub fn linear_terms_mask(mi: &MiTable, k: usize) -> Result<FeatureMask> {
    let p = mi.feature_label.len();
    if k > p {
        return invalid(format!("K = {k} exceeds {p} pixels"));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| mi.feature_label[b].total_cmp(&mi.feature_label[a]).then(a.cmp(&b)));
    FeatureMask::from_indices(p, &order[..k])
}

/// Product-state angle whose expected Hamming weight is `target_weight`.
pub fn biased_angle_for_target_weight(block_size: usize, target_weight: f64) -> Result<f64> {
    if block_size == 0 || !(0.0..=block_size as f64).contains(&target_weight) {
        return invalid(format!(
            "target weight {target_weight} outside [0, {block_size}]"
        ));
    }
    Ok(2.0 * (target_weight / block_size as f64).sqrt().asin())
}

/// Synthetic labelled pixels in groups of three near-copies. Every group's
/// leading pixel depends on the class with its own strength; copies flip it
/// with probability 0.1, so picking several pixels of one group is redundant.
pub fn synthetic_dataset(n_samples: usize, n_pixels: usize, n_classes: usize, seed: u64) -> Result<LabeledDataset> {
    if !(2..=256).contains(&n_classes) {
        return invalid("need 2 to 256 classes");
    }
    let mut r = rng::stream(seed, 0);
    let groups = n_pixels.div_ceil(3);
    // P(base = 1 | class) per group
    let probs: Vec<Vec<f64>> = (0..groups)
        .map(|g| {
            let strength = 0.1 + 0.8 * (g as f64 + 0.5) / groups as f64;
            (0..n_classes)
                .map(|_| 0.5 + strength * (r.random::<f64>() - 0.5))
                .collect()
        })
        .collect();
    let mut pixels = Vec::with_capacity(n_samples * n_pixels);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let y = r.random_range(0..n_classes);
        labels.push(y as u8);
        let mut row = Vec::with_capacity(n_pixels);
        for g in 0..groups {
            let base = u8::from(r.random::<f64>() < probs[g][y]);
            for _ in 0..3 {
                if row.len() < n_pixels {
                    let flip = r.random::<f64>() < 0.1;
                    row.push(if flip { 1 - base } else { base });
                }
            }
        }
        pixels.extend(row);
    }
    LabeledDataset::new(pixels, labels, n_pixels, n_classes)
}

#[cfg(test)]
mod tests;
