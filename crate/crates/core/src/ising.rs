//! QUBO / Ising problem representation.
//!
//! A [`QuboInstance`] stores `E(x) = sum_{i<j} Q_ij x_i x_j + sum_i q_i x_i + c`
//! over bits `x_i in {0,1}`. The sparse couplings are kept twice: once as an
//! ordered map keyed by `(i, j)` with `i < j`, and once as a per-vertex
//! adjacency list used by the O(degree) update formulas.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Default cap on `C(n, K)` for exact enumeration.
pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

/// A configuration of binary variables, one byte (0 or 1) per site.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinConfig(Vec<u8>);

impl SpinConfig {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return invalid(format!("bit {pos} has value {} (expected 0 or 1)", bits[pos]));
        }
        Ok(Self(bits))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// Configuration with ones exactly at `ones`.
    pub fn from_ones(n: usize, ones: &[usize]) -> Result<Self> {
        let mut bits = vec![0u8; n];
        for &i in ones {
            if i >= n {
                return invalid(format!("index {i} out of range for n = {n}"));
            }
            bits[i] = 1;
        }
        Ok(Self(bits))
    }

    /// Bit `t` of `index` becomes variable `t`.
    pub fn from_index(n: usize, index: u64) -> Self {
        Self((0..n).map(|t| ((index >> t) & 1) as u8).collect())
    }

    pub fn to_index(&self) -> u64 {
        debug_assert!(self.0.len() <= 64);
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (t, &b)| acc | (u64::from(b) << t))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: u8) {
        debug_assert!(v <= 1);
        self.0[i] = v;
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Hamming weight.
    pub fn weight(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn swap(&mut self, i: usize, j: usize) {
        self.0.swap(i, j);
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
    }

    /// Pack LSB-first into `ceil(n / 8)` bytes.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.0.len().div_ceil(8)];
        for (i, &b) in self.0.iter().enumerate() {
            out[i / 8] |= b << (i % 8);
        }
        out
    }

    pub fn unpack(n: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != n.div_ceil(8) {
            return invalid(format!(
                "packed length {} does not match n = {n}",
                bytes.len()
            ));
        }
        Ok(Self((0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()))
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfig({self})")
    }
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// On-disk layout of an instance: `{n, edges: [[i, j, Q_ij]..], linear, constant}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub linear: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

/// Sparse quadratic binary objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct QuboInstance {
    n: usize,
    quad: BTreeMap<(usize, usize), f64>,
    lin: Vec<f64>,
    konst: f64,
    adj: Vec<Vec<(usize, f64)>>,
}

impl QuboInstance {
    /// Build an instance. Pairs may be given in either order; duplicates are
    /// summed and pairs whose total is zero are dropped. An empty `lin`
    /// means all-zero linear terms.
    pub fn new(
        n: usize,
        quad: impl IntoIterator<Item = (usize, usize, f64)>,
        lin: Vec<f64>,
        konst: f64,
    ) -> Result<Self> {
        let lin = if lin.is_empty() { vec![0.0; n] } else { lin };
        if lin.len() != n {
            return invalid(format!("linear terms have length {}, expected {n}", lin.len()));
        }
        if !konst.is_finite() || lin.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite coefficient");
        }
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, w) in quad {
            if a >= n || b >= n {
                return invalid(format!("edge ({a}, {b}) out of range for n = {n}"));
            }
            if a == b {
                return invalid(format!("self-coupling on vertex {a}; fold it into the linear term"));
            }
            if !w.is_finite() {
                return invalid(format!("non-finite coupling on ({a}, {b})"));
            }
            *map.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
        map.retain(|_, w| *w != 0.0);

        let mut adj = vec![Vec::new(); n];
        for (&(i, j), &w) in &map {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        Ok(Self {
            n,
            quad: map,
            lin,
            konst,
            adj,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn quad(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.quad
    }

    pub fn lin(&self) -> &[f64] {
        &self.lin
    }

    pub fn konst(&self) -> f64 {
        self.konst
    }

    pub fn num_edges(&self) -> usize {
        self.quad.len()
    }

    /// Edges `(i, j, Q_ij)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.quad.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.quad
            .get(&(i.min(j), i.max(j)))
            .copied()
            .unwrap_or(0.0)
    }

    /// `E(x)`.
    pub fn energy(&self, x: &SpinConfig) -> Result<f64> {
        if x.len() != self.n {
            return invalid(format!(
                "configuration length {} does not match n = {}",
                x.len(),
                self.n
            ));
        }
        Ok(self.energy_bits(x.bits()))
    }

    /// Unchecked `E(x)` over a raw bit slice.
    pub fn energy_bits(&self, x: &[u8]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        let mut e = self.konst;
        for (i, &b) in x.iter().enumerate() {
            if b == 1 {
                e += self.lin[i];
            }
        }
        for (&(i, j), &w) in &self.quad {
            if x[i] == 1 && x[j] == 1 {
                e += w;
            }
        }
        e
    }

    /// Local field `q_i + sum_k Q_ik x_k`: the energy change per unit change of `x_i`.
    #[inline]
    pub fn local_field(&self, x: &[u8], i: usize) -> f64 {
        self.adj[i]
            .iter()
            .filter(|&&(k, _)| x[k] == 1)
            .fold(self.lin[i], |acc, &(_, w)| acc + w)
    }

    /// `E(swap(x, i, j)) - E(x)` in O(deg(i) + deg(j)). Requires `x_i != x_j`.
    pub fn energy_delta_swap(&self, x: &SpinConfig, i: usize, j: usize) -> Result<f64> {
        if x.len() != self.n || i >= self.n || j >= self.n {
            return invalid("swap indices or configuration out of range");
        }
        if x.get(i) == x.get(j) {
            return invalid(format!("sites {i} and {j} hold equal bits; swap is a no-op"));
        }
        Ok(self.swap_delta_unchecked(x.bits(), i, j))
    }

    #[inline]
    pub(crate) fn swap_delta_unchecked(&self, x: &[u8], i: usize, j: usize) -> f64 {
        let di = 1.0 - 2.0 * f64::from(x[i]);
        let dj = -di;
        di * self.local_field(x, i) + dj * self.local_field(x, j) + di * dj * self.coupling(i, j)
    }

    /// `E(y) - E(x)` where `y` equals `x` except on `vertices`, which take
    /// `new_bits` (same order). `member` must answer whether a vertex is in
    /// the set.
    pub fn energy_delta_subset(
        &self,
        x: &[u8],
        vertices: &[usize],
        new_bits: &[u8],
        member: impl Fn(usize) -> Option<usize>,
    ) -> f64 {
        debug_assert_eq!(vertices.len(), new_bits.len());
        let mut delta = 0.0;
        for (t, &i) in vertices.iter().enumerate() {
            let old_i = f64::from(x[i]);
            let new_i = f64::from(new_bits[t]);
            if old_i != new_i {
                delta += self.lin[i] * (new_i - old_i);
            }
            for &(k, w) in &self.adj[i] {
                match member(k) {
                    // inside edges counted once, from the lower vertex
                    Some(tk) => {
                        if i < k {
                            let old = old_i * f64::from(x[k]);
                            let new = new_i * f64::from(new_bits[tk]);
                            if old != new {
                                delta += w * (new - old);
                            }
                        }
                    }
                    None => {
                        if x[k] == 1 && old_i != new_i {
                            delta += w * (new_i - old_i);
                        }
                    }
                }
            }
        }
        delta
    }

    /// The instance restricted to `vertices`, with only internal couplings,
    /// the vertices' linear terms and no constant. Local index `t` is
    /// `vertices[t]`.
    pub fn restrict(&self, vertices: &[usize]) -> Result<QuboInstance> {
        let mut local = HashMap::with_capacity(vertices.len());
        for (t, &v) in vertices.iter().enumerate() {
            if v >= self.n {
                return invalid(format!("vertex {v} out of range"));
            }
            if local.insert(v, t).is_some() {
                return invalid(format!("vertex {v} repeated"));
            }
        }
        let mut quad = Vec::new();
        for (t, &v) in vertices.iter().enumerate() {
            for &(k, w) in &self.adj[v] {
                if let Some(&tk) = local.get(&k) {
                    if t < tk {
                        quad.push((t, tk, w));
                    }
                }
            }
        }
        let lin = vertices.iter().map(|&v| self.lin[v]).collect();
        QuboInstance::new(vertices.len(), quad, lin, 0.0)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            n: self.n,
            edges: self.edges().collect(),
            linear: self.lin.clone(),
            constant: self.konst,
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Import a dense upper-triangular coefficient matrix written as CSV.
    /// Diagonal entries become linear terms; strictly-lower entries must be zero.
    pub fn from_dense_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(r, line)| {
                line.split(',')
                    .map(|tok| {
                        tok.trim().parse::<f64>().map_err(|e| {
                            Error::InvalidArgument(format!("row {r}: cannot parse {tok:?}: {e}"))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        let mut quad = Vec::new();
        let mut lin = vec![0.0; n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return invalid(format!("row {i} has {} entries, expected {n}", row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                if j < i && v != 0.0 {
                    return invalid(format!("entry ({i}, {j}) below the diagonal is nonzero"));
                }
                if j == i {
                    lin[i] = v;
                } else if j > i && v != 0.0 {
                    quad.push((i, j, v));
                }
            }
        }
        QuboInstance::new(n, quad, lin, 0.0)
    }
}

impl TryFrom<InstanceFile> for QuboInstance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        QuboInstance::new(f.n, f.edges, f.linear, f.constant)
    }
}

impl From<QuboInstance> for InstanceFile {
    fn from(inst: QuboInstance) -> Self {
        inst.to_file()
    }
}

/// `H = sum_{i<j} J_ij s_i s_j + sum_i h_i s_i + c'` over spins `s_i = 1 - 2 x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingForm {
    pub j: BTreeMap<(usize, usize), f64>,
    pub h: Vec<f64>,
    pub konst: f64,
}

impl IsingForm {
    pub fn evaluate_spins(&self, s: &[i8]) -> f64 {
        let mut e = self.konst;
        for (i, &hi) in self.h.iter().enumerate() {
            e += hi * f64::from(s[i]);
        }
        for (&(a, b), &w) in &self.j {
            e += w * f64::from(s[a] * s[b]);
        }
        e
    }

    /// Evaluate at the spin image of a bit configuration.
    pub fn evaluate(&self, x: &SpinConfig) -> f64 {
        let s: Vec<i8> = x.bits().iter().map(|&b| 1 - 2 * b as i8).collect();
        self.evaluate_spins(&s)
    }
}

/// Rewrite a QUBO in Ising form via `x_i = (1 - s_i) / 2`.
pub fn qubo_to_ising(inst: &QuboInstance) -> IsingForm {
    let mut h: Vec<f64> = inst.lin.iter().map(|q| -0.5 * q).collect();
    let mut j = BTreeMap::new();
    let mut konst = inst.konst + 0.5 * inst.lin.iter().sum::<f64>();
    for (&(a, b), &w) in &inst.quad {
        j.insert((a, b), 0.25 * w);
        h[a] -= 0.25 * w;
        h[b] -= 0.25 * w;
        konst += 0.25 * w;
    }
    IsingForm { j, h, konst }
}

/// Random `degree`-regular graph with iid standard-normal couplings, no
/// linear terms and zero constant.
///
/// Graphs come from the configuration (pairing) model, restarting from
/// scratch whenever a loop or a repeated edge appears, which makes the
/// result uniform over simple regular graphs.
pub fn gen_regular_instance(n: usize, degree: usize, seed: u64) -> Result<QuboInstance> {
    if n == 0 || degree >= n || !(n * degree).is_multiple_of(2) {
        return invalid(format!("no simple {degree}-regular graph on {n} vertices"));
    }
    const MAX_ATTEMPTS: usize = 100_000;
    let mut rng = rng::stream(seed, 0);
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
    'attempt: for _ in 0..MAX_ATTEMPTS {
        stubs.shuffle(&mut rng);
        let mut edges = Vec::with_capacity(stubs.len() / 2);
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b {
                continue 'attempt;
            }
            edges.push((a, b));
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let quad = edges
            .into_iter()
            .map(|(a, b)| {
                let w: f64 = StandardNormal.sample(&mut rng);
                (a, b, w)
            })
            .collect::<Vec<_>>();
        return QuboInstance::new(n, quad, vec![0.0; n], 0.0);
    }
    Err(Error::ResourceLimit(format!(
        "pairing model produced no simple graph in {MAX_ATTEMPTS} attempts"
    )))
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Exact constrained Boltzmann distribution over all weight-`k` states.
#[derive(Debug, Clone)]
pub struct ConstrainedBoltzmann {
    pub k: usize,
    pub beta: f64,
    pub states: Vec<SpinConfig>,
    pub energies: Vec<f64>,
    pub probs: Vec<f64>,
    index: HashMap<SpinConfig, usize>,
}

impl ConstrainedBoltzmann {
    pub fn prob(&self, x: &SpinConfig) -> f64 {
        self.index.get(x).map_or(0.0, |&i| self.probs[i])
    }

    pub fn index_of(&self, x: &SpinConfig) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the lowest-energy state (first in enumeration order on ties).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &e) in self.energies.iter().enumerate() {
            if e < self.energies[best] {
                best = i;
            }
        }
        best
    }
}

/// Lexicographic successor of a sorted `k`-subset of `0..n`; false when exhausted.
pub(crate) fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for t in i + 1..k {
                c[t] = c[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub fn enumerate_constrained_boltzmann(
    inst: &QuboInstance,
    k: usize,
    beta: f64,
) -> Result<ConstrainedBoltzmann> {
    enumerate_constrained_boltzmann_with_cap(inst, k, beta, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_constrained_boltzmann_with_cap(
    inst: &QuboInstance,
    k: usize,
    beta: f64,
    cap: u128,
) -> Result<ConstrainedBoltzmann> {
    let n = inst.n();
    if k > n {
        return invalid(format!("K = {k} exceeds n = {n}"));
    }
    let count = binomial(n, k);
    if count > cap {
        return Err(Error::ResourceLimit(format!(
            "C({n}, {k}) = {count} states exceeds the enumeration cap {cap}"
        )));
    }
    let mut states = Vec::with_capacity(count as usize);
    let mut energies = Vec::with_capacity(count as usize);
    let mut comb: Vec<usize> = (0..k).collect();
    loop {
        let x = SpinConfig::from_ones(n, &comb)?;
        energies.push(inst.energy_bits(x.bits()));
        states.push(x);
        if !next_combination(&mut comb, n) {
            break;
        }
    }
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut probs: Vec<f64> = energies.iter().map(|&e| (-beta * (e - e_min)).exp()).collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(ConstrainedBoltzmann {
        k,
        beta,
        states,
        energies,
        probs,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Independent term-by-term evaluator.
    fn naive_energy(inst: &QuboInstance, x: &[u8]) -> f64 {
        let n = inst.n();
        let mut e = inst.konst();
        for i in 0..n {
            e += inst.lin()[i] * f64::from(x[i]);
            for j in i + 1..n {
                e += inst.coupling(i, j) * f64::from(x[i]) * f64::from(x[j]);
            }
        }
        e
    }

    fn random_instance(n: usize, density: f64, seed: u64) -> QuboInstance {
        let mut rng = rng::stream(seed, 9);
        let mut quad = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < density {
                    quad.push((i, j, rng.random_range(-2.0..2.0)));
                }
            }
        }
        let lin = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        QuboInstance::new(n, quad, lin, rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn zero_config_energy_is_constant() {
        let inst = random_instance(7, 0.5, 1);
        assert_eq!(inst.energy(&SpinConfig::zeros(7)).unwrap(), inst.konst());
    }

    #[test]
    fn single_coupling_energy() {
        let inst = QuboInstance::new(2, [(0, 1, 2.0)], vec![], 0.0).unwrap();
        let x = SpinConfig::new(vec![1, 1]).unwrap();
        assert_eq!(inst.energy(&x).unwrap(), 2.0);
    }

    #[test]
    fn energy_matches_term_by_term_on_regular_graph() {
        let inst = gen_regular_instance(8, 3, 11).unwrap();
        for idx in 0..256u64 {
            let x = SpinConfig::from_index(8, idx);
            let e = inst.energy(&x).unwrap();
            assert_relative_eq!(e, naive_energy(&inst, x.bits()), epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_dimension_mismatch() {
        let inst = random_instance(4, 0.5, 2);
        assert!(matches!(
            inst.energy(&SpinConfig::zeros(3)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constructor_normalizes_pairs() {
        let inst = QuboInstance::new(3, [(2, 0, 1.0), (0, 2, 0.5), (1, 2, 0.0)], vec![], 0.0)
            .unwrap();
        assert_eq!(inst.num_edges(), 1);
        assert_eq!(inst.coupling(0, 2), 1.5);
        assert!(QuboInstance::new(3, [(1, 1, 1.0)], vec![], 0.0).is_err());
        assert!(QuboInstance::new(3, [(1, 3, 1.0)], vec![], 0.0).is_err());
    }

    #[test]
    fn swap_delta_linear_only() {
        let inst = QuboInstance::new(2, [], vec![1.0, 0.0], 0.0).unwrap();
        let x = SpinConfig::new(vec![1, 0]).unwrap();
        assert_eq!(inst.energy_delta_swap(&x, 0, 1).unwrap(), -1.0);
    }

    #[test]
    fn swap_delta_equal_bits_rejected() {
        let inst = random_instance(4, 0.5, 3);
        let x = SpinConfig::new(vec![1, 1, 0, 0]).unwrap();
        assert!(matches!(
            inst.energy_delta_swap(&x, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn swap_delta_matches_recomputation() {
        let inst = random_instance(8, 0.6, 4);
        let mut rng = rng::stream(5, 0);
        let mut x = SpinConfig::from_ones(8, &[0, 2, 5, 7]).unwrap();
        for _ in 0..100 {
            let ones: Vec<usize> = x.ones().collect();
            let zeros: Vec<usize> = (0..8).filter(|&i| x.get(i) == 0).collect();
            let i = ones[rng.random_range(0..ones.len())];
            let j = zeros[rng.random_range(0..zeros.len())];
            let before = naive_energy(&inst, x.bits());
            let d = inst.energy_delta_swap(&x, i, j).unwrap();
            x.swap(i, j);
            let after = naive_energy(&inst, x.bits());
            assert!((d - (after - before)).abs() < 1e-12);
            // swapping back undoes the delta
            let back = inst.energy_delta_swap(&x, i, j).unwrap();
            assert!((d + back).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_delta_matches_recomputation() {
        let inst = random_instance(10, 0.5, 6);
        let mut rng = rng::stream(6, 1);
        for _ in 0..200 {
            let x: Vec<u8> = (0..10).map(|_| rng.random_range(0..2)).collect();
            let vertices = vec![1, 4, 5, 8];
            let new_bits: Vec<u8> = (0..4).map(|_| rng.random_range(0..2)).collect();
            let mut y = x.clone();
            for (t, &v) in vertices.iter().enumerate() {
                y[v] = new_bits[t];
            }
            let d = inst.energy_delta_subset(&x, &vertices, &new_bits, |k| {
                vertices.iter().position(|&v| v == k)
            });
            assert!((d - (naive_energy(&inst, &y) - naive_energy(&inst, &x))).abs() < 1e-12);
        }
    }

    #[test]
    fn ising_small_cases() {
        let one = QuboInstance::new(1, [], vec![2.0], 0.0).unwrap();
        let f = qubo_to_ising(&one);
        assert_eq!(f.h, vec![-1.0]);
        assert_eq!(f.konst, 1.0);

        let two = QuboInstance::new(2, [(0, 1, 4.0)], vec![], 0.0).unwrap();
        let f = qubo_to_ising(&two);
        assert_eq!(f.j[&(0, 1)], 1.0);
        assert_eq!(f.h, vec![-1.0, -1.0]);
        assert_eq!(f.konst, 1.0);
    }

    #[test]
    fn ising_spectrum_matches_exhaustively() {
        for seed in 0..5 {
            let inst = random_instance(6, 0.7, 100 + seed);
            let f = qubo_to_ising(&inst);
            for idx in 0..64u64 {
                let x = SpinConfig::from_index(6, idx);
                let a = inst.energy(&x).unwrap();
                let b = f.evaluate(&x);
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn regular_instance_shape() {
        let inst = gen_regular_instance(16, 3, 42).unwrap();
        assert_eq!(inst.num_edges(), 24);
        assert!((0..16).all(|v| inst.degree(v) == 3));
        assert!(inst.lin().iter().all(|&q| q == 0.0));
        assert_eq!(inst.konst(), 0.0);
        assert_eq!(inst, gen_regular_instance(16, 3, 42).unwrap());
        assert_ne!(inst, gen_regular_instance(16, 3, 43).unwrap());
    }

    #[test]
    fn regular_instance_infeasible() {
        assert!(gen_regular_instance(5, 3, 0).is_err());
        assert!(gen_regular_instance(4, 4, 0).is_err());
    }

    #[test]
    fn regular_instance_coefficients_are_standard_normal() {
        let mut all = Vec::new();
        for seed in 0..10 {
            all.extend(gen_regular_instance(128, 3, seed).unwrap().edges().map(|e| e.2));
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 3.0 / 384f64.sqrt(), "mean {mean}");
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn enumeration_beta_zero_is_uniform() {
        let inst = random_instance(6, 0.5, 7);
        let dist = enumerate_constrained_boltzmann(&inst, 3, 0.0).unwrap();
        assert_eq!(dist.len(), 20);
        for &p in &dist.probs {
            assert!((p - 1.0 / 20.0).abs() < 1e-15);
        }
        let flat = QuboInstance::new(6, [], vec![], 0.0).unwrap();
        let dist = enumerate_constrained_boltzmann(&flat, 2, 3.0).unwrap();
        assert!(dist.probs.iter().all(|&p| (p - 1.0 / 15.0).abs() < 1e-15));
    }

    #[test]
    fn enumeration_matches_extended_precision_recount() {
        // Independent recomputation: sum energies and Boltzmann factors with
        // compensated (two-sum) accumulation over a 2^N scan filtered by weight.
        let inst = gen_regular_instance(8, 3, 3).unwrap();
        let beta = 0.5;
        let dist = enumerate_constrained_boltzmann(&inst, 4, beta).unwrap();
        let mut factors = Vec::new();
        for idx in 0..256u64 {
            if idx.count_ones() == 4 {
                let x = SpinConfig::from_index(8, idx);
                factors.push((x.clone(), (-beta * naive_energy(&inst, x.bits())).exp()));
            }
        }
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for (_, f) in &factors {
            let t = s + f;
            c += if s.abs() >= f.abs() { (s - t) + f } else { (f - t) + s };
            s = t;
        }
        let z = s + c;
        assert_eq!(factors.len(), dist.len());
        for (x, f) in factors {
            assert!((dist.prob(&x) - f / z).abs() < 1e-14);
        }
        assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_cap() {
        let inst = QuboInstance::new(30, [], vec![], 0.0).unwrap();
        assert!(matches!(
            enumerate_constrained_boltzmann(&inst, 15, 1.0),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn dense_csv_import() {
        let inst = QuboInstance::from_dense_csv("1, 2, 0\n0, -1, 3\n0, 0, 0.5\n").unwrap();
        assert_eq!(inst.lin(), &[1.0, -1.0, 0.5]);
        assert_eq!(inst.coupling(0, 1), 2.0);
        assert_eq!(inst.coupling(1, 2), 3.0);
        assert_eq!(inst.num_edges(), 2);
        assert!(QuboInstance::from_dense_csv("1, 0\n2, 1\n").is_err());
    }

    #[test]
    fn json_round_trip() {
        let inst = random_instance(5, 0.5, 8);
        let text = serde_json::to_string(&inst).unwrap();
        let back: QuboInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(inst, back);
        assert!(serde_json::from_str::<QuboInstance>(r#"{"n":2,"edges":[[0,5,1.0]]}"#).is_err());
    }

    proptest! {
        #[test]
        fn ising_agrees_with_qubo(seed in 0u64..1000, n in 1usize..12) {
            let inst = random_instance(n, 0.4, seed);
            let f = qubo_to_ising(&inst);
            let mut rng = rng::stream(seed, 3);
            for _ in 0..32 {
                let x = SpinConfig::from_index(n, rng.random::<u64>());
                let a = inst.energy(&x).unwrap();
                prop_assert!((a - f.evaluate(&x)).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn enumeration_is_a_distribution(seed in 0u64..200, k in 0usize..=7, beta in 0.0f64..5.0) {
            let inst = random_instance(7, 0.5, seed);
            let dist = enumerate_constrained_boltzmann(&inst, k, beta).unwrap();
            prop_assert_eq!(dist.len() as u128, binomial(7, k));
            prop_assert!(dist.probs.iter().all(|&p| p >= 0.0));
            prop_assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(dist.states.iter().all(|s| s.weight() == k));
        }

        #[test]
        fn pack_round_trip(bits in proptest::collection::vec(0u8..2, 0..40)) {
            let x = SpinConfig::new(bits).unwrap();
            prop_assert_eq!(SpinConfig::unpack(x.len(), &x.pack()).unwrap(), x);
        }
    }
}
