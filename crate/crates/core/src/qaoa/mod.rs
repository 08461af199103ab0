//! Exact statevector simulation of block QAOA with an XY mixer.
//!
//! Basis index convention: qubit `t` is the block's `t`-th vertex and is bit
//! `t` of the basis index. Every module that converts between basis indices
//! and block bit vectors relies on this.

mod nelder_mead;
mod spectral;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::ising::QuboInstance;
use crate::partition::{Block, BlockId};
use crate::rng;

pub use nelder_mead::{minimize, Minimum, NelderMeadConfig};
pub use spectral::XyMixerSpectrum;

/// Largest block the simulator accepts.
pub const MAX_QUBITS: usize = 24;
/// Largest block for which the sector eigendecomposition is precomputed.
pub const MAX_SPECTRAL_QUBITS: usize = 12;

const TAYLOR_TOL: f64 = 1e-13;
const TAYLOR_MAX_TERMS: usize = 200;

/// A block's diagonal cost and its mixer graph.
#[derive(Clone, Debug)]
pub struct BlockProblem {
    pub block: Block,
    /// Block-internal energy of every basis state.
    pub diag_energies: Vec<f64>,
    /// Ring over the block's vertex order, as local qubit pairs.
    pub mixer_edges: Vec<(usize, usize)>,
    spectrum: Option<XyMixerSpectrum>,
}

/// Ring mixer on `size` qubits: none for one qubit, a single edge for two.
pub fn ring_edges(size: usize) -> Vec<(usize, usize)> {
    match size {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..size).map(|t| (t, (t + 1) % size)).collect(),
    }
}

impl BlockProblem {
    /// Tabulate the block-restricted energy (internal couplings and the
    /// block's linear terms, no constant) for all `2^|B|` basis states.
    pub fn new(inst: &QuboInstance, block: &Block) -> Result<Self> {
        let size = block.len();
        if size == 0 {
            return invalid("empty block");
        }
        if size > MAX_QUBITS {
            return Err(Error::ResourceLimit(format!(
                "block of {size} qubits exceeds the simulator limit of {MAX_QUBITS}"
            )));
        }
        let local = inst.restrict(&block.vertices)?;
        let dim = 1usize << size;
        let mut diag = vec![0.0; dim];
        for z in 1..dim {
            let t = z.trailing_zeros() as usize;
            let rest = z & (z - 1);
            let mut e = diag[rest] + local.lin()[t];
            for &(s, w) in local.neighbors(t) {
                if (rest >> s) & 1 == 1 {
                    e += w;
                }
            }
            diag[z] = e;
        }
        Ok(Self {
            block: block.clone(),
            diag_energies: diag,
            mixer_edges: ring_edges(size),
            spectrum: None,
        })
    }

    /// Build from explicit tables; used by tests and by callers with their own mixer graph.
    pub fn from_parts(
        block: Block,
        diag_energies: Vec<f64>,
        mixer_edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let size = block.len();
        if diag_energies.len() != 1usize << size {
            return invalid("diagonal length must be 2^|B|");
        }
        if mixer_edges.iter().any(|&(a, b)| a >= size || b >= size || a == b) {
            return invalid("mixer edge outside the block");
        }
        Ok(Self {
            block,
            diag_energies,
            mixer_edges,
            spectrum: None,
        })
    }

    /// Precompute the per-weight eigendecomposition of the mixer, which
    /// [`apply_mixer`] then uses instead of the Taylor propagator.
    pub fn with_spectral_mixer(mut self) -> Self {
        if self.size() <= MAX_SPECTRAL_QUBITS {
            self.spectrum = Some(XyMixerSpectrum::new(self.size(), &self.mixer_edges));
        }
        self
    }

    pub fn has_spectral_mixer(&self) -> bool {
        self.spectrum.is_some()
    }

    pub fn size(&self) -> usize {
        self.block.len()
    }

    pub fn dim(&self) -> usize {
        self.diag_energies.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaoaParams {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl QaoaParams {
    pub fn new(gammas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() || gammas.len() != betas.len() {
            return invalid("need p >= 1 and equally many gammas and betas");
        }
        Ok(Self { gammas, betas })
    }

    pub fn depth(&self) -> usize {
        self.gammas.len()
    }

    fn from_flat(x: &[f64]) -> Self {
        let p = x.len() / 2;
        Self {
            gammas: x[..p].to_vec(),
            betas: x[p..].to_vec(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.gammas.iter().chain(&self.betas).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl Statevector {
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[index] = Complex64::new(1.0, 0.0);
        Self { n_qubits, amps }
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        if !amps.len().is_power_of_two() {
            return invalid("amplitude count must be a power of two");
        }
        let n_qubits = amps.len().trailing_zeros() as usize;
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            for a in &mut self.amps {
                *a /= norm;
            }
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(Complex64::norm_sqr).collect()
    }

    /// Probability mass on each Hamming-weight subspace `0..=n`.
    pub fn weight_masses(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits + 1];
        for (z, a) in self.amps.iter().enumerate() {
            out[z.count_ones() as usize] += a.norm_sqr();
        }
        out
    }

    /// Probability outside the weight-`k` subspace.
    pub fn leakage(&self, k: usize) -> f64 {
        self.weight_masses()
            .iter()
            .enumerate()
            .filter(|&(w, _)| w != k)
            .map(|(_, m)| m)
            .sum()
    }

    /// Computational-basis measurements by cumulative-probability inversion.
    pub fn sample(&self, shots: usize, rng: &mut impl Rng) -> Vec<u32> {
        let mut cdf = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0;
        for a in &self.amps {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        let last_support = self
            .amps
            .iter()
            .rposition(|a| a.norm_sqr() > 0.0)
            .unwrap_or(0);
        (0..shots)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let z = cdf.partition_point(|&c| c <= u);
                z.min(last_support) as u32
            })
            .collect()
    }
}

/// Product state `(cos(a/2)|0> + sin(a/2)|1>)^{⊗ size}`.
pub fn prepare_initial_state(size: usize, angle: f64) -> Result<Statevector> {
    if size == 0 {
        return invalid("state needs at least one qubit");
    }
    if size > MAX_QUBITS {
        return Err(Error::ResourceLimit(format!(
            "{size} qubits exceeds the simulator limit of {MAX_QUBITS}"
        )));
    }
    if !(0.0..=std::f64::consts::PI).contains(&angle) {
        return invalid(format!("rotation angle {angle} outside [0, pi]"));
    }
    let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    let amps = (0..1usize << size)
        .map(|z| {
            let ones = z.count_ones() as i32;
            Complex64::new(c.powi(size as i32 - ones) * s.powi(ones), 0.0)
        })
        .collect();
    Ok(Statevector {
        n_qubits: size,
        amps,
    })
}

fn check_dims(state: &Statevector, bp: &BlockProblem) -> Result<()> {
    if state.amps.len() != bp.dim() {
        return invalid(format!(
            "state has {} amplitudes, block needs {}",
            state.amps.len(),
            bp.dim()
        ));
    }
    Ok(())
}

/// `e^{-i gamma H_C}`: a phase per basis state.
pub fn apply_cost_layer(state: &mut Statevector, bp: &BlockProblem, gamma: f64) -> Result<()> {
    check_dims(state, bp)?;
    if gamma == 0.0 {
        return Ok(());
    }
    for (a, &e) in state.amps.iter_mut().zip(&bp.diag_energies) {
        *a *= Complex64::from_polar(1.0, -gamma * e);
    }
    Ok(())
}

/// `dst = H_M src` with `H_M = 1/2 sum (X_a X_b + Y_a Y_b)`, which maps
/// `|..0_a..1_b..> <-> |..1_a..0_b..>` with unit amplitude.
pub(crate) fn apply_xy_hamiltonian(edges: &[(usize, usize)], src: &[Complex64], dst: &mut [Complex64]) {
    dst.fill(Complex64::new(0.0, 0.0));
    for &(a, b) in edges {
        let flip = (1usize << a) | (1usize << b);
        for (z, &amp) in src.iter().enumerate() {
            if ((z >> a) ^ (z >> b)) & 1 == 1 {
                dst[z ^ flip] += amp;
            }
        }
    }
}

/// `e^{-i beta H_M}` by sub-stepped Taylor series.
///
/// The step count is `ceil(|beta| * |E_M|)`, so each sub-step has
/// `||dt H_M|| <= 1`; each series is summed until the appended term has norm
/// below 1e-13, and the result is renormalised at the end.
pub fn apply_xy_mixer_layer(state: &mut Statevector, bp: &BlockProblem, beta: f64) -> Result<()> {
    check_dims(state, bp)?;
    if beta == 0.0 || bp.mixer_edges.is_empty() {
        return Ok(());
    }
    let steps = ((beta.abs() * bp.mixer_edges.len() as f64).ceil() as usize).max(1);
    let dt = beta / steps as f64;
    let dim = bp.dim();
    let mut term = vec![Complex64::new(0.0, 0.0); dim];
    let mut scratch = vec![Complex64::new(0.0, 0.0); dim];
    for _ in 0..steps {
        term.copy_from_slice(&state.amps);
        let mut converged = false;
        for k in 1..=TAYLOR_MAX_TERMS {
            apply_xy_hamiltonian(&bp.mixer_edges, &term, &mut scratch);
            let factor = Complex64::new(0.0, -dt / k as f64);
            let mut norm_sq = 0.0;
            for (t, s) in term.iter_mut().zip(&scratch) {
                *t = s * factor;
                norm_sq += t.norm_sqr();
            }
            for (a, t) in state.amps.iter_mut().zip(&term) {
                *a += t;
            }
            if norm_sq.sqrt() < TAYLOR_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Internal(format!(
                "Taylor series for the mixer did not converge in {TAYLOR_MAX_TERMS} terms"
            )));
        }
    }
    state.normalize();
    Ok(())
}

/// Mixer layer through the precomputed spectrum when available, Taylor otherwise.
pub fn apply_mixer(state: &mut Statevector, bp: &BlockProblem, beta: f64) -> Result<()> {
    match &bp.spectrum {
        Some(spec) => {
            check_dims(state, bp)?;
            spec.evolve(&mut state.amps, beta);
            Ok(())
        }
        None => apply_xy_mixer_layer(state, bp, beta),
    }
}

/// Depth-p circuit: for each layer, the cost phase followed by the mixer.
pub fn qaoa_state(bp: &BlockProblem, params: &QaoaParams, init: &Statevector) -> Result<Statevector> {
    let mut state = init.clone();
    check_dims(&state, bp)?;
    for (&g, &b) in params.gammas.iter().zip(&params.betas) {
        apply_cost_layer(&mut state, bp, g)?;
        apply_mixer(&mut state, bp, b)?;
    }
    Ok(state)
}

/// `<psi| H_C |psi>`.
pub fn expected_energy(state: &Statevector, bp: &BlockProblem) -> f64 {
    state
        .amps
        .iter()
        .zip(&bp.diag_energies)
        .map(|(a, e)| a.norm_sqr() * e)
        .sum()
}

#[derive(Clone, Debug)]
pub struct OptimizeConfig {
    pub restarts: usize,
    /// Evaluation budget per restart, as a multiple of `p`.
    pub evals_per_layer: usize,
    pub f_tol: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            evals_per_layer: 400,
            f_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub params: QaoaParams,
    pub loss: f64,
    /// Loss at each random starting point.
    pub start_losses: Vec<f64>,
    /// Best loss reached by each restart.
    pub restart_losses: Vec<f64>,
    pub evals: usize,
}

/// Best-of-restarts Nelder–Mead on the exact expected energy. Starting points
/// draw every angle from `Uniform(0, pi/2)`; restart `r` uses its own substream
/// so a longer run extends, never changes, a shorter one.
pub fn optimize_params(
    bp: &BlockProblem,
    p: usize,
    init: &Statevector,
    cfg: &OptimizeConfig,
    seed: u64,
) -> Result<OptimizeResult> {
    if p == 0 {
        return invalid("QAOA depth must be at least 1");
    }
    if cfg.restarts == 0 {
        return invalid("need at least one restart");
    }
    check_dims(init, bp)?;
    let loss = |x: &[f64]| -> f64 {
        let params = QaoaParams::from_flat(x);
        qaoa_state(bp, &params, init)
            .map(|s| expected_energy(&s, bp))
            .unwrap_or(f64::INFINITY)
    };
    let nm = NelderMeadConfig {
        max_evals: cfg.evals_per_layer * p,
        f_tol: cfg.f_tol,
        initial_step: 0.25,
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_losses = Vec::with_capacity(cfg.restarts);
    let mut restart_losses = Vec::with_capacity(cfg.restarts);
    let mut evals = 0;
    for r in 0..cfg.restarts {
        let mut rng = rng::stream(seed, r as u64);
        let x0: Vec<f64> = (0..2 * p)
            .map(|_| rng.random::<f64>() * std::f64::consts::FRAC_PI_2)
            .collect();
        let f0 = loss(&x0);
        start_losses.push(f0);
        let m = minimize(loss, &x0, &nm);
        evals += m.evals + 1;
        let (x, f) = if m.f <= f0 { (m.x, m.f) } else { (x0, f0) };
        restart_losses.push(f);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.expect("at least one restart");
    Ok(OptimizeResult {
        params: QaoaParams::from_flat(&x),
        loss: f,
        start_losses,
        restart_losses,
        evals,
    })
}

/// Samples drawn from one block's optimised circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSampleSet {
    pub block_id: BlockId,
    pub block_size: usize,
    /// Basis indices (bit `t` = local variable `t`).
    pub samples: Vec<u32>,
    /// Hamming weight of each sample.
    pub weights: Vec<u8>,
    /// Index of the initial-state angle that produced each sample.
    pub provenance: Vec<u16>,
}

impl BlockSampleSet {
    pub fn new(block_id: BlockId, block_size: usize, samples: Vec<u32>, provenance: Vec<u16>) -> Result<Self> {
        if samples.len() != provenance.len() {
            return invalid("samples and provenance differ in length");
        }
        if block_size > MAX_QUBITS || samples.iter().any(|&s| (s as u64) >> block_size != 0) {
            return invalid("sample outside the block's basis");
        }
        let weights = samples.iter().map(|s| s.count_ones() as u8).collect();
        Ok(Self {
            block_id,
            block_size,
            samples,
            weights,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Local bit vector of sample `n`.
    pub fn bits(&self, n: usize) -> Vec<u8> {
        index_to_bits(self.samples[n], self.block_size)
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

    const MAGIC: &'static [u8; 4] = b"BSMP";

    /// Header `{magic, version, partition, block index, |B|, count}` followed
    /// by LSB-first packed bitstrings and one u16 provenance tag per sample.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u16::<LittleEndian>(1)?;
        w.write_u8(self.block_id.partition)?;
        w.write_u32::<LittleEndian>(self.block_id.index as u32)?;
        w.write_u8(self.block_size as u8)?;
        w.write_u64::<LittleEndian>(self.samples.len() as u64)?;
        let stride = self.block_size.div_ceil(8);
        for &s in &self.samples {
            w.write_all(&s.to_le_bytes()[..stride])?;
        }
        for &p in &self.provenance {
            w.write_u16::<LittleEndian>(p)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut &[u8]) -> Result<Self> {
        let total = r.len() as u64;
        let offset = |r: &&[u8]| total - r.len() as u64;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .or_else(|_| format_err(offset(r), "truncated header"))?;
        if &magic != Self::MAGIC {
            return format_err(0, "not a block sample file");
        }
        let header = (|| -> std::io::Result<_> {
            let version = r.read_u16::<LittleEndian>()?;
            let partition = r.read_u8()?;
            let index = r.read_u32::<LittleEndian>()?;
            let size = r.read_u8()? as usize;
            let count = r.read_u64::<LittleEndian>()? as usize;
            Ok((version, partition, index, size, count))
        })();
        let Ok((version, partition, index, size, count)) = header else {
            return format_err(offset(r), "truncated header");
        };
        if version != 1 {
            return format_err(4, format!("unsupported version {version}"));
        }
        let stride = size.div_ceil(8);
        let need = count * (stride + 2);
        if r.len() < need {
            return format_err(
                offset(r),
                format!("expected {need} payload bytes, found {}", r.len()),
            );
        }
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf[..stride])?;
            samples.push(u32::from_le_bytes(buf));
        }
        let mut provenance = Vec::with_capacity(count);
        for _ in 0..count {
            provenance.push(r.read_u16::<LittleEndian>()?);
        }
        Self::new(BlockId::new(partition, index as usize), size, samples, provenance)
    }
}

pub fn index_to_bits(index: u32, size: usize) -> Vec<u8> {
    (0..size).map(|t| ((index >> t) & 1) as u8).collect()
}

pub fn bits_to_index(bits: &[u8]) -> u32 {
    bits.iter()
        .enumerate()
        .fold(0u32, |acc, (t, &b)| acc | (u32::from(b) << t))
}

/// Nine angles whose product states have expected weights `0, |B|/8, ..., |B|`.
pub fn default_training_angles() -> Vec<f64> {
    (0..=8)
        .map(|j| 2.0 * (j as f64 / 8.0).sqrt().asin())
        .collect()
}

/// Evolve product states at each angle with the one optimised parameter set
/// and record `shots_per_init` measurements per angle.
pub fn generate_training_set(
    bp: &BlockProblem,
    params: &QaoaParams,
    init_angles: &[f64],
    shots_per_init: usize,
    seed: u64,
) -> Result<BlockSampleSet> {
    if shots_per_init == 0 {
        return invalid("shots must be at least 1");
    }
    let mut samples = Vec::with_capacity(init_angles.len() * shots_per_init);
    let mut provenance = Vec::with_capacity(samples.capacity());
    for (a, &angle) in init_angles.iter().enumerate() {
        let init = prepare_initial_state(bp.size(), angle)?;
        let state = qaoa_state(bp, params, &init)?;
        let mut rng = rng::stream(seed, a as u64);
        samples.extend(state.sample(shots_per_init, &mut rng));
        provenance.extend(std::iter::repeat_n(a as u16, shots_per_init));
    }
    BlockSampleSet::new(bp.block.id, bp.size(), samples, provenance)
}

/// Optimised parameters as persisted: `{block_id, p, gammas, betas, loss}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedParams {
    pub block_id: BlockId,
    pub p: usize,
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    pub loss: f64,
}

impl TrainedParams {
    pub fn params(&self) -> Result<QaoaParams> {
        QaoaParams::new(self.gammas.clone(), self.betas.clone())
    }
}
