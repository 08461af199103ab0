//! Metropolis–Hastings chains over the weight-`K` feasible set.
//!
//! Three proposal kernels share one acceptance rule,
//! `alpha = min(1, exp(-beta (E(y) - E(x)) + log q_rev - log q_fwd))`:
//! block-surrogate moves drawn from a block's conditional density model,
//! global Kawasaki swaps of a uniform one-site and a uniform zero-site, and
//! local Kawasaki swaps across a uniform edge.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::ising::{QuboInstance, SpinConfig};
use crate::made::ConditionalMadeModel;
use crate::partition::{BlockId, PartitionPair};
use crate::rng;

/// Steps between full energy and weight re-validations.
pub const VALIDATE_EVERY: u64 = 10_000;

/// Trained surrogate per block.
pub type ModelSet = BTreeMap<BlockId, ConditionalMadeModel>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    BlockSurrogate,
    GlobalKawasaki,
    LocalKawasaki,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [
        KernelKind::BlockSurrogate,
        KernelKind::GlobalKawasaki,
        KernelKind::LocalKawasaki,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::BlockSurrogate => "block-surrogate",
            KernelKind::GlobalKawasaki => "global-kawasaki",
            KernelKind::LocalKawasaki => "local-kawasaki",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown kernel '{s}'")))
    }
}

/// Kernel choice and target temperature. Block-surrogate chains also need
/// the partitions and one model per block.
#[derive(Clone, Copy, Debug)]
pub struct KernelConfig<'a> {
    pub kind: KernelKind,
    pub beta_pi: f64,
    pub partitions: Option<&'a PartitionPair>,
    pub models: Option<&'a ModelSet>,
}

impl<'a> KernelConfig<'a> {
    pub fn kawasaki(kind: KernelKind, beta_pi: f64) -> Self {
        Self {
            kind,
            beta_pi,
            partitions: None,
            models: None,
        }
    }

    pub fn block_surrogate(beta_pi: f64, partitions: &'a PartitionPair, models: &'a ModelSet) -> Self {
        Self {
            kind: KernelKind::BlockSurrogate,
            beta_pi,
            partitions: Some(partitions),
            models: Some(models),
        }
    }
}

/// What a step proposed.
#[derive(Clone, Debug, PartialEq)]
pub enum StepDetail {
    /// Block move that passed the weight check.
    Block(BlockId),
    /// Block proposal with the wrong Hamming weight, rejected outright.
    WeightMismatch(BlockId),
    Swap(usize, usize),
    /// Local Kawasaki edge with equal endpoint bits.
    Null,
}

impl fmt::Display for StepDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepDetail::Block(id) => write!(f, "{id}"),
            StepDetail::WeightMismatch(id) => write!(f, "{id}:mismatch"),
            StepDetail::Swap(i, j) => write!(f, "swap:{i}-{j}"),
            StepDetail::Null => f.write_str("null"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub step: u64,
    /// Energy of the proposed configuration (the current energy for null moves).
    pub proposed_energy: f64,
    pub accepted: bool,
    pub detail: StepDetail,
    pub acceptance_prob: f64,
}

/// A proposal before the accept/reject decision.
#[derive(Clone, Debug, PartialEq)]
pub enum Proposal {
    Block {
        id: BlockId,
        bits: Vec<u8>,
        delta_e: f64,
        log_q_fwd: f64,
        log_q_rev: f64,
    },
    WeightMismatch {
        id: BlockId,
        bits: Vec<u8>,
        delta_e: f64,
    },
    Swap {
        i: usize,
        j: usize,
        delta_e: f64,
    },
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub x: SpinConfig,
    pub energy: f64,
    pub weight: usize,
}

/// Enough to continue a chain exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub x: SpinConfig,
    pub energy: f64,
    pub step: u64,
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
    /// Site list order, which the global kernel's picks depend on.
    pub ones: Vec<usize>,
    pub zeros: Vec<usize>,
}

/// Precomputed block lookups for the block-surrogate kernel.
struct BlockKernel<'a> {
    pair: &'a PartitionPair,
    models: &'a ModelSet,
    /// `local[s - 1][v]`: position of `v` within its block of partition `s`.
    local: [Vec<usize>; 2],
}

impl<'a> BlockKernel<'a> {
    fn new(n: usize, pair: &'a PartitionPair, models: &'a ModelSet) -> Result<Self> {
        if pair.n() != n {
            return Err(Error::Configuration(format!(
                "partitions cover {} vertices, instance has {n}",
                pair.n()
            )));
        }
        let mut local = [vec![0; n], vec![0; n]];
        for b in pair.blocks() {
            let Some(model) = models.get(&b.id) else {
                return Err(Error::Configuration(format!("no surrogate model for block {}", b.id)));
            };
            if model.block_size() != b.len() {
                return Err(Error::Configuration(format!(
                    "model for block {} has {} bits, block has {}",
                    b.id,
                    model.block_size(),
                    b.len()
                )));
            }
            for (t, &v) in b.vertices.iter().enumerate() {
                local[b.id.partition as usize - 1][v] = t;
            }
        }
        Ok(Self { pair, models, local })
    }
}

enum Kernel<'a> {
    Block(BlockKernel<'a>),
    Global,
    Local(Vec<(usize, usize, f64)>),
}

/// A single Markov chain with cached energy and one/zero site lists.
pub struct Chain<'a> {
    inst: &'a QuboInstance,
    kind: KernelKind,
    kernel: Kernel<'a>,
    beta: f64,
    state: ChainState,
    ones: Vec<usize>,
    zeros: Vec<usize>,
    /// Index of each site within `ones` or `zeros`.
    slot: Vec<usize>,
    rng: rng::Rng,
    seed: u64,
    stream: u64,
    step: u64,
}

impl<'a> Chain<'a> {
    /// Start a chain at `init` on random substream `stream` of `seed`.
    pub fn new(
        inst: &'a QuboInstance,
        cfg: &KernelConfig<'a>,
        init: SpinConfig,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let n = inst.n();
        if init.len() != n {
            return invalid(format!("initial state has {} sites, instance has {n}", init.len()));
        }
        if !cfg.beta_pi.is_finite() {
            return invalid("beta must be finite");
        }
        let k = init.weight();
        let kernel = match cfg.kind {
            KernelKind::BlockSurrogate => {
                let (Some(pair), Some(models)) = (cfg.partitions, cfg.models) else {
                    return Err(Error::Configuration(
                        "block-surrogate kernel needs partitions and models".into(),
                    ));
                };
                Kernel::Block(BlockKernel::new(n, pair, models)?)
            }
            KernelKind::GlobalKawasaki => {
                if k == 0 || k == n {
                    return Err(Error::Configuration(format!(
                        "global Kawasaki has no move with K = {k} and N = {n}"
                    )));
                }
                Kernel::Global
            }
            KernelKind::LocalKawasaki => {
                let edges: Vec<_> = inst.edges().collect();
                if edges.is_empty() {
                    return Err(Error::Configuration(
                        "local Kawasaki needs at least one edge".into(),
                    ));
                }
                Kernel::Local(edges)
            }
        };
        let energy = inst.energy(&init)?;
        let mut ones = Vec::with_capacity(k);
        let mut zeros = Vec::with_capacity(n - k);
        let mut slot = vec![0; n];
        for (i, &b) in init.bits().iter().enumerate() {
            let list = if b == 1 { &mut ones } else { &mut zeros };
            slot[i] = list.len();
            list.push(i);
        }
        Ok(Self {
            inst,
            kind: cfg.kind,
            kernel,
            beta: cfg.beta_pi,
            state: ChainState {
                x: init,
                energy,
                weight: k,
            },
            ones,
            zeros,
            slot,
            rng: rng::stream(seed, stream),
            seed,
            stream,
            step: 0,
        })
    }

    /// Continue from a checkpoint; the configuration is re-validated.
    pub fn resume(inst: &'a QuboInstance, cfg: &KernelConfig<'a>, cp: &ChainCheckpoint) -> Result<Self> {
        let mut chain = Self::new(inst, cfg, cp.x.clone(), cp.seed, cp.stream)?;
        let mut ones = cp.ones.clone();
        let mut zeros = cp.zeros.clone();
        ones.sort_unstable();
        zeros.sort_unstable();
        if ones != chain.ones || zeros != chain.zeros {
            return invalid("checkpoint site lists do not match its configuration");
        }
        for (t, &i) in cp.ones.iter().enumerate() {
            chain.slot[i] = t;
        }
        for (t, &i) in cp.zeros.iter().enumerate() {
            chain.slot[i] = t;
        }
        chain.ones = cp.ones.clone();
        chain.zeros = cp.zeros.clone();
        chain.rng.set_word_pos(cp.word_pos);
        chain.step = cp.step;
        chain.state.energy = cp.energy;
        Ok(chain)
    }

    pub fn checkpoint(&self) -> ChainCheckpoint {
        ChainCheckpoint {
            x: self.state.x.clone(),
            energy: self.state.energy,
            step: self.step,
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos(),
            ones: self.ones.clone(),
            zeros: self.zeros.clone(),
        }
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn set_bit(&mut self, i: usize, v: u8) {
        if self.state.x.get(i) == v {
            return;
        }
        let (from, to) = if v == 1 {
            (&mut self.zeros, &mut self.ones)
        } else {
            (&mut self.ones, &mut self.zeros)
        };
        let at = self.slot[i];
        from.swap_remove(at);
        if at < from.len() {
            self.slot[from[at]] = at;
        }
        self.slot[i] = to.len();
        to.push(i);
        self.state.x.set(i, v);
    }

    /// Draw a proposal from the chain's kernel.
    pub fn propose(&mut self) -> Proposal {
        let x = self.state.x.bits();
        match &self.kernel {
            Kernel::Global => {
                let i = self.ones[self.rng.random_range(0..self.ones.len())];
                let j = self.zeros[self.rng.random_range(0..self.zeros.len())];
                let delta_e = self.inst.swap_delta_unchecked(x, i, j);
                Proposal::Swap { i, j, delta_e }
            }
            Kernel::Local(edges) => {
                let (i, j, _) = edges[self.rng.random_range(0..edges.len())];
                if x[i] == x[j] {
                    Proposal::Null
                } else {
                    let delta_e = self.inst.swap_delta_unchecked(x, i, j);
                    Proposal::Swap { i, j, delta_e }
                }
            }
            Kernel::Block(bk) => {
                let s: u8 = self.rng.random_range(1..=2);
                let blocks = bk.pair.partition(s);
                let m = self.rng.random_range(0..blocks.len());
                let block = &blocks[m];
                let model = &bk.models[&block.id];
                let current: Vec<u8> = block.vertices.iter().map(|&v| x[v]).collect();
                // the complement fixes the block's weight
                let k_b = current.iter().filter(|&&b| b == 1).count();
                let (bits, log_q_fwd) = model.sample(k_b, &mut self.rng).expect("k_B within 0..=|B|");
                let local = &bk.local[s as usize - 1];
                let pair = bk.pair;
                let member = |v: usize| (pair.owner(s, v) == m).then(|| local[v]);
                let delta_e = self.inst.energy_delta_subset(x, &block.vertices, &bits, member);
                if bits.iter().filter(|&&b| b == 1).count() != k_b {
                    return Proposal::WeightMismatch {
                        id: block.id,
                        bits,
                        delta_e,
                    };
                }
                let log_q_rev = model.log_prob(&current, k_b).expect("valid block state");
                Proposal::Block {
                    id: block.id,
                    bits,
                    delta_e,
                    log_q_fwd,
                    log_q_rev,
                }
            }
        }
    }

    /// Metropolis–Hastings decision for `proposal`, applied to the chain.
    pub fn accept(&mut self, proposal: Proposal) -> Result<TransitionRecord> {
        self.step += 1;
        let e = self.state.energy;
        let (log_ratio, delta_e, detail) = match &proposal {
            Proposal::Null => {
                return Ok(TransitionRecord {
                    step: self.step,
                    proposed_energy: e,
                    accepted: true,
                    detail: StepDetail::Null,
                    acceptance_prob: 1.0,
                });
            }
            Proposal::WeightMismatch { id, delta_e, .. } => {
                return Ok(TransitionRecord {
                    step: self.step,
                    proposed_energy: e + delta_e,
                    accepted: false,
                    detail: StepDetail::WeightMismatch(*id),
                    acceptance_prob: 0.0,
                });
            }
            Proposal::Swap { i, j, delta_e } => (-self.beta * delta_e, *delta_e, StepDetail::Swap(*i, *j)),
            Proposal::Block {
                id,
                delta_e,
                log_q_fwd,
                log_q_rev,
                ..
            } => (
                -self.beta * delta_e + log_q_rev - log_q_fwd,
                *delta_e,
                StepDetail::Block(*id),
            ),
        };
        if log_ratio.is_nan() {
            return Err(Error::Internal(format!(
                "acceptance ratio is not a number at step {}",
                self.step
            )));
        }
        let alpha = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
        let u: f64 = self.rng.random();
        let accepted = u <= alpha;
        if accepted {
            match proposal {
                Proposal::Swap { i, j, .. } => {
                    let (a, b) = (self.state.x.get(i), self.state.x.get(j));
                    self.set_bit(i, b);
                    self.set_bit(j, a);
                }
                Proposal::Block { id, bits, .. } => {
                    let Kernel::Block(bk) = &self.kernel else {
                        unreachable!("block proposal from a Kawasaki kernel")
                    };
                    let vertices = &bk.pair.block(id).vertices;
                    // bits going 1 -> 0 first keeps the lists consistent
                    let changes: Vec<(usize, u8)> = vertices.iter().copied().zip(bits).collect();
                    for &(v, b) in changes.iter().filter(|(_, b)| *b == 0) {
                        self.set_bit(v, b);
                    }
                    for &(v, b) in changes.iter().filter(|(_, b)| *b == 1) {
                        self.set_bit(v, b);
                    }
                }
                _ => unreachable!(),
            }
            self.state.energy += delta_e;
        }
        if self.step.is_multiple_of(VALIDATE_EVERY) {
            // resynchronise on absolute step counts so resumed runs match
            self.state.energy = self.validate()?;
        }
        Ok(TransitionRecord {
            step: self.step,
            proposed_energy: e + delta_e,
            accepted,
            detail,
            acceptance_prob: alpha,
        })
    }

    /// One full step: propose, then accept or reject.
    pub fn step(&mut self) -> Result<TransitionRecord> {
        let p = self.propose();
        self.accept(p)
    }

    /// Recompute energy and weight from scratch and check the cache;
    /// returns the exact energy.
    pub fn validate(&self) -> Result<f64> {
        let w = self.state.x.weight();
        if w != self.state.weight || self.ones.len() != w {
            return Err(Error::Internal(format!(
                "chain left the feasible set at step {}: weight {w}, expected {}",
                self.step, self.state.weight
            )));
        }
        let exact = self.inst.energy(&self.state.x)?;
        let drift = (exact - self.state.energy).abs();
        if drift > 1e-9 * exact.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "cached energy drifted by {drift:e} at step {}",
                self.step
            )));
        }
        Ok(exact)
    }
}

/// Thinned configurations plus per-step energies and transition records.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub n: usize,
    pub k: usize,
    pub kernel: KernelKind,
    pub thin: u64,
    /// Packed configurations at steps `0, thin, 2 thin, ...`.
    packed: Vec<u8>,
    /// `energies[t]` is the energy after step `t`; `energies[0]` is the start.
    pub energies: Vec<f64>,
    pub records: Vec<TransitionRecord>,
    pub checkpoint: ChainCheckpoint,
}

impl ChainTrace {
    fn stride(&self) -> usize {
        self.n.div_ceil(8)
    }

    /// Number of stored configurations.
    pub fn len(&self) -> usize {
        self.packed.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.packed.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn packed(&self, t: usize) -> &[u8] {
        let s = self.stride();
        &self.packed[t * s..(t + 1) * s]
    }

    pub fn config(&self, t: usize) -> SpinConfig {
        SpinConfig::unpack(self.n, self.packed(t)).expect("stride matches n")
    }

    pub fn final_state(&self) -> &SpinConfig {
        &self.checkpoint.x
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.accepted).count() as f64 / self.records.len() as f64
    }

    /// Fraction of steps rejected for a wrong block weight.
    pub fn mismatch_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let m = self
            .records
            .iter()
            .filter(|r| matches!(r.detail, StepDetail::WeightMismatch(_)))
            .count();
        m as f64 / self.records.len() as f64
    }

    const MAGIC: &'static [u8; 4] = b"CTRC";

    /// Header `{magic, version, n, k, thin, count}` then packed configurations.
    pub fn write_configs(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u16::<LittleEndian>(1)?;
        w.write_u32::<LittleEndian>(self.n as u32)?;
        w.write_u32::<LittleEndian>(self.k as u32)?;
        w.write_u64::<LittleEndian>(self.thin)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_all(&self.packed)?;
        Ok(())
    }

    /// `(n, thin, configurations)` from a configuration file.
    pub fn read_configs(r: &mut &[u8]) -> Result<(usize, u64, Vec<SpinConfig>)> {
        let total = r.len() as u64;
        if r.len() < 30 || &r[..4] != Self::MAGIC {
            return format_err(0, "not a chain trace file");
        }
        *r = &r[4..];
        let version = r.read_u16::<LittleEndian>()?;
        if version != 1 {
            return format_err(4, format!("unsupported version {version}"));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let _k = r.read_u32::<LittleEndian>()?;
        let thin = r.read_u64::<LittleEndian>()?;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let stride = n.div_ceil(8);
        if r.len() != count * stride {
            return format_err(
                total - r.len() as u64,
                format!("expected {} payload bytes, found {}", count * stride, r.len()),
            );
        }
        let configs = r
            .chunks(stride.max(1))
            .take(count)
            .map(|c| SpinConfig::unpack(n, c))
            .collect::<Result<_>>()?;
        Ok((n, thin, configs))
    }

    /// CSV `step,energy,accepted,kernel_detail,acceptance_prob`; row 0 is the start.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "step,energy,accepted,kernel_detail,acceptance_prob")?;
        writeln!(w, "0,{},,,", self.energies[0])?;
        for (r, e) in self.records.iter().zip(&self.energies[1..]) {
            writeln!(
                w,
                "{},{e},{},{},{}",
                r.step,
                u8::from(r.accepted),
                r.detail,
                r.acceptance_prob
            )?;
        }
        Ok(())
    }

    /// Binary configurations at `path` and the CSV sidecar at `path` + `.csv`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bin = Vec::new();
        self.write_configs(&mut bin)?;
        fs::write(path, bin)?;
        let mut csv = Vec::new();
        self.write_csv(&mut csv)?;
        let mut side = path.as_os_str().to_owned();
        side.push(".csv");
        fs::write(side, csv)?;
        Ok(())
    }
}

/// Run `steps` steps from `init`, storing every `thin`-th configuration.
pub fn run_chain(
    inst: &QuboInstance,
    k: usize,
    cfg: &KernelConfig<'_>,
    steps: u64,
    init: &SpinConfig,
    seed: u64,
    thin: u64,
) -> Result<ChainTrace> {
    if init.weight() != k {
        return invalid(format!("initial state has weight {}, expected K = {k}", init.weight()));
    }
    let chain = Chain::new(inst, cfg, init.clone(), seed, 0)?;
    continue_chain(chain, steps, thin)
}

/// Run an existing chain for `steps` more steps.
pub fn continue_chain(mut chain: Chain<'_>, steps: u64, thin: u64) -> Result<ChainTrace> {
    if thin == 0 {
        return invalid("thinning interval must be at least 1");
    }
    let n = chain.inst.n();
    let mut packed = chain.state.x.pack();
    let mut energies = Vec::with_capacity(steps as usize + 1);
    energies.push(chain.state.energy);
    let mut records = Vec::with_capacity(steps as usize);
    for t in 1..=steps {
        records.push(chain.step()?);
        energies.push(chain.state.energy);
        if t % thin == 0 {
            packed.extend(chain.state.x.pack());
        }
    }
    chain.validate()?;
    Ok(ChainTrace {
        n,
        k: chain.state.weight,
        kernel: chain.kind,
        thin,
        packed,
        energies,
        records,
        checkpoint: chain.checkpoint(),
    })
}

/// Two independent chains with the same kernel and target.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_pair(
    inst: &QuboInstance,
    k: usize,
    cfg: &KernelConfig<'_>,
    steps: u64,
    inits: (&SpinConfig, &SpinConfig),
    seeds: (u64, u64),
    thin: u64,
) -> Result<(ChainTrace, ChainTrace)> {
    let a = run_chain(inst, k, cfg, steps, inits.0, seeds.0, thin)?;
    let b = run_chain(inst, k, cfg, steps, inits.1, seeds.1, thin)?;
    Ok((a, b))
}

/// Uniformly random configuration of weight `k`.
pub fn random_feasible(n: usize, k: usize, seed: u64) -> Result<SpinConfig> {
    if k > n {
        return invalid(format!("K = {k} exceeds N = {n}"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ones = rand::seq::index::sample(&mut rng, n, k).into_vec();
    SpinConfig::from_ones(n, &ones)
}
