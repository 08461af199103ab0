//! Greedy block partitions of the interaction graph.
//!
//! Two partitions are grown independently from random seed vertices. Each
//! block absorbs, one vertex at a time, the unassigned neighbour with the
//! largest total absolute coupling to the block. A swap-based repair then
//! makes every block of the second partition straddle at least two blocks of
//! the first, so that alternating between the partitions lets a chain move
//! weight across block boundaries.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ising::QuboInstance;
use crate::rng;

/// `(partition, index)` with partition in `{1, 2}` and a zero-based block index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub partition: u8,
    pub index: usize,
}

impl BlockId {
    pub fn new(partition: u8, index: usize) -> Self {
        Self { partition, index }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}b{}", self.partition, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    /// Vertex order doubles as qubit order and surrogate variable order.
    pub vertices: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Outcome of the crossing repair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairDiagnostics {
    pub swaps: usize,
    /// The crossing invariant could not be reached within the swap budget.
    pub degraded: bool,
    /// Both partitions are a single block; the invariant holds vacuously.
    pub single_block: bool,
    /// Indices of second-partition blocks still inside one first-partition block.
    pub violating: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPair {
    pub p1: Vec<Block>,
    pub p2: Vec<Block>,
    /// `crossing[m2][m1] = |B2_m2 ∩ B1_m1|`.
    pub crossing: Vec<Vec<usize>>,
    pub diagnostics: RepairDiagnostics,
    owner1: Vec<usize>,
    owner2: Vec<usize>,
}

impl PartitionPair {
    /// Assemble a pair from explicit vertex lists, validating that both cover
    /// `0..n` exactly once.
    pub fn from_blocks(n: usize, p1: Vec<Vec<usize>>, p2: Vec<Vec<usize>>) -> Result<Self> {
        let owner1 = owners(n, &p1)?;
        let owner2 = owners(n, &p2)?;
        let wrap = |s: u8, p: Vec<Vec<usize>>| {
            p.into_iter()
                .enumerate()
                .map(|(m, vertices)| Block {
                    id: BlockId::new(s, m),
                    vertices,
                })
                .collect::<Vec<_>>()
        };
        let p1 = wrap(1, p1);
        let p2 = wrap(2, p2);
        let crossing = crossing_matrix(&p2, &owner1, p1.len());
        let mut pair = Self {
            p1,
            p2,
            crossing,
            diagnostics: RepairDiagnostics::default(),
            owner1,
            owner2,
        };
        pair.diagnostics.single_block = pair.p1.len() == 1 && pair.p2.len() == 1;
        pair.diagnostics.violating = crossing_report(&pair).violating;
        Ok(pair)
    }

    pub fn n(&self) -> usize {
        self.owner1.len()
    }

    pub fn partition(&self, s: u8) -> &[Block] {
        if s == 1 {
            &self.p1
        } else {
            &self.p2
        }
    }

    /// Block index in partition `s` that contains vertex `v`.
    #[inline]
    pub fn owner(&self, s: u8, v: usize) -> usize {
        if s == 1 {
            self.owner1[v]
        } else {
            self.owner2[v]
        }
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.partition(id.partition)[id.index]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.p1.iter().chain(self.p2.iter())
    }

    pub fn to_files(&self) -> [PartitionFile; 2] {
        let f = |s: u8, p: &[Block]| PartitionFile {
            s,
            blocks: p.iter().map(|b| b.vertices.clone()).collect(),
        };
        [f(1, &self.p1), f(2, &self.p2)]
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let doc = PairFile {
            n: self.n(),
            partitions: self.to_files().to_vec(),
            diagnostics: self.diagnostics.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let doc: PairFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        let mut p1 = None;
        let mut p2 = None;
        for f in doc.partitions {
            match f.s {
                1 => p1 = Some(f.blocks),
                2 => p2 = Some(f.blocks),
                s => return invalid(format!("partition index {s} is not 1 or 2")),
            }
        }
        let (Some(p1), Some(p2)) = (p1, p2) else {
            return invalid("partition file must contain partitions 1 and 2");
        };
        let mut pair = Self::from_blocks(doc.n, p1, p2)?;
        pair.diagnostics = doc.diagnostics;
        Ok(pair)
    }
}

/// One partition on disk: `{s, blocks: [[v..]..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub s: u8,
    pub blocks: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct PairFile {
    n: usize,
    partitions: Vec<PartitionFile>,
    #[serde(default)]
    diagnostics: RepairDiagnostics,
}

fn owners(n: usize, blocks: &[Vec<usize>]) -> Result<Vec<usize>> {
    let mut owner = vec![usize::MAX; n];
    for (m, b) in blocks.iter().enumerate() {
        if b.is_empty() {
            return invalid(format!("block {m} is empty"));
        }
        for &v in b {
            if v >= n {
                return invalid(format!("vertex {v} out of range for n = {n}"));
            }
            if owner[v] != usize::MAX {
                return invalid(format!("vertex {v} assigned twice"));
            }
            owner[v] = m;
        }
    }
    if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
        return invalid(format!("vertex {v} is not assigned to any block"));
    }
    Ok(owner)
}

fn crossing_matrix(p2: &[Block], owner1: &[usize], m1: usize) -> Vec<Vec<usize>> {
    p2.iter()
        .map(|b| {
            let mut row = vec![0; m1];
            for &v in &b.vertices {
                row[owner1[v]] += 1;
            }
            row
        })
        .collect()
}

/// Split `n` vertices into `ceil(n / max_size)` blocks whose sizes differ by at most one.
pub fn spread_block_sizes(n: usize, max_size: usize) -> Result<Vec<usize>> {
    if n == 0 || max_size == 0 {
        return invalid("need n >= 1 and a positive block size");
    }
    let m = n.div_ceil(max_size);
    let base = n / m;
    let extra = n % m;
    Ok((0..m).map(|i| base + usize::from(i < extra)).collect())
}

/// Grow blocks of the given sizes (Algorithm: greedy maximum-coupling growth).
///
/// Blocks are labelled as partition 1; [`build_partition_pair`] relabels the
/// second one.
pub fn build_partition(inst: &QuboInstance, block_sizes: &[usize], seed: u64) -> Result<Vec<Block>> {
    build_labelled(inst, block_sizes, seed, 1)
}

fn build_labelled(
    inst: &QuboInstance,
    block_sizes: &[usize],
    seed: u64,
    label: u8,
) -> Result<Vec<Block>> {
    let n = inst.n();
    if block_sizes.iter().sum::<usize>() != n {
        return invalid(format!(
            "block sizes sum to {}, expected {n}",
            block_sizes.iter().sum::<usize>()
        ));
    }
    if block_sizes.contains(&0) {
        return invalid("block sizes must be positive");
    }
    let mut rng = rng::stream(seed, 0);
    let mut assigned = vec![false; n];
    let mut unassigned: Vec<usize> = (0..n).collect();
    let mut score = vec![0.0f64; n];
    let mut candidate = vec![false; n];
    let mut blocks = Vec::with_capacity(block_sizes.len());

    let take = |v: usize, unassigned: &mut Vec<usize>, assigned: &mut Vec<bool>| {
        assigned[v] = true;
        let pos = unassigned.iter().position(|&u| u == v).expect("vertex unassigned");
        unassigned.swap_remove(pos);
        // keep sorted so random draws are independent of removal history
        unassigned.sort_unstable();
    };

    for (m, &size) in block_sizes.iter().enumerate() {
        let mut members = Vec::with_capacity(size);
        let mut frontier: Vec<usize> = Vec::new();
        let seed_vertex = unassigned[rng.random_range(0..unassigned.len())];
        let mut next = seed_vertex;
        loop {
            take(next, &mut unassigned, &mut assigned);
            members.push(next);
            candidate[next] = false;
            for &(u, w) in inst.neighbors(next) {
                if !assigned[u] {
                    if !candidate[u] {
                        candidate[u] = true;
                        frontier.push(u);
                    }
                    score[u] += w.abs();
                }
            }
            frontier.retain(|&u| !assigned[u]);
            if members.len() == size {
                break;
            }
            next = match frontier
                .iter()
                .copied()
                .max_by(|&a, &b| score[a].total_cmp(&score[b]).then(b.cmp(&a)))
            {
                Some(v) => v,
                None => unassigned[rng.random_range(0..unassigned.len())],
            };
        }
        for &u in &frontier {
            candidate[u] = false;
            score[u] = 0.0;
        }
        blocks.push(Block {
            id: BlockId::new(label, m),
            vertices: members,
        });
    }
    Ok(blocks)
}

/// Build both partitions and repair the second so every block crosses a
/// boundary of the first. At most `n` swaps are made; if the invariant is
/// still violated the pair is returned with `diagnostics.degraded` set.
pub fn build_partition_pair(
    inst: &QuboInstance,
    sizes1: &[usize],
    sizes2: &[usize],
    seed: u64,
) -> Result<PartitionPair> {
    let p1 = build_labelled(inst, sizes1, rng::derive_seed(seed, 1), 1)?;
    let p2 = build_labelled(inst, sizes2, rng::derive_seed(seed, 2), 2)?;
    let mut v1: Vec<Vec<usize>> = p1.into_iter().map(|b| b.vertices).collect();
    let mut v2: Vec<Vec<usize>> = p2.into_iter().map(|b| b.vertices).collect();
    let swaps = repair_crossing(inst, &mut v1, &mut v2);
    let mut pair = PartitionPair::from_blocks(inst.n(), v1, v2)?;
    pair.diagnostics.swaps = swaps;
    pair.diagnostics.degraded = pair.p1.len() > 1 && !pair.diagnostics.violating.is_empty();
    Ok(pair)
}

fn coupling_to(inst: &QuboInstance, v: usize, block: &[usize], skip: usize) -> f64 {
    inst.neighbors(v)
        .iter()
        .filter(|&&(u, _)| u != skip && block.contains(&u))
        .map(|&(_, w)| w.abs())
        .sum()
}

fn met_count(block: &[usize], owner1: &[usize]) -> usize {
    let mut seen: Vec<usize> = block.iter().map(|&v| owner1[v]).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Swap-based repair. Returns the number of swaps performed.
fn repair_crossing(inst: &QuboInstance, p1: &mut [Vec<usize>], p2: &mut [Vec<usize>]) -> usize {
    let n = inst.n();
    if p1.len() < 2 {
        return 0;
    }
    let owner1 = owners(n, p1).expect("valid partition");
    let mut swaps = 0;
    while swaps < n {
        let owner2 = owners(n, p2).expect("valid partition");
        let Some(b) = (0..p2.len()).find(|&m| p2[m].len() >= 2 && met_count(&p2[m], &owner1) < 2)
        else {
            break;
        };
        let home = owner1[p2[b][0]];
        // (not adjacent, breaks other, cost, u, v)
        let mut best: Option<(bool, bool, f64, usize, usize)> = None;
        for &u in &p2[b] {
            for v in 0..n {
                let b2 = owner2[v];
                if b2 == b || owner1[v] == home {
                    continue;
                }
                let adjacent = p2[b]
                    .iter()
                    .any(|&x| inst.neighbors(x).iter().any(|&(y, _)| owner2[y] == b2));
                let before_ok = p2[b2].len() < 2 || met_count(&p2[b2], &owner1) >= 2;
                let after: Vec<usize> = p2[b2]
                    .iter()
                    .map(|&x| if x == v { u } else { x })
                    .collect();
                let breaks = before_ok && after.len() >= 2 && met_count(&after, &owner1) < 2;
                let loss = coupling_to(inst, u, &p2[b], u) + coupling_to(inst, v, &p2[b2], v)
                    - coupling_to(inst, v, &p2[b], u)
                    - coupling_to(inst, u, &p2[b2], v);
                let key = (!adjacent, breaks, loss, u, v);
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        (key.0, key.1)
                            .cmp(&(cur.0, cur.1))
                            .then(key.2.total_cmp(&cur.2))
                            .then((key.3, key.4).cmp(&(cur.3, cur.4)))
                            .is_lt()
                    }
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let Some((_, _, _, u, v)) = best else {
            break;
        };
        let b2 = owner2[v];
        let pu = p2[b].iter().position(|&x| x == u).expect("member");
        let pv = p2[b2].iter().position(|&x| x == v).expect("member");
        p2[b][pu] = v;
        p2[b2][pv] = u;
        swaps += 1;
    }
    swaps
}

/// Crossing statistics of a pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    /// Number of first-partition blocks met by each second-partition block.
    pub met: Vec<usize>,
    pub min_met: usize,
    pub mean_met: f64,
    /// Second-partition blocks meeting fewer than two first-partition blocks.
    pub violating: Vec<usize>,
}

pub fn crossing_report(pp: &PartitionPair) -> CrossingReport {
    let met: Vec<usize> = pp
        .crossing
        .iter()
        .map(|row| row.iter().filter(|&&c| c > 0).count())
        .collect();
    let min_met = met.iter().copied().min().unwrap_or(0);
    let mean_met = if met.is_empty() {
        0.0
    } else {
        met.iter().sum::<usize>() as f64 / met.len() as f64
    };
    let violating = met
        .iter()
        .enumerate()
        .filter_map(|(m, &c)| (c < 2).then_some(m))
        .collect();
    CrossingReport {
        met,
        min_met,
        mean_met,
        violating,
    }
}

impl fmt::Display for CrossingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6}  {:>8}", "block", "p1-met")?;
        for (m, c) in self.met.iter().enumerate() {
            let flag = if *c < 2 { "  !" } else { "" };
            writeln!(f, "{:>6}  {:>8}{flag}", m, c)?;
        }
        writeln!(f, "min {}  mean {:.3}  violating {:?}", self.min_met, self.mean_met, self.violating)
    }
}
