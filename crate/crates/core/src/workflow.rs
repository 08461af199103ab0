//! End-to-end orchestration without files: block surrogate training, chain
//! ensembles with mixing fits, and feature-selection search runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, AutocorrResult, DecayFit};
use crate::error::{invalid, Error, Result};
use crate::ising::{QuboInstance, SpinConfig};
use crate::made::{train_block_model, ConditionalMadeModel, TrainConfig, TrainingReport};
use crate::mcmc::{random_feasible, run_chain, ChainTrace, KernelConfig, KernelKind, ModelSet};
use crate::partition::{Block, BlockId, PartitionPair};
use crate::qaoa::{
    default_training_angles, generate_training_set, optimize_params, prepare_initial_state,
    BlockProblem, BlockSampleSet, OptimizeConfig, TrainedParams,
};
use crate::rng::derive_seed;

/// Per-block circuit settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaoaStageConfig {
    pub p: usize,
    pub restarts: usize,
    pub evals_per_layer: usize,
    /// Initial-state rotation angles for sampling; empty means the default sweep.
    pub angles: Vec<f64>,
    pub shots_per_angle: usize,
}

impl Default for QaoaStageConfig {
    fn default() -> Self {
        Self {
            p: 5,
            restarts: 8,
            evals_per_layer: 400,
            angles: Vec::new(),
            shots_per_angle: 2000,
        }
    }
}

/// Product-state angle whose expected weight fraction is `K / N`; the same
/// for every block size, and `pi / 2` at half filling.
pub fn filling_angle(k: usize, n: usize) -> f64 {
    2.0 * (k as f64 / n as f64).sqrt().asin()
}

impl QaoaStageConfig {
    /// Configured angles, or the default sweep plus `bias` when it is not
    /// already part of the sweep.
    pub fn angles(&self, bias: f64) -> Vec<f64> {
        if !self.angles.is_empty() {
            return self.angles.clone();
        }
        let mut a = default_training_angles();
        if a.iter().all(|x| (x - bias).abs() > 1e-9) {
            a.push(bias);
        }
        a
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        OptimizeConfig {
            restarts: self.restarts,
            evals_per_layer: self.evals_per_layer,
            ..OptimizeConfig::default()
        }
    }
}

fn block_tag(id: BlockId) -> u64 {
    (u64::from(id.partition) << 32) | id.index as u64
}

/// Seeds for one block's circuit optimisation, sampling and model training.
pub fn block_seeds(seed: u64, id: BlockId) -> [u64; 3] {
    let base = derive_seed(seed, block_tag(id));
    [derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3)]
}

pub fn block_problem(inst: &QuboInstance, block: &Block) -> Result<BlockProblem> {
    Ok(BlockProblem::new(inst, block)?.with_spectral_mixer())
}

/// Optimise the block circuit from the product state at `init_angle`.
pub fn optimize_block(
    inst: &QuboInstance,
    block: &Block,
    cfg: &QaoaStageConfig,
    init_angle: f64,
    seed: u64,
) -> Result<TrainedParams> {
    let bp = block_problem(inst, block)?;
    let init = prepare_initial_state(bp.size(), init_angle)?;
    let res = optimize_params(&bp, cfg.p, &init, &cfg.optimize_config(), block_seeds(seed, block.id)[0])?;
    Ok(TrainedParams {
        block_id: block.id,
        p: cfg.p,
        gammas: res.params.gammas.clone(),
        betas: res.params.betas.clone(),
        loss: res.loss,
    })
}

pub fn sample_block(
    inst: &QuboInstance,
    block: &Block,
    params: &TrainedParams,
    cfg: &QaoaStageConfig,
    bias: f64,
    seed: u64,
) -> Result<BlockSampleSet> {
    let bp = block_problem(inst, block)?;
    let angles = cfg.angles(bias);
    generate_training_set(&bp, &params.params()?, &angles, cfg.shots_per_angle, block_seeds(seed, block.id)[1])
}

pub fn train_block(samples: &BlockSampleSet, cfg: &TrainConfig, seed: u64) -> Result<(ConditionalMadeModel, TrainingReport)> {
    let cfg = TrainConfig {
        seed: block_seeds(seed, samples.block_id)[2],
        ..cfg.clone()
    };
    train_block_model(samples, &cfg)
}

/// Everything produced for one block.
#[derive(Clone, Debug)]
pub struct BlockSurrogate {
    pub params: TrainedParams,
    pub samples: BlockSampleSet,
    pub model: ConditionalMadeModel,
    pub report: TrainingReport,
}

/// Circuit optimisation, sampling and model fit for one block; `angle` is
/// the optimisation start and the extra sampling angle.
pub fn train_surrogate(
    inst: &QuboInstance,
    block: &Block,
    qcfg: &QaoaStageConfig,
    mcfg: &TrainConfig,
    angle: f64,
    seed: u64,
) -> Result<BlockSurrogate> {
    let params = optimize_block(inst, block, qcfg, angle, seed)?;
    let samples = sample_block(inst, block, &params, qcfg, angle, seed)?;
    let (model, report) = train_block(&samples, mcfg, seed)?;
    Ok(BlockSurrogate {
        params,
        samples,
        model,
        report,
    })
}

/// Surrogates for every block of both partitions, in block order.
pub fn train_surrogates(
    inst: &QuboInstance,
    pair: &PartitionPair,
    qcfg: &QaoaStageConfig,
    mcfg: &TrainConfig,
    angle: f64,
    seed: u64,
) -> Result<Vec<BlockSurrogate>> {
    pair.blocks().map(|b| train_surrogate(inst, b, qcfg, mcfg, angle, seed)).collect()
}

pub fn model_set<'a>(surrogates: impl IntoIterator<Item = &'a BlockSurrogate>) -> ModelSet {
    surrogates
        .into_iter()
        .map(|s| (s.model.block_id, s.model.clone()))
        .collect()
}

/// Chain-pair ensemble settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingConfig {
    pub steps: u64,
    pub thin: u64,
    pub pairs: usize,
    pub burn_in: f64,
    /// Largest lag, in stored samples.
    pub max_lag: usize,
    pub cutoff: f64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            thin: 1,
            pairs: 12,
            burn_in: analysis::DEFAULT_BURN_IN,
            max_lag: 2000,
            cutoff: analysis::DEFAULT_CUTOFF,
        }
    }
}

/// Initial states and chain seeds of pair `r`. Shared by all kernels so that
/// they start from the same configurations.
pub fn pair_setup(n: usize, k: usize, seed: u64, r: usize) -> Result<([SpinConfig; 2], [u64; 2])> {
    let tag = 4 * r as u64;
    let a = random_feasible(n, k, derive_seed(seed, tag))?;
    let b = random_feasible(n, k, derive_seed(seed, tag + 1))?;
    Ok(([a, b], [derive_seed(seed, tag + 2), derive_seed(seed, tag + 3)]))
}

/// One chain pair: autocorrelation of the overlap in stored-sample lags and
/// its fit converted to a per-step rate.
#[derive(Clone, Debug)]
pub struct PairMixing {
    pub autocorr: AutocorrResult,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    pub acceptance: f64,
    pub mismatch: f64,
}

/// Rescale a fit over lags of `thin` steps to single steps.
pub fn per_step(fit: DecayFit, thin: u64) -> DecayFit {
    let t = thin as f64;
    DecayFit {
        rate: fit.rate / t,
        fit_window: (fit.fit_window.0 * thin as usize, fit.fit_window.1 * thin as usize),
        ..fit
    }
}

pub fn analyse_traces(a: &ChainTrace, b: &ChainTrace, mc: &MixingConfig) -> Result<PairMixing> {
    let (autocorr, fit) = analysis::analyse_pair(a, b, mc.burn_in, mc.max_lag, mc.cutoff)?;
    let (fit, fit_error) = match fit {
        Ok(f) => (Some(per_step(f, a.thin)), None),
        Err(Error::InsufficientData(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    Ok(PairMixing {
        autocorr,
        fit,
        fit_error,
        acceptance: (a.acceptance_rate() + b.acceptance_rate()) / 2.0,
        mismatch: (a.mismatch_rate() + b.mismatch_rate()) / 2.0,
    })
}

pub fn run_pair(
    inst: &QuboInstance,
    k: usize,
    cfg: &KernelConfig<'_>,
    mc: &MixingConfig,
    seed: u64,
    r: usize,
) -> Result<(ChainTrace, ChainTrace)> {
    let ([ia, ib], [sa, sb]) = pair_setup(inst.n(), k, seed, r)?;
    let a = run_chain(inst, k, cfg, mc.steps, &ia, sa, mc.thin)?;
    let b = run_chain(inst, k, cfg, mc.steps, &ib, sb, mc.thin)?;
    Ok((a, b))
}

/// Per-kernel outcome of a chain-pair ensemble.
#[derive(Clone, Debug)]
pub struct MixingResult {
    pub kernel: KernelKind,
    pub pairs: Vec<PairMixing>,
}

impl MixingResult {
    pub fn fits(&self) -> Vec<DecayFit> {
        self.pairs.iter().filter_map(|p| p.fit.clone()).collect()
    }

    /// Mean per-step rate over the pairs that could be fitted.
    pub fn tau(&self) -> Option<f64> {
        let f = self.fits();
        (!f.is_empty()).then(|| f.iter().map(|f| f.rate).sum::<f64>() / f.len() as f64)
    }

    /// Mean and standard deviation of `rho` over pairs, truncated to the
    /// shortest curve.
    pub fn mean_rho(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let curves: Vec<&[f64]> = self.pairs.iter().map(|p| p.autocorr.rho.as_slice()).collect();
        analysis::mean_autocorrelation(&curves)
    }

    pub fn acceptance(&self) -> f64 {
        self.pairs.iter().map(|p| p.acceptance).sum::<f64>() / self.pairs.len().max(1) as f64
    }
}

pub fn measure_mixing(
    inst: &QuboInstance,
    k: usize,
    cfg: &KernelConfig<'_>,
    mc: &MixingConfig,
    seed: u64,
) -> Result<MixingResult> {
    if mc.pairs == 0 {
        return invalid("need at least one chain pair");
    }
    let pairs = (0..mc.pairs)
        .map(|r| {
            let (a, b) = run_pair(inst, k, cfg, mc, seed, r)?;
            analyse_traces(&a, &b, mc)
        })
        .collect::<Result<_>>()?;
    Ok(MixingResult {
        kernel: cfg.kind,
        pairs,
    })
}

/// Best configuration seen up to each stop step of a search chain.
#[derive(Clone, Debug)]
pub struct SearchRun {
    pub kernel: KernelKind,
    pub best_energy: Vec<f64>,
    /// `(stop_step, best configuration within the first stop_step steps)`.
    pub best_at: Vec<(u64, SpinConfig, f64)>,
}

/// Run one chain for `max(stops)` steps storing every state, and record the
/// best-so-far energies and configurations.
pub fn search_run(
    inst: &QuboInstance,
    k: usize,
    cfg: &KernelConfig<'_>,
    init: &SpinConfig,
    seed: u64,
    stops: &[u64],
) -> Result<SearchRun> {
    let steps = stops.iter().copied().max().unwrap_or(0);
    let trace = run_chain(inst, k, cfg, steps, init, seed, 1)?;
    let best_energy = analysis::best_energy_trace(&trace.energies);
    let mut best_at = Vec::with_capacity(stops.len());
    for &stop in stops {
        let upto = &trace.energies[..=stop as usize];
        let (t, &e) = upto
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .expect("energies start with the initial state");
        best_at.push((stop, trace.config(t), e));
    }
    Ok(SearchRun {
        kernel: cfg.kind,
        best_energy,
        best_at,
    })
}

/// `tau` of every kernel keyed by kind, for [`analysis::ensemble_summary`].
pub fn fits_by_kernel(results: &[MixingResult]) -> BTreeMap<KernelKind, Vec<DecayFit>> {
    results.iter().map(|r| (r.kernel, r.fits())).collect()
}
