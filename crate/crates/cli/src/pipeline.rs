//! Stages of a run: instance, partition, qaoa, made, mcmc, analyze.
//!
//! Every stage reads its inputs back from the files written by earlier
//! stages, so a cached stage and a fresh one are indistinguishable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use blockmcmc::analysis::{self, analyse_overlap, ensemble_summary, overlap_from_configs};
use blockmcmc::ising::gen_regular_instance;
use blockmcmc::made::TrainingReport;
use blockmcmc::mcmc::{ChainTrace, KernelConfig, ModelSet};
use blockmcmc::partition::{build_partition_pair, crossing_report, spread_block_sizes};
use blockmcmc::qaoa::{BlockSampleSet, TrainedParams};
use blockmcmc::rng::derive_seed;
use blockmcmc::workflow::{
    filling_angle, optimize_block, per_step, sample_block, train_block, MixingConfig,
};
use blockmcmc::{BlockId, ConditionalMadeModel, KernelKind, PartitionPair, QuboInstance};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;

use crate::config::{ExperimentConfig, InstanceSource};
use crate::error::{CliError, Result};
use crate::mnist;
use crate::store::{put, put_json, read_json, Store};

pub const INSTANCE: &str = "instance.json";
pub const PARTITIONS: &str = "partitions.json";

const TAG_INSTANCE: u64 = 1;
const TAG_PARTITION: u64 = 2;
const TAG_QAOA: u64 = 3;
const TAG_MCMC: u64 = 4;

pub fn build_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Resource(format!("cannot start worker pool: {e}")))
}

fn block_file(dir: &str, id: BlockId, ext: &str) -> String {
    format!("{dir}/{id}.{ext}")
}

fn trace_file(kernel: KernelKind, pair: usize, side: char) -> String {
    format!("mcmc/{kernel}/pair{pair:02}_{side}.trc")
}

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub store: Store,
    pool: ThreadPool,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig, out: &Path, force: bool) -> Result<Self> {
        let pool = build_pool(cfg.workers)?;
        let store = Store::open(out, &cfg.hash(), cfg.seed, force)?;
        Ok(Self { cfg, store, pool })
    }

    pub fn root(&self) -> &Path {
        self.store.root()
    }

    pub fn pool(&self) -> &ThreadPool {
        &self.pool
    }

    pub fn pool_and_store(&mut self) -> (&ThreadPool, &mut Store) {
        (&self.pool, &mut self.store)
    }

    /// Ordered parallel map over `0..n`.
    pub fn par<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    pub fn load_instance(&self) -> Result<QuboInstance> {
        Ok(QuboInstance::load_json(self.root().join(INSTANCE))?)
    }

    pub fn load_pair(&self) -> Result<PartitionPair> {
        Ok(PartitionPair::load_json(self.root().join(PARTITIONS))?)
    }

    pub fn target_weight(&self, n: usize) -> Result<usize> {
        let k = self.cfg.k.unwrap_or(n / 2);
        if k > n {
            return Err(CliError::Config(format!("K = {k} exceeds N = {n}")));
        }
        Ok(k)
    }

    pub fn run_instance(&mut self) -> Result<()> {
        let cfg = self.cfg.clone();
        let settings = match cfg.instance.source {
            InstanceSource::MnistQubo => serde_json::json!({
                "instance": cfg.instance,
                "mnist": mnist::qubo_settings(&cfg.mnist)?,
            }),
            _ => serde_json::json!({
                "instance": cfg.instance,
                "file": match &cfg.instance.path {
                    Some(p) if cfg.instance.source == InstanceSource::File => Some(crate::config::sha256_hex(&fs::read(p)?)),
                    _ => None,
                },
                "seed": cfg.seed,
            }),
        };
        self.store.stage("instance", &settings, &[], |root| {
            let mut files = Vec::new();
            let inst = match cfg.instance.source {
                InstanceSource::Generate => gen_regular_instance(
                    cfg.instance.n,
                    cfg.instance.degree,
                    derive_seed(cfg.seed, TAG_INSTANCE),
                )?,
                InstanceSource::File => {
                    let path = cfg.instance.path.as_ref().expect("validated");
                    if path.extension().is_some_and(|e| e == "csv") {
                        QuboInstance::from_dense_csv(&fs::read_to_string(path)?)?
                    } else {
                        QuboInstance::load_json(path)?
                    }
                }
                InstanceSource::MnistQubo => {
                    let (inst, mi_csv) = mnist::build_qubo(&cfg.mnist)?;
                    files.push(put(root, mnist::MI_TABLE, mi_csv)?);
                    inst
                }
            };
            inst.save_json(root.join(INSTANCE))?;
            files.insert(0, INSTANCE.to_string());
            Ok(files)
        })?;
        Ok(())
    }

    pub fn run_partition(&mut self) -> Result<()> {
        let inst = self.load_instance()?;
        let p = self.cfg.partition.clone();
        let seed = derive_seed(self.cfg.seed, TAG_PARTITION);
        let settings = serde_json::json!({ "partition": p, "seed": seed });
        self.store.stage("partition", &settings, &["instance"], |root| {
            let sizes = |given: &[usize]| -> Result<Vec<usize>> {
                if given.is_empty() {
                    Ok(spread_block_sizes(inst.n(), p.block_size)?)
                } else {
                    Ok(given.to_vec())
                }
            };
            let pair = build_partition_pair(&inst, &sizes(&p.sizes1)?, &sizes(&p.sizes2)?, seed)?;
            pair.save_json(root.join(PARTITIONS))?;
            let report = crossing_report(&pair);
            Ok(vec![
                PARTITIONS.to_string(),
                put_json(root, "partition_report.json", &report)?,
            ])
        })?;
        Ok(())
    }

    pub fn run_qaoa(&mut self) -> Result<()> {
        let inst = self.load_instance()?;
        let pair = self.load_pair()?;
        let k = self.target_weight(inst.n())?;
        let angle = filling_angle(k, inst.n());
        let q = self.cfg.qaoa.clone();
        let seed = derive_seed(self.cfg.seed, TAG_QAOA);
        let settings = serde_json::json!({ "qaoa": q, "k": k, "seed": seed });
        let blocks: Vec<_> = pair.blocks().cloned().collect();
        let pool = &self.pool;
        self.store.stage("qaoa", &settings, &["instance", "partition"], |root| {
            let out: Vec<Vec<String>> = pool.install(|| {
                blocks
                    .par_iter()
                    .map(|b| {
                        let params = optimize_block(&inst, b, &q, angle, seed)?;
                        let samples = sample_block(&inst, b, &params, &q, angle, seed)?;
                        let pf = put_json(root, &block_file("qaoa", b.id, "params.json"), &params)?;
                        let sf = block_file("qaoa", b.id, "samples.bin");
                        samples.save(root.join(&sf))?;
                        Ok(vec![pf, sf])
                    })
                    .collect::<Result<_>>()
            })?;
            Ok(out.into_iter().flatten().collect())
        })?;
        Ok(())
    }

    pub fn run_made(&mut self) -> Result<()> {
        let pair = self.load_pair()?;
        let m = self.cfg.made.clone();
        let seed = derive_seed(self.cfg.seed, TAG_QAOA);
        let settings = serde_json::json!({ "made": m, "seed": seed });
        let ids: Vec<BlockId> = pair.blocks().map(|b| b.id).collect();
        let pool = &self.pool;
        self.store.stage("made", &settings, &["qaoa"], |root| {
            let out: Vec<Vec<String>> = pool.install(|| {
                ids.par_iter()
                    .map(|&id| {
                        let samples = BlockSampleSet::load(root.join(block_file("qaoa", id, "samples.bin")))?;
                        let (model, report): (ConditionalMadeModel, TrainingReport) = train_block(&samples, &m, seed)?;
                        let mf = block_file("made", id, "cmad");
                        fs::create_dir_all(root.join("made"))?;
                        model.save(root.join(&mf))?;
                        let rf = block_file("made", id, "train.csv");
                        report.save_csv(root.join(&rf))?;
                        Ok(vec![mf, rf])
                    })
                    .collect::<Result<_>>()
            })?;
            Ok(out.into_iter().flatten().collect())
        })?;
        Ok(())
    }

    pub fn load_models(&self, pair: &PartitionPair) -> Result<ModelSet> {
        pair.blocks()
            .map(|b| {
                let m = ConditionalMadeModel::load(self.root().join(block_file("made", b.id, "cmad")))?;
                Ok((b.id, m))
            })
            .collect()
    }

    pub fn load_params(&self, id: BlockId) -> Result<TrainedParams> {
        read_json(self.root(), &block_file("qaoa", id, "params.json"))
    }

    pub fn mcmc_seed(&self) -> u64 {
        self.cfg.mcmc.seed.unwrap_or_else(|| derive_seed(self.cfg.seed, TAG_MCMC))
    }

    pub fn run_mcmc(&mut self) -> Result<()> {
        let inst = self.load_instance()?;
        let k = self.target_weight(inst.n())?;
        let mc = self.cfg.mcmc.clone();
        let mixing = mc.mixing();
        let beta = self.cfg.beta_pi;
        let seed = self.mcmc_seed();
        let settings = serde_json::json!({ "mcmc": mc, "beta_pi": beta, "k": k, "seed": seed });
        let mut upstream = vec!["instance"];
        let models_and_pair = if mc.needs_models() {
            upstream.extend(["partition", "made"]);
            let pair = self.load_pair()?;
            let models = self.load_models(&pair)?;
            Some((pair, models))
        } else {
            None
        };
        let jobs: Vec<(KernelKind, usize)> = mc
            .kernels
            .iter()
            .flat_map(|&kind| (0..mc.repeats).map(move |r| (kind, r)))
            .collect();
        let pool = &self.pool;
        self.store.stage("mcmc", &settings, &upstream, |root| {
            let rows: Vec<(Vec<String>, String)> = pool.install(|| {
                jobs.par_iter()
                    .map(|&(kind, r)| {
                        let kc = match (kind, &models_and_pair) {
                            (KernelKind::BlockSurrogate, Some((pair, models))) => {
                                KernelConfig::block_surrogate(beta, pair, models)
                            }
                            (KernelKind::BlockSurrogate, None) => unreachable!("models loaded when requested"),
                            _ => KernelConfig::kawasaki(kind, beta),
                        };
                        let (a, b) = blockmcmc::workflow::run_pair(&inst, k, &kc, &mixing, seed, r)?;
                        let mut files = Vec::new();
                        let mut stats = String::new();
                        for (side, t) in [('a', &a), ('b', &b)] {
                            let f = trace_file(kind, r, side);
                            fs::create_dir_all(root.join(format!("mcmc/{kind}")))?;
                            t.save(root.join(&f))?;
                            files.push(format!("{f}.csv"));
                            files.push(f);
                            writeln!(
                                stats,
                                "{kind},{r},{side},{},{},{}",
                                t.acceptance_rate(),
                                t.mismatch_rate(),
                                t.energies.last().expect("start energy")
                            )
                            .expect("string write");
                        }
                        Ok((files, stats))
                    })
                    .collect::<Result<_>>()
            })?;
            let mut csv = String::from("kernel,pair,chain,acceptance,mismatch,final_energy\n");
            let mut files = Vec::new();
            for (f, s) in rows {
                files.extend(f);
                csv.push_str(&s);
            }
            files.push(put(root, "mcmc/stats.csv", csv)?);
            Ok(files)
        })?;
        Ok(())
    }

    pub fn run_analyze(&mut self) -> Result<()> {
        let mc = self.cfg.mcmc.clone();
        let settings = serde_json::json!({
            "burn_in": mc.burn_in, "max_lag": mc.max_lag, "cutoff": mc.cutoff,
            "kernels": mc.kernels, "repeats": mc.repeats,
        });
        let pool = &self.pool;
        self.store.stage("analyze", &settings, &["mcmc"], |root| {
            analyze_traces(root, pool, &mc.kernels, mc.repeats, &mc.mixing())
        })?;
        Ok(())
    }
}

#[derive(Serialize)]
struct FitRow {
    kernel: KernelKind,
    pair: usize,
    tau: Option<f64>,
    amplitude: Option<f64>,
    fit_start: Option<usize>,
    fit_end: Option<usize>,
    residual: Option<f64>,
    slow_mixing: Option<bool>,
    note: String,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn read_trace(root: &Path, rel: &str) -> Result<(u64, Vec<blockmcmc::SpinConfig>)> {
    let bytes = fs::read(root.join(rel)).map_err(|e| CliError::Data(format!("{rel}: {e}")))?;
    let (_, thin, configs) = ChainTrace::read_configs(&mut bytes.as_slice())?;
    Ok((thin, configs))
}

/// Overlap autocorrelations and decay fits from saved traces.
pub fn analyze_traces(
    root: &Path,
    pool: &ThreadPool,
    kernels: &[KernelKind],
    repeats: usize,
    mc: &MixingConfig,
) -> Result<Vec<String>> {
    let jobs: Vec<(KernelKind, usize)> = kernels
        .iter()
        .flat_map(|&k| (0..repeats).map(move |r| (k, r)))
        .collect();
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, r)| {
                let (thin, a) = read_trace(root, &trace_file(kind, r, 'a'))?;
                let (_, b) = read_trace(root, &trace_file(kind, r, 'b'))?;
                let q = overlap_from_configs(&a, &b)?;
                let (ac, fit) = analyse_overlap(&q, mc.burn_in, mc.max_lag, mc.cutoff)?;
                Ok((kind, r, ac.rho, fit.map(|f| per_step(f, thin))))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut files = Vec::new();
    let mut fits_csv = String::from("kernel,pair,tau,amplitude,fit_start,fit_end,residual,slow_mixing,note\n");
    let mut by_kernel = std::collections::BTreeMap::new();
    for &kind in kernels {
        let rows: Vec<_> = results.iter().filter(|r| r.0 == kind).collect();
        let curves: Vec<&[f64]> = rows.iter().map(|r| r.2.as_slice()).collect();
        let (mean, std) = analysis::mean_autocorrelation(&curves)?;
        let mut rho = Vec::new();
        analysis::write_rho_csv(&mut rho, &mean, &std)?;
        files.push(put(root, &format!("analysis/{kind}_rho.csv"), rho)?);
        let mut fits = Vec::new();
        for (_, r, _, fit) in rows {
            let row = match fit {
                Ok(f) => {
                    fits.push(f.clone());
                    FitRow {
                        kernel: kind,
                        pair: *r,
                        tau: Some(f.rate),
                        amplitude: Some(f.amplitude),
                        fit_start: Some(f.fit_window.0),
                        fit_end: Some(f.fit_window.1),
                        residual: Some(f.residual),
                        slow_mixing: Some(f.slow_mixing),
                        note: String::new(),
                    }
                }
                Err(e) => FitRow {
                    kernel: kind,
                    pair: *r,
                    tau: None,
                    amplitude: None,
                    fit_start: None,
                    fit_end: None,
                    residual: None,
                    slow_mixing: None,
                    note: e.to_string().replace(',', ";"),
                },
            };
            writeln!(
                fits_csv,
                "{},{},{},{},{},{},{},{},{}",
                row.kernel,
                row.pair,
                opt(row.tau),
                opt(row.amplitude),
                opt(row.fit_start),
                opt(row.fit_end),
                opt(row.residual),
                opt(row.slow_mixing),
                row.note
            )
            .expect("string write");
        }
        if !fits.is_empty() {
            by_kernel.insert(kind, fits);
        }
    }
    files.push(put(root, "analysis/fits.csv", fits_csv)?);
    if !by_kernel.is_empty() {
        let summary = ensemble_summary(&by_kernel)?;
        let mut s = Vec::new();
        summary.write_csv(&mut s)?;
        files.push(put(root, "analysis/summary.csv", s)?);
        if summary.kernels.len() > 1 {
            let mut r = String::from("kernel_a,kernel_b,tau_ratio\n");
            for (a, b, v) in &summary.ratios {
                writeln!(r, "{a},{b},{v}").expect("string write");
            }
            files.push(put(root, "analysis/ratios.csv", r)?);
        }
    }
    Ok(files)
}
