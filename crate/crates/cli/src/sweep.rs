//! System-size and block-size sweeps of the mixing rate.

use std::fmt::Write as _;

use blockmcmc::analysis::{mean_std, write_rho_csv};
use blockmcmc::ising::gen_regular_instance;
use blockmcmc::made::TrainConfig;
use blockmcmc::mcmc::KernelConfig;
use blockmcmc::partition::{build_partition_pair, spread_block_sizes};
use blockmcmc::rng::derive_seed;
use blockmcmc::workflow::{
    analyse_traces, filling_angle, model_set, run_pair, train_surrogate, MixingConfig, MixingResult,
    QaoaStageConfig,
};
use blockmcmc::{KernelKind, QuboInstance};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::pipeline::Runner;
use crate::store::put;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    SystemSize,
    BlockSize,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::SystemSize => "sweep-n",
            Axis::BlockSize => "sweep-b",
        }
    }
}

/// Mixing of every kernel on one instance. Surrogates are trained only when
/// the block-surrogate kernel is requested.
#[allow(clippy::too_many_arguments)]
pub fn mixing_point(
    pool: &ThreadPool,
    inst: &QuboInstance,
    k: usize,
    block_size: usize,
    kernels: &[KernelKind],
    beta: f64,
    qcfg: &QaoaStageConfig,
    mcfg: &TrainConfig,
    mc: &MixingConfig,
    seed: u64,
) -> Result<Vec<MixingResult>> {
    let n = inst.n();
    let pair = if kernels.contains(&KernelKind::BlockSurrogate) {
        let sizes = spread_block_sizes(n, block_size)?;
        let pair = build_partition_pair(inst, &sizes, &sizes, derive_seed(seed, 2))?;
        let blocks: Vec<_> = pair.blocks().cloned().collect();
        let angle = filling_angle(k, n);
        let qseed = derive_seed(seed, 3);
        let surrogates = pool.install(|| {
            blocks
                .par_iter()
                .map(|b| train_surrogate(inst, b, qcfg, mcfg, angle, qseed))
                .collect::<blockmcmc::Result<Vec<_>>>()
        })?;
        Some((pair, model_set(&surrogates)))
    } else {
        None
    };
    let mseed = derive_seed(seed, 4);
    let jobs: Vec<(KernelKind, usize)> = kernels
        .iter()
        .flat_map(|&kind| (0..mc.pairs).map(move |r| (kind, r)))
        .collect();
    let pairs = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, r)| {
                let kc = match (kind, &pair) {
                    (KernelKind::BlockSurrogate, Some((p, models))) => KernelConfig::block_surrogate(beta, p, models),
                    _ => KernelConfig::kawasaki(kind, beta),
                };
                let (a, b) = run_pair(inst, k, &kc, mc, mseed, r)?;
                analyse_traces(&a, &b, mc)
            })
            .collect::<blockmcmc::Result<Vec<_>>>()
    })?;
    let mut out: Vec<MixingResult> = kernels
        .iter()
        .map(|&kernel| MixingResult { kernel, pairs: Vec::new() })
        .collect();
    for ((kind, _), p) in jobs.iter().zip(pairs) {
        let slot = out.iter_mut().find(|m| m.kernel == *kind).expect("kernel listed");
        slot.pairs.push(p);
    }
    Ok(out)
}

/// Header and one row of the sweep table.
fn table_header(kernels: &[KernelKind]) -> String {
    let mut h = String::from("n,block_size");
    for k in kernels {
        write!(h, ",{k}_tau_mean,{k}_tau_std,{k}_fitted,{k}_acceptance").expect("string write");
    }
    if kernels.len() > 1 {
        for (i, a) in kernels.iter().enumerate() {
            for b in &kernels[i + 1..] {
                write!(h, ",ratio_{a}_over_{b}").expect("string write");
            }
        }
    }
    h
}

fn table_row(n: usize, block_size: usize, results: &[MixingResult]) -> String {
    let mut row = format!("{n},{block_size}");
    let taus: Vec<Option<f64>> = results.iter().map(|r| r.tau()).collect();
    for r in results {
        let rates: Vec<f64> = r.fits().iter().map(|f| f.rate).collect();
        if rates.is_empty() {
            write!(row, ",,,0,{}", r.acceptance()).expect("string write");
        } else {
            let (m, s) = mean_std(&rates);
            write!(row, ",{m},{s},{},{}", rates.len(), r.acceptance()).expect("string write");
        }
    }
    if results.len() > 1 {
        for i in 0..results.len() {
            for j in i + 1..results.len() {
                match (taus[i], taus[j]) {
                    (Some(a), Some(b)) if b > 0.0 => write!(row, ",{}", a / b),
                    _ => write!(row, ","),
                }
                .expect("string write");
            }
        }
    }
    row
}

fn point_files(root: &std::path::Path, tag: &str, results: &[MixingResult]) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let mut fits = String::from("kernel,pair,tau,acceptance,note\n");
    for r in results {
        let (mean, std) = r.mean_rho()?;
        let mut rho = Vec::new();
        write_rho_csv(&mut rho, &mean, &std)?;
        files.push(put(root, &format!("{tag}_{}_rho.csv", r.kernel), rho)?);
        for (i, p) in r.pairs.iter().enumerate() {
            let tau = p.fit.as_ref().map(|f| f.rate.to_string()).unwrap_or_default();
            let note = p.fit_error.clone().unwrap_or_default().replace(',', ";");
            writeln!(fits, "{},{i},{tau},{},{note}", r.kernel, p.acceptance).expect("string write");
        }
    }
    files.push(put(root, &format!("{tag}_fits.csv"), fits)?);
    Ok(files)
}

/// Runs every sweep point as its own cached stage, then writes the table.
pub fn run(runner: &mut Runner, axis: Axis) -> Result<()> {
    let cfg: ExperimentConfig = runner.cfg.clone();
    let points: Vec<(usize, usize)> = match axis {
        Axis::SystemSize => {
            if cfg.sweep.n_values.is_empty() {
                return Err(CliError::Config("sweep.n_values is empty".into()));
            }
            cfg.sweep.n_values.iter().map(|&n| (n, cfg.partition.block_size)).collect()
        }
        Axis::BlockSize => {
            if cfg.sweep.block_sizes.is_empty() {
                return Err(CliError::Config("sweep.block_sizes is empty".into()));
            }
            cfg.sweep.block_sizes.iter().map(|&b| (cfg.instance.n, b)).collect()
        }
    };
    let name = axis.name();
    let dir = name.replace('-', "_");
    let mc = cfg.mcmc.mixing();
    let mut rows = Vec::new();
    let mut stages = Vec::new();
    for &(n, b) in &points {
        let k = match cfg.k {
            Some(k) if k <= n => k,
            Some(k) => return Err(CliError::Config(format!("K = {k} exceeds N = {n}"))),
            None => n / 2,
        };
        let inst_seed = derive_seed(derive_seed(cfg.seed, 1), n as u64);
        let seed = derive_seed(derive_seed(cfg.seed, 7), ((n as u64) << 32) | b as u64);
        let settings = serde_json::json!({
            "n": n, "block_size": b, "k": k, "degree": cfg.instance.degree,
            "beta_pi": cfg.beta_pi, "qaoa": cfg.qaoa, "made": cfg.made, "mcmc": cfg.mcmc,
            "inst_seed": inst_seed, "seed": seed,
        });
        let tag = format!("{dir}/n{n}_b{b}");
        let stage = format!("{name}/n{n}_b{b}");
        let mut row = String::new();
        let (pool, store) = runner.pool_and_store();
        let cached = store.stage(&stage, &settings, &[], |root| {
            let inst = gen_regular_instance(n, cfg.instance.degree, inst_seed)?;
            let results = mixing_point(
                pool,
                &inst,
                k,
                b,
                &cfg.mcmc.kernels,
                cfg.beta_pi,
                &cfg.qaoa,
                &cfg.made,
                &mc,
                seed,
            )?;
            let mut files = point_files(root, &tag, &results)?;
            row = table_row(n, b, &results);
            files.push(put(root, &format!("{tag}_row.csv"), format!("{row}\n"))?);
            Ok(files)
        })?;
        if cached {
            row = std::fs::read_to_string(runner.root().join(format!("{tag}_row.csv")))?
                .trim_end()
                .to_string();
        }
        rows.push(row);
        stages.push(stage);
    }
    let upstream: Vec<&str> = stages.iter().map(String::as_str).collect();
    let header = table_header(&cfg.mcmc.kernels);
    runner.store.stage(name, &header, &upstream, |root| {
        let mut table = header.clone();
        table.push('\n');
        for r in &rows {
            table.push_str(r);
            table.push('\n');
        }
        Ok(vec![put(root, &format!("{dir}.csv"), table)?])
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use blockmcmc::analysis::{AutocorrResult, DecayFit};
    use blockmcmc::workflow::PairMixing;

    fn result(kernel: KernelKind, rates: &[f64]) -> MixingResult {
        let pairs = rates
            .iter()
            .map(|&rate| PairMixing {
                autocorr: AutocorrResult {
                    rho: vec![1.0, 0.5],
                    mean_q: 0.5,
                    var_q: 0.1,
                    degenerate: false,
                },
                fit: Some(DecayFit {
                    amplitude: 1.0,
                    rate,
                    fit_window: (1, 4),
                    residual: 0.0,
                    slow_mixing: false,
                }),
                fit_error: None,
                acceptance: 0.5,
                mismatch: 0.0,
            })
            .collect();
        MixingResult { kernel, pairs }
    }

    #[test]
    fn table_shape() {
        let ks = [KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki];
        let h = table_header(&ks);
        let rows: Vec<String> = [16, 32]
            .iter()
            .map(|&n| {
                let rs: Vec<_> = ks.iter().map(|&k| result(k, &[0.2, 0.4, 0.3])).collect();
                table_row(n, 8, &rs)
            })
            .collect();
        let cols = h.split(',').count();
        assert_eq!(cols, 2 + 3 * 4 + 3);
        for r in &rows {
            assert_eq!(r.split(',').count(), cols);
        }
        assert!(h.contains("global-kawasaki_tau_mean"));
        assert!(rows[0].starts_with("16,8,0.3"));
    }

    #[test]
    fn single_kernel_has_no_ratios() {
        let h = table_header(&[KernelKind::GlobalKawasaki]);
        assert!(!h.contains("ratio"));
        let r = table_row(16, 4, &[result(KernelKind::GlobalKawasaki, &[0.1])]);
        assert_eq!(r.split(',').count(), h.split(',').count());
    }
}
