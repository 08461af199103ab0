//! Feature selection on IDX digit images: MI QUBO, search chains, accuracy report.

use std::fmt::Write as _;
use std::fs;

use blockmcmc::analysis::{mean_std, write_best_energy_csv};
use blockmcmc::featureselect::{
    binarize, build_feature_qubo, evaluate_mask, linear_terms_mask, load_idx, random_mask, FeatureMask,
    LabeledDataset, MiTable,
};
use blockmcmc::mcmc::KernelConfig;
use blockmcmc::rng::derive_seed;
use blockmcmc::workflow::{pair_setup, search_run};
use blockmcmc::{KernelKind, QuboInstance};
use serde::Serialize;

use crate::config::{sha256_hex, ExperimentConfig, InstanceSource, MnistConfig};
use crate::error::Result;
use crate::pipeline::Runner;
use crate::store::{put, put_json};

pub const MI_TABLE: &str = "mnist/mi.csv";
pub const REPORT: &str = "mnist/report.json";
pub const KERNELS: [KernelKind; 2] = [KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki];

const TAG_SEARCH: u64 = 5;
const TAG_RANDOM: u64 = 6;

/// Full-scale reference accuracies (784 pixels, K = 50), reported for
/// comparison only.
pub const REFERENCE: [(&str, f64); 6] = [
    ("proposed-50-steps", 0.7951),
    ("proposed-3000-steps", 0.8051),
    ("global-kawasaki-50-steps", 0.7748),
    ("global-kawasaki-3000-steps", 0.8050),
    ("linear-terms", 0.7603),
    ("random", 0.7100),
];

/// Everything that determines the QUBO: input file hashes and preprocessing.
pub fn qubo_settings(m: &MnistConfig) -> Result<serde_json::Value> {
    let hashes = m
        .paths()?
        .iter()
        .map(|p| Ok(sha256_hex(&fs::read(p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::json!({
        "inputs": hashes,
        "downsample": m.downsample,
        "train_limit": m.train_limit,
        "test_limit": m.test_limit,
        "binarize_threshold": m.binarize_threshold,
        "edge_threshold": m.edge_threshold,
        "k": m.k,
    }))
}

/// Binarised training and test sets after truncation and downsampling.
pub fn load_split(m: &MnistConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let [ti, tl, si, sl] = m.paths()?;
    let prep = |images, labels, limit: Option<usize>| -> Result<LabeledDataset> {
        let mut raw = load_idx(images, labels)?;
        if let Some(n) = limit {
            raw = raw.truncate(n);
        }
        if m.downsample {
            raw = raw.downsample_2x();
        }
        Ok(binarize(&raw, m.binarize_threshold))
    };
    let train = prep(ti, tl, m.train_limit)?;
    let test = prep(si, sl, m.test_limit)?;
    Ok((train, test))
}

/// The feature-selection QUBO and its MI table as CSV.
pub fn build_qubo(m: &MnistConfig) -> Result<(QuboInstance, Vec<u8>)> {
    let (train, _) = load_split(m)?;
    let mi = MiTable::compute(&train);
    let mut csv = Vec::new();
    mi.write_csv(&mut csv)?;
    Ok((build_feature_qubo(&mi, m.k, m.edge_threshold)?, csv))
}

/// The run configuration used by `mnist`: the QUBO replaces the instance
/// and the MNIST section fixes K, beta and the block size.
pub fn derive_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.instance.source = InstanceSource::MnistQubo;
    c.k = Some(cfg.mnist.k);
    c.beta_pi = cfg.mnist.beta_pi;
    c.partition.block_size = cfg.mnist.block_size;
    c.partition.sizes1.clear();
    c.partition.sizes2.clear();
    c
}

fn mask_file(kernel: KernelKind, run: usize, stop: u64) -> String {
    format!("mnist/search/{kernel}_run{run:02}_step{stop}.mask")
}

/// Independent search chains for both kernels from shared starting points.
pub fn run_search(runner: &mut Runner) -> Result<()> {
    let inst = runner.load_instance()?;
    let pair = runner.load_pair()?;
    let models = runner.load_models(&pair)?;
    let m = runner.cfg.mnist.clone();
    let (k, beta) = (m.k, m.beta_pi);
    let seed = derive_seed(runner.cfg.seed, TAG_SEARCH);
    let settings = serde_json::json!({ "stops": m.stops, "runs": m.runs, "k": k, "beta_pi": beta, "seed": seed });
    let jobs: Vec<(KernelKind, usize)> = KERNELS
        .iter()
        .flat_map(|&kind| (0..m.runs).map(move |r| (kind, r)))
        .collect();
    let (pool, store) = runner.pool_and_store();
    store.stage("search", &settings, &["instance", "partition", "made"], |root| {
        let runs = pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter()
                .map(|&(kind, r)| {
                    let kc = match kind {
                        KernelKind::BlockSurrogate => KernelConfig::block_surrogate(beta, &pair, &models),
                        _ => KernelConfig::kawasaki(kind, beta),
                    };
                    let ([init, _], [s, _]) = pair_setup(inst.n(), k, seed, r)?;
                    search_run(&inst, k, &kc, &init, s, &m.stops)
                })
                .collect::<blockmcmc::Result<Vec<_>>>()
        })?;
        let mut files = Vec::new();
        let mut summary = String::from("kernel,run,stop,best_energy\n");
        for ((kind, r), run) in jobs.iter().zip(&runs) {
            let mut csv = Vec::new();
            write_best_energy_csv(&mut csv, &run.best_energy)?;
            files.push(put(root, &format!("mnist/search/{kind}_run{r:02}_best.csv"), csv)?);
            for (stop, x, e) in &run.best_at {
                let f = mask_file(*kind, *r, *stop);
                FeatureMask::from_bits(x.bits())?.save(root.join(&f))?;
                files.push(f);
                writeln!(summary, "{kind},{r},{stop},{e}").expect("string write");
            }
        }
        files.push(put(root, "mnist/search/best_energy.csv", summary)?);
        Ok(files)
    })?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct MethodAccuracy {
    pub method: String,
    pub stop: Option<u64>,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AccuracyReport {
    pub n_pixels: usize,
    pub k: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub methods: Vec<MethodAccuracy>,
    /// Full-scale reference values, not comparable at reduced scale.
    pub reference: Vec<(String, f64)>,
}

impl AccuracyReport {
    pub fn method(&self, name: &str, stop: Option<u64>) -> Option<&MethodAccuracy> {
        self.methods.iter().find(|m| m.method == name && m.stop == stop)
    }
}

fn summarise(method: &str, stop: Option<u64>, acc: &[f64]) -> MethodAccuracy {
    let (mean, std) = mean_std(acc);
    MethodAccuracy {
        method: method.to_string(),
        stop,
        mean,
        std,
        runs: acc.len(),
    }
}

/// Classifier accuracy of every searched mask and of the baselines.
pub fn run_evaluate(runner: &mut Runner) -> Result<()> {
    let m = runner.cfg.mnist.clone();
    let seed = derive_seed(runner.cfg.seed, TAG_RANDOM);
    let settings = serde_json::json!({
        "qubo": qubo_settings(&m)?,
        "logreg": m.logreg,
        "random_masks": m.random_masks,
        "seed": seed,
    });
    let inst = runner.load_instance()?;
    let (pool, store) = runner.pool_and_store();
    store.stage("evaluate", &settings, &["instance", "search"], |root| {
        let (train, test) = load_split(&m)?;
        let p = train.n_pixels();
        let mut masks: Vec<(String, Option<u64>, FeatureMask)> = Vec::new();
        for kind in KERNELS {
            for &stop in &m.stops {
                for r in 0..m.runs {
                    let mask = FeatureMask::load(root.join(mask_file(kind, r, stop)), p)?;
                    masks.push((kind.to_string(), Some(stop), mask));
                }
            }
        }
        let lin = MiTable {
            feature_label: inst.lin().iter().map(|v| -v).collect(),
            pairwise: Default::default(),
        };
        let linear = linear_terms_mask(&lin, m.k)?;
        linear.save(root.join("mnist/linear_terms.mask"))?;
        masks.push(("linear-terms".into(), None, linear));
        for r in 0..m.random_masks {
            masks.push(("random".into(), None, random_mask(p, m.k, derive_seed(seed, r as u64))?));
        }
        let acc = pool.install(|| {
            use rayon::prelude::*;
            masks
                .par_iter()
                .map(|(_, _, mask)| Ok(evaluate_mask(&train, &test, mask, &m.logreg)?))
                .collect::<Result<Vec<f64>>>()
        })?;
        let mut csv = String::from("method,stop,index,accuracy\n");
        let mut groups: Vec<(String, Option<u64>, Vec<f64>)> = Vec::new();
        for ((name, stop, _), a) in masks.iter().zip(&acc) {
            match groups.iter_mut().find(|g| &g.0 == name && g.1 == *stop) {
                Some(g) => g.2.push(*a),
                None => groups.push((name.clone(), *stop, vec![*a])),
            }
            let idx = groups.iter().find(|g| &g.0 == name && g.1 == *stop).map_or(0, |g| g.2.len() - 1);
            let stop = stop.map(|s| s.to_string()).unwrap_or_default();
            writeln!(csv, "{name},{stop},{idx},{a}").expect("string write");
        }
        let report = AccuracyReport {
            n_pixels: p,
            k: m.k,
            train_samples: train.n_samples(),
            test_samples: test.n_samples(),
            methods: groups.iter().map(|(n, s, a)| summarise(n, *s, a)).collect(),
            reference: REFERENCE.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        };
        Ok(vec![
            "mnist/linear_terms.mask".into(),
            put(root, "mnist/accuracy.csv", csv)?,
            put_json(root, REPORT, &report)?,
        ])
    })?;
    Ok(())
}
