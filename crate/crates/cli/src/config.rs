//! Experiment configuration read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use blockmcmc::analysis;
use blockmcmc::featureselect::{LogRegConfig, DEFAULT_BINARIZE_THRESHOLD, DEFAULT_EDGE_THRESHOLD};
use blockmcmc::made::TrainConfig;
use blockmcmc::workflow::{MixingConfig, QaoaStageConfig};
use blockmcmc::KernelKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSource {
    Generate,
    File,
    MnistQubo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub source: InstanceSource,
    pub n: usize,
    pub degree: usize,
    /// JSON instance for `source = "file"`.
    pub path: Option<PathBuf>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            source: InstanceSource::Generate,
            n: 16,
            degree: 3,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Largest block; sizes are spread evenly when the lists below are empty.
    pub block_size: usize,
    pub sizes1: Vec<usize>,
    pub sizes2: Vec<usize>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            block_size: 8,
            sizes1: Vec::new(),
            sizes2: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub kernels: Vec<KernelKind>,
    pub steps: u64,
    pub thin: u64,
    /// Chain pairs per kernel.
    pub repeats: usize,
    /// Overrides the seed derived from the top-level seed.
    pub seed: Option<u64>,
    pub burn_in: f64,
    pub max_lag: usize,
    pub cutoff: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let m = MixingConfig::default();
        Self {
            kernels: KernelKind::ALL.to_vec(),
            steps: 20_000,
            thin: 1,
            repeats: 12,
            seed: None,
            burn_in: m.burn_in,
            max_lag: m.max_lag,
            cutoff: analysis::DEFAULT_CUTOFF,
        }
    }
}

impl McmcConfig {
    pub fn mixing(&self) -> MixingConfig {
        MixingConfig {
            steps: self.steps,
            thin: self.thin,
            pairs: self.repeats,
            burn_in: self.burn_in,
            max_lag: self.max_lag,
            cutoff: self.cutoff,
        }
    }

    pub fn needs_models(&self) -> bool {
        self.kernels.contains(&KernelKind::BlockSurrogate)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub block_sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Average 2x2 pixel windows before binarising (28x28 becomes 14x14).
    pub downsample: bool,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub binarize_threshold: u8,
    pub edge_threshold: f64,
    pub k: usize,
    pub beta_pi: f64,
    pub block_size: usize,
    /// Steps at which the best configuration is evaluated.
    pub stops: Vec<u64>,
    /// Independent search chains per kernel.
    pub runs: usize,
    pub random_masks: usize,
    pub logreg: LogRegConfig,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            downsample: false,
            train_limit: None,
            test_limit: None,
            binarize_threshold: DEFAULT_BINARIZE_THRESHOLD,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
            k: 50,
            beta_pi: 100.0,
            block_size: 16,
            stops: vec![50, 3000],
            runs: 10,
            random_masks: 10,
            logreg: LogRegConfig::default(),
        }
    }
}

impl MnistConfig {
    pub fn paths(&self) -> Result<[&Path; 4]> {
        fn get<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
            p.as_deref()
                .ok_or_else(|| CliError::Config(format!("mnist.{what} is not set")))
        }
        Ok([
            get(&self.train_images, "train_images")?,
            get(&self.train_labels, "train_labels")?,
            get(&self.test_images, "test_images")?,
            get(&self.test_labels, "test_labels")?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Total Hamming weight; `n / 2` when unset.
    pub k: Option<usize>,
    pub beta_pi: f64,
    pub instance: InstanceConfig,
    pub partition: PartitionConfig,
    pub qaoa: QaoaStageConfig,
    pub made: TrainConfig,
    pub mcmc: McmcConfig,
    pub sweep: SweepConfig,
    pub mnist: MnistConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            workers: 1,
            k: None,
            beta_pi: 0.5,
            instance: InstanceConfig::default(),
            partition: PartitionConfig::default(),
            qaoa: QaoaStageConfig::default(),
            made: TrainConfig::default(),
            mcmc: McmcConfig::default(),
            sweep: SweepConfig::default(),
            mnist: MnistConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths in the file are taken from its directory
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.out);
        fix(&mut cfg.instance.path);
        fix(&mut cfg.mnist.train_images);
        fix(&mut cfg.mnist.train_labels);
        fix(&mut cfg.mnist.test_images);
        fix(&mut cfg.mnist.test_labels);
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, output directory and worker
    /// count excluded because they do not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.workers = 0;
        sha256_hex(&serde_json::to_vec(&c).expect("config serialises"))
    }

    /// Value checks and referenced-path checks, run before any stage.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.beta_pi.is_finite() && self.beta_pi >= 0.0) {
            return bad(format!("beta_pi must be finite and non-negative, got {}", self.beta_pi));
        }
        if self.partition.block_size == 0 {
            return bad("partition.block_size must be positive".into());
        }
        if self.qaoa.p == 0 || self.qaoa.restarts == 0 || self.qaoa.shots_per_angle == 0 {
            return bad("qaoa.p, qaoa.restarts and qaoa.shots_per_angle must be positive".into());
        }
        self.made.validate()?;
        let m = &self.mcmc;
        if m.kernels.is_empty() {
            return bad("mcmc.kernels is empty".into());
        }
        if m.thin == 0 || m.repeats == 0 || m.steps == 0 {
            return bad("mcmc.steps, mcmc.thin and mcmc.repeats must be positive".into());
        }
        if !(0.0..1.0).contains(&m.burn_in) {
            return bad(format!("mcmc.burn_in must lie in [0, 1), got {}", m.burn_in));
        }
        match self.instance.source {
            InstanceSource::Generate => {
                if self.instance.n == 0 {
                    return bad("instance.n must be positive".into());
                }
            }
            InstanceSource::File => match &self.instance.path {
                None => return bad("instance.path is required for source = \"file\"".into()),
                Some(p) if !p.exists() => {
                    return Err(CliError::Data(format!("instance file {} does not exist", p.display())))
                }
                Some(_) => {}
            },
            InstanceSource::MnistQubo => self.validate_mnist()?,
        }
        Ok(())
    }

    pub fn validate_mnist(&self) -> Result<()> {
        let m = &self.mnist;
        for p in m.paths()? {
            if !p.exists() {
                return Err(CliError::Data(format!("{} does not exist", p.display())));
            }
        }
        if m.k < 2 {
            return Err(CliError::Config("mnist.k must be at least 2".into()));
        }
        if m.stops.is_empty() || m.runs == 0 || m.block_size == 0 {
            return Err(CliError::Config("mnist.stops, mnist.runs and mnist.block_size must be non-empty".into()));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 4
            beta_pi = 0.5
            [instance]
            n = 12
            [partition]
            block_size = 4
            [mcmc]
            kernels = ["global-kawasaki"]
            steps = 100
            "#,
        )
        .unwrap();
        assert_eq!(cfg.instance.n, 12);
        assert_eq!(cfg.mcmc.kernels, vec![KernelKind::GlobalKawasaki]);
        assert_eq!(cfg.qaoa.p, 5);
        assert!(!cfg.mcmc.needs_models());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::from_toml("[mcmc]\nstepz = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out: Some("elsewhere".into()),
            workers: 8,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn missing_paths_are_reported() {
        let mut cfg = ExperimentConfig::default();
        cfg.instance.source = InstanceSource::File;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.instance.path = Some("/nonexistent/instance.json".into());
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 3);
    }
}
