//! Command-line orchestration: staged, cached and deterministic runs.

pub mod config;
pub mod error;
pub mod mnist;
pub mod pipeline;
pub mod store;
pub mod sweep;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::Runner;
pub use store::RunManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Partition,
    Qaoa,
    Made,
    Mcmc,
    Analyze,
    Pipeline,
    SweepN,
    SweepB,
    Mnist,
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub force: bool,
}

pub fn apply(mut cfg: ExperimentConfig, o: &Overrides) -> ExperimentConfig {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(out) = &o.out {
        cfg.out = Some(out.clone());
    }
    if let Some(w) = o.workers {
        cfg.workers = w;
    }
    cfg
}

/// Runs `cmd` and every stage it depends on; returns the final manifest.
pub fn run(cmd: Command, cfg: ExperimentConfig, force: bool) -> Result<RunManifest> {
    let out: PathBuf = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory (set `out` or pass --out)".into()))?;
    let cfg = if cmd == Command::Mnist {
        mnist::derive_config(&cfg)
    } else {
        cfg
    };
    cfg.validate()?;
    let mut r = Runner::new(cfg, Path::new(&out), force)?;
    match cmd {
        Command::SweepN => sweep::run(&mut r, sweep::Axis::SystemSize)?,
        Command::SweepB => sweep::run(&mut r, sweep::Axis::BlockSize)?,
        Command::Mnist => {
            r.run_instance()?;
            r.run_partition()?;
            r.run_qaoa()?;
            r.run_made()?;
            mnist::run_search(&mut r)?;
            mnist::run_evaluate(&mut r)?;
        }
        _ => staged(&mut r, cmd)?,
    }
    Ok(r.store.manifest().clone())
}

fn staged(r: &mut Runner, cmd: Command) -> Result<()> {
    let depth = match cmd {
        Command::Generate => 0,
        Command::Partition => 1,
        Command::Qaoa => 2,
        Command::Made => 3,
        Command::Mcmc => 4,
        _ => 5,
    };
    // the surrogate stages are only needed by the block kernel
    let models = depth <= 3 || r.cfg.mcmc.needs_models();
    r.run_instance()?;
    if depth >= 1 && models {
        r.run_partition()?;
    }
    if depth >= 2 && models {
        r.run_qaoa()?;
    }
    if depth >= 3 && models {
        r.run_made()?;
    }
    if depth >= 4 {
        r.run_mcmc()?;
    }
    if depth >= 5 {
        r.run_analyze()?;
    }
    Ok(())
}
