use std::path::PathBuf;
use std::process::ExitCode;

use blockmcmc_cli::{apply, run, Command, ExperimentConfig, Overrides};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockmcmc", version, about = "Block-surrogate MCMC for fixed-weight QUBO problems")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,

    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Rerun every stage even when cached artifacts match.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Build or load the instance.
    Generate,
    /// Build the two block partitions.
    Partition,
    /// Optimise and sample the block circuits.
    Qaoa,
    /// Train the block surrogates.
    Made,
    /// Run the chain-pair ensembles.
    Mcmc,
    /// Autocorrelations and decay fits of the saved chains.
    Analyze,
    /// Every stage from instance to analysis.
    Pipeline,
    /// Mixing rate against system size.
    SweepN,
    /// Mixing rate against block size.
    SweepB,
    /// Feature selection on IDX digit images.
    Mnist,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Generate => Command::Generate,
            Cmd::Partition => Command::Partition,
            Cmd::Qaoa => Command::Qaoa,
            Cmd::Made => Command::Made,
            Cmd::Mcmc => Command::Mcmc,
            Cmd::Analyze => Command::Analyze,
            Cmd::Pipeline => Command::Pipeline,
            Cmd::SweepN => Command::SweepN,
            Cmd::SweepB => Command::SweepB,
            Cmd::Mnist => Command::Mnist,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = (|| {
        let cfg = match &args.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let o = Overrides {
            seed: args.seed,
            out: args.out.clone(),
            workers: args.workers,
            force: args.force,
        };
        run(args.cmd.into(), apply(cfg, &o), o.force)
    })();
    match result {
        Ok(m) => {
            for s in &m.stages {
                println!("{:<24} {} artifacts", s.name, s.artifacts.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
