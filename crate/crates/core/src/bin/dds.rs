use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dds_core::experiment::{
    cmd_backbones, cmd_fidcurve, cmd_metrics, cmd_run, cmd_sweep, cmd_unpaired, Command, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "dds", version, about = "Dual-domain synthesis by latent optimization")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Single paired run with snapshots, loss trace and summary.
    Run(Common),
    /// One run per (alpha, beta, gamma) cell of the configured grid.
    Sweep(Common),
    /// FID of a batch of runs against both domains over iterations.
    Fidcurve(Common),
    /// The same instance under every backbone.
    Backbones(Common),
    /// Run with separately seeded source and target latents.
    Unpaired {
        #[command(flatten)]
        common: Common,
        /// Seed of the source latent.
        #[arg(long)]
        seed_source: Option<u64>,
        /// Seed of the target latent.
        #[arg(long)]
        seed_target: Option<u64>,
    },
    /// FID, SSIM and PSNR between two PNG images.
    Metrics { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the latent initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent runs for sweeps, batches and backbone comparisons.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated iteration counts at which to keep snapshots.
    #[arg(long)]
    snapshot_iters: Option<String>,
}

impl Common {
    fn load(&self, command: Command) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.command = command;
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(seed) = self.seed {
            config.dds.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            config.jobs = jobs;
        }
        if let Some(list) = &self.snapshot_iters {
            config.set("snapshot_iters", list).context("--snapshot-iters")?;
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Run(c) => {
            let config = c.load(Command::Run)?;
            let s = cmd_run(&config)?;
            println!("wrote {} files to {}", s.files.len(), config.out.display());
        }
        Verb::Unpaired {
            common,
            seed_source,
            seed_target,
        } => {
            let mut config = common.load(Command::Unpaired)?;
            if let Some(s) = seed_source {
                config.z_seed = s;
            }
            if let Some(t) = seed_target {
                config.z_seed_target = Some(t);
            }
            let s = cmd_unpaired(&config)?;
            println!(
                "mask IoU {:.4}; wrote {} files to {}",
                s.diagnostics.mask_iou,
                s.files.len(),
                config.out.display()
            );
        }
        Verb::Sweep(c) => {
            let config = c.load(Command::Sweep)?;
            let rows = cmd_sweep(&config)?;
            println!("{} cells; wrote {}", rows.len(), config.out.join("sweep.csv").display());
        }
        Verb::Fidcurve(c) => {
            let config = c.load(Command::FidCurve)?;
            let rows = cmd_fidcurve(&config)?;
            println!("{} probes; wrote {}", rows.len(), config.out.join("fid_curve.csv").display());
        }
        Verb::Backbones(c) => {
            let config = c.load(Command::Backbones)?;
            let rows = cmd_backbones(&config)?;
            println!("{} backbones; wrote {}", rows.len(), config.out.join("backbones.csv").display());
        }
        Verb::Metrics { a, b } => {
            let report = cmd_metrics(&a, &b)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dds: {e:#}");
            ExitCode::FAILURE
        }
    }
}
