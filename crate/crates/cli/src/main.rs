use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsaa_cli::{run_experiment, ExperimentConfig, ExperimentKind};
use nsaa_core::detection::CandidateGrid;
use nsaa_core::distributions::InstanceFamily;

#[derive(Debug, Parser)]
#[command(
    name = "nsaa",
    version,
    about = "Restart SAA experiments for nonstationary newsvendor demand"
)]
struct Cli {
    /// Change-detection candidate grid.
    #[arg(long, global = true)]
    detect_grid: Option<CandidateGrid>,
    /// Base RNG seed; replication i uses seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic simulation from a JSON configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay a demand dataset and report relative costs against NSAA.
    Replay {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated policy list.
        #[arg(long, value_delimiter = ',', default_value = "nsaa,saa,msaa,rsaa")]
        policy: Vec<String>,
        #[arg(long, default_value_t = nsaa_cli::DEFAULT_RATIO)]
        ratio: f64,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Regret scaling sweep over horizons on a hard-instance family.
    Sweep {
        #[arg(long)]
        family: InstanceFamily,
        #[arg(long)]
        budget: f64,
        /// Comma-separated horizons.
        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Comma-separated policy list.
        #[arg(long, value_delimiter = ',', default_value = "nsaa")]
        policy: Vec<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = nsaa_cli::DEFAULT_RATIO)]
        ratio: f64,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

fn config(cli: Cli) -> nsaa_cli::Result<ExperimentConfig> {
    let mut cfg = match cli.command {
        Command::Simulate { config } => ExperimentConfig::from_json_file(&config)?,
        Command::Replay {
            data,
            policy,
            ratio,
            h,
            kappa,
            delta,
        } => ExperimentConfig {
            data: Some(data),
            policies: policy,
            ratio: Some(ratio),
            h,
            kappa,
            delta,
            ..ExperimentConfig::new(ExperimentKind::Replay)
        },
        Command::Sweep {
            family,
            budget,
            horizons,
            seeds,
            policy,
            epsilon,
            ratio,
            h,
            delta,
        } => ExperimentConfig {
            family: Some(family),
            budget,
            horizons,
            seeds,
            policies: policy,
            epsilon,
            ratio: Some(ratio),
            h,
            delta,
            ..ExperimentConfig::new(ExperimentKind::Sweep)
        },
    };
    if let Some(grid) = cli.detect_grid {
        cfg.detect_grid = grid;
    }
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config(cli).and_then(|cfg| {
        let out = cfg.out.clone();
        run_experiment(cfg).map(|_| out)
    });
    match result {
        Ok(out) => {
            println!("wrote results to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
