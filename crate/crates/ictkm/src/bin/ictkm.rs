use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ictkm::harness::{
    self,
    audio::{run_audio, AudioConfig},
    CurveConfig, ScaleConfig, SweepConfig, TheoryConfig,
};

#[derive(Parser)]
#[command(
    name = "ictkm",
    about = "Dictionary learning via iterative compressed-thresholding and K residual means",
    version
)]
struct Cli {
    /// Override the seed from the config file
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to the number of cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory
    #[arg(long, short, global = true, default_value = "out")]
    output: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compression-ratio sweep: highest ratio with reliable recovery per transform
    Sweep {
        /// TOML experiment config
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Per-iteration recovery and timing curves
    Curve {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Recovery time as the ambient dimension grows
    Scale {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Learn a dictionary from WAV files and analyze/sonify its atoms
    Audio {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Evaluate the closed-form bounds for one parameter set
    Theory {
        #[arg(long, short)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> ictkm::Result<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| ictkm::Error::invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Sweep { config } => {
            let mut config: SweepConfig = harness::load_config(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let summary = harness::run_compression_sweep(&config, &cli.output)?;
            for (family, ratio) in &summary.highest_passing {
                match ratio {
                    Some(r) => println!("{family}: highest passing ratio {r}"),
                    None => println!("{family}: no ratio passed"),
                }
            }
        }
        Command::Curve { config } => {
            let mut config: CurveConfig = harness::load_config(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let rows = harness::run_recovery_curve(&config, &cli.output)?;
            println!("wrote {} curve rows to {}", rows.len(), cli.output.display());
        }
        Command::Scale { config } => {
            let mut config: ScaleConfig = harness::load_config(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let rows = harness::run_scalability(&config, &cli.output)?;
            for row in &rows {
                println!(
                    "d={} {}@{}: {:.2}s over {} iterations (target {})",
                    row.signal_dim,
                    row.family,
                    row.ratio,
                    row.secs_to_target,
                    row.iterations_run,
                    if row.reached_target { "reached" } else { "missed" }
                );
            }
        }
        Command::Audio { config } => {
            let mut config: AudioConfig = harness::load_config(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let out = run_audio(&config, &cli.output)?;
            println!(
                "learned {} atoms from {} blocks ({} dropped); outputs in {}",
                out.dictionary.n_atoms(),
                out.reports.len(),
                out.corpus.dropped_blocks,
                cli.output.display()
            );
        }
        Command::Theory { config } => {
            let config: TheoryConfig = harness::load_config(&config)?;
            let out = harness::run_theory(&config)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&out)
                    .map_err(|e| ictkm::Error::invalid(e.to_string()))?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
