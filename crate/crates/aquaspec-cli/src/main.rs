//! `aquaspec` CLI: reproducible water-parameter regression runs driven by
//! a TOML config file. Exit codes: 0 success, 1 total failure, 2 config
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aquaspec::data::ParameterKind;
use config::Overrides;

#[derive(Parser)]
#[command(
    name = "aquaspec",
    version,
    about = "Estimate water parameters from hyperspectral reflectance spectra"
)]
struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed (required here or in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated models: knn,rf,svm,mars,xgb.
    #[arg(long, global = true)]
    models: Option<String>,

    /// Comma-separated preprocessing arms: raw,pca.
    #[arg(long, global = true)]
    arms: Option<String>,

    /// PCA components kept in the PCA arm.
    #[arg(long = "pca-k", global = true)]
    pca_k: Option<usize>,

    /// Write real per-cell wall times into report.csv (breaks byte-for-byte
    /// reproducibility of the report; timings always go to the manifest).
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as spectra + reference CSV files.
    Synth,
    /// Run the evaluation grid and write report.csv, SVG charts and a
    /// manifest.
    Run,
    /// Write per-parameter target histograms for the train/test subsets.
    Histogram,
    /// Print PCA variance ratios of one parameter's training subset.
    InspectPca {
        /// Parameter whose split is used.
        #[arg(long, default_value = "chlorophyll_a")]
        parameter: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    // AQUASPEC_THREADS caps cell-level parallelism.
    if let Ok(value) = std::env::var("AQUASPEC_THREADS") {
        match value.parse::<usize>() {
            Ok(threads) if threads > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
            _ => {
                eprintln!("config error: AQUASPEC_THREADS must be a positive integer, got {value:?}");
                return ExitCode::from(2);
            }
        }
    }

    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        models: cli.models.clone(),
        arms: cli.arms.clone(),
        pca_components: cli.pca_k,
        timing: cli.timing,
    };

    let run_config = match config::resolve(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    if matches!(cli.command, Command::Run)
        && (run_config.models.is_empty() || run_config.arms.is_empty())
    {
        eprintln!("config error: `run` needs at least one model and one arm");
        return ExitCode::from(2);
    }

    let result = match &cli.command {
        Command::Synth => commands::cmd_synth(&run_config),
        Command::Run => commands::cmd_run(&run_config),
        Command::Histogram => commands::cmd_histogram(&run_config),
        Command::InspectPca { parameter } => match ParameterKind::from_key(parameter) {
            Some(kind) => commands::cmd_inspect_pca(&run_config, kind),
            None => {
                eprintln!("config error: unknown parameter {parameter:?}");
                return ExitCode::from(2);
            }
        },
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
