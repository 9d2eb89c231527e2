//! Command-line front end: validate configs, execute seeded runs, analyze
//! finished runs and export replay views.
//!
//! Exit codes are a stable contract: 0 success, 1 domain validation or
//! analysis failure, 2 I/O failure. Commands never mutate their inputs;
//! every run writes into a fresh directory under `--out`.

mod cmd_analyze;
mod cmd_export;
mod cmd_run;
mod cmd_validate;
mod common;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use cmd_analyze::AnalyzeArgs;
use cmd_export::{ExportArgs, ExportFormat};
use cmd_run::RunArgs;
use common::Failure;

#[derive(Parser)]
#[command(
    name = "stylesim",
    version,
    about = "Deterministic traffic simulation with perception-mediated driving styles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and its map without running anything.
    Validate {
        /// Scenario JSON path.
        config: PathBuf,
        /// Dotted-path overrides applied before validation, e.g.
        /// `schedule.l3_rate_hz=0.1` or the shorthand `l3_rate=0.1`.
        #[arg(long = "override", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
    },
    /// Run a scenario and write config, log, metrics and manifest.
    Run {
        /// Scenario JSON path.
        config: PathBuf,
        /// Run seed; defaults to the scenario's `default_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-path overrides, e.g. `max_steps=500`.
        #[arg(long = "override", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
        /// Translate descriptions through an external provider
        /// (`STYLESIM_PROVIDER_ENDPOINT`, `_MODEL`, `_KEY`) instead of the
        /// builtin catalog.
        #[arg(long, value_enum, default_value_t = Toggle::Off)]
        provider: Toggle,
        /// Output directory; each run creates a subdirectory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Number of independent runs with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        batch: u64,
        /// Decide on objective views (style scripts still run and log).
        #[arg(long)]
        bypass_pmbi: bool,
    },
    /// Compare styles across finished runs: features, Wasserstein, k-NN.
    Analyze {
        /// Manifest paths of the runs to pool.
        manifests: Vec<PathBuf>,
        /// Output directory for CSV and report files.
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
        /// Feature window length in steps.
        #[arg(long, default_value_t = 400)]
        window: usize,
        /// Window stride in steps.
        #[arg(long, default_value_t = 200)]
        stride: usize,
        /// Neighbours for the separability classifier.
        #[arg(long, default_value_t = 5)]
        knn: usize,
    },
    /// Reconstruct objective/subjective view pairs from a run's log.
    ExportReplay {
        /// Manifest path of the run to export from.
        manifest: PathBuf,
        /// Agent to export; defaults to the scenario's ego, then the first
        /// configured agent.
        #[arg(long)]
        agent: Option<String>,
        /// First step (inclusive); defaults to 0.
        #[arg(long)]
        from: Option<u64>,
        /// Last step (inclusive); defaults to the final step.
        #[arg(long)]
        to: Option<u64>,
        #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
        format: FormatArg,
        /// Output directory.
        #[arg(long, default_value = "replay")]
        out: PathBuf,
        /// Raster resolution for `--format pgm`.
        #[arg(long, default_value_t = 2.0)]
        pixels_per_meter: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
    Pgm,
}

fn parse_override(raw: &str) -> Result<(String, String), String> {
    match raw.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected key=value, got '{raw}'")),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { config, overrides } => cmd_validate::cmd_validate(&config, &overrides),
        Command::Run {
            config,
            seed,
            overrides,
            provider,
            out,
            batch,
            bypass_pmbi,
        } => cmd_run::cmd_run(&RunArgs {
            config,
            overrides,
            seed,
            provider: provider == Toggle::On,
            out,
            batch,
            bypass_pmbi,
        }),
        Command::Analyze {
            manifests,
            out,
            window,
            stride,
            knn,
        } => cmd_analyze::cmd_analyze(&AnalyzeArgs {
            manifests,
            out,
            window,
            stride,
            knn_k: knn,
        }),
        Command::ExportReplay {
            manifest,
            agent,
            from,
            to,
            format,
            out,
            pixels_per_meter,
        } => cmd_export::cmd_export_replay(&ExportArgs {
            manifest,
            agent,
            from,
            to,
            format: match format {
                FormatArg::Jsonl => ExportFormat::Jsonl,
                FormatArg::Csv => ExportFormat::Csv,
                FormatArg::Pgm => ExportFormat::Pgm,
            },
            out,
            pixels_per_meter,
        }),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = dispatch(cli) {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.code());
    }
}
