//! `dope`: score attention heads, denoise positional encodings in QKDP dumps,
//! and check the coherent-band spectral bounds on synthetic ensembles.

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dope_core::dope::SortOrder;
use dope_core::rope::{Indicator, Stage};
use dope_core::spectral::EntropyType;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_VIOLATION: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    pub fn violation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VIOLATION, message: message.into() }
    }
}

impl From<dope_core::Error> for CliError {
    fn from(e: dope_core::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(name = "dope", version, about = "Entropy-guided positional-encoding denoising toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ManifestArg {
    /// Manifest path (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Score every head of one stage and indicator.
    Score {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        indicator: Indicator,
        #[arg(long)]
        stage: Stage,
        /// `full` or `trunc:R` with R in {1, 4, 8, 16, 32, 64}.
        #[arg(long, default_value = "full")]
        entropy: EntropyType,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Pick heads from a score report.
    Select {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "ASC")]
        order: SortOrder,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Denoise a dump with a config file or a named preset.
    Apply {
        #[arg(long)]
        dump: PathBuf,
        #[command(flatten)]
        config: ConfigSource,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Write a synthetic dump with optional sink heads.
    Simulate {
        /// JSON synthetic-dump spec; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "d-h")]
        d_h: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sink head as `LAYER:HEAD`; repeatable. Replaces the spec's list.
        #[arg(long = "sink", value_parser = commands::parse_head_ref)]
        sinks: Vec<dope_core::dope::HeadRef>,
        /// Store values as f32 instead of f64.
        #[arg(long)]
        f32: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Check every spectral lower bound over a sweep of cone ensembles.
    VerifyBounds {
        /// JSON sweep spec (default: the full 1000-ensemble sweep).
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Measure λ_max and σ₁ growth with sequence length.
    Scaling {
        /// JSON cone-ensemble template (its `n` is ignored).
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![256, 512, 1024, 2048, 4096, 8192])]
        ns: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-N table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Per-head sink score and attention entropy, before and after denoising.
    SinkReport {
        #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
        dump: Option<PathBuf>,
        /// Build a synthetic dump, optionally from a JSON spec.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        synth: Option<String>,
        #[command(flatten)]
        config: OptionalConfig,
        /// Also report metrics after denoising.
        #[arg(long)]
        before_after: bool,
        /// Sink columns; defaults to the first position.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0usize])]
        target: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
pub struct ConfigSource {
    /// DoPE config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset, e.g. `table1-best-gaussian`.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Args, Clone)]
#[group(required = false, multiple = false)]
pub struct OptionalConfig {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("QKDP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t >= 1)
        .ok_or_else(|| CliError::usage(format!("QKDP_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Score { dump, indicator, stage, entropy, out, manifest } => {
            commands::score(&dump, indicator, stage, entropy, &out, manifest.manifest.as_deref())
        }
        Command::Select { report, k, order, out, manifest } => {
            commands::select(&report, k, order, &out, manifest.manifest.as_deref())
        }
        Command::Apply { dump, config, out, plan, manifest } => commands::apply(
            &dump,
            config.config.as_deref(),
            config.preset.as_deref(),
            &out,
            &plan,
            manifest.manifest.as_deref(),
        ),
        Command::Simulate { spec, layers, heads, n, d_h, seed, sinks, f32, out, manifest } => {
            let overrides = commands::SimOverrides { layers, heads, n, d_h, seed, sinks, f32 };
            commands::simulate(spec.as_deref(), overrides, &out, manifest.manifest.as_deref())
        }
        Command::VerifyBounds { sweep, out, manifest } => {
            commands::verify_bounds(sweep.as_deref(), &out, manifest.manifest.as_deref())
        }
        Command::Scaling { template, ns, out, csv, manifest } => {
            commands::scaling(template.as_deref(), &ns, &out, csv.as_deref(), manifest.manifest.as_deref())
        }
        Command::SinkReport { dump, synth, config, before_after, target, out, manifest } => commands::sink_report(
            commands::SinkInput { dump, synth },
            config.config.as_deref(),
            config.preset.as_deref(),
            before_after,
            &target,
            &out,
            manifest.manifest.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
