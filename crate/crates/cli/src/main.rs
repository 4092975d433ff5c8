mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "groundtrack", version, about = "Describe, ground, track and evaluate object instances")]
pub struct Cli {
    /// Pipeline config (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mock fixture directory; overrides the configured services.
    #[arg(long, global = true)]
    pub mocks: Option<PathBuf>,
    /// Over-detect factor (>= 1).
    #[arg(long, global = true)]
    pub odf: Option<f64>,
    /// Validate groundings with the chat model.
    #[arg(long, global = true)]
    pub validate: bool,
    /// Task text for decoupled attribution.
    #[arg(long, global = true)]
    pub task: Option<String>,
    #[arg(long, global = true)]
    pub max_concurrency: Option<usize>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Omit wall-clock fields so repeated runs produce identical files.
    #[arg(long, global = true)]
    pub stable_output: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Structured description of one image.
    Describe { image: PathBuf },
    /// Ground a description in an image.
    Ground {
        image: PathBuf,
        /// Description JSON written by `describe`, or a bare instance list.
        #[arg(long)]
        description: PathBuf,
        /// Also write grounding.png.
        #[arg(long)]
        overlay: bool,
    },
    /// Track instances through a directory of frames (sorted by name).
    Track {
        input: PathBuf,
        /// Re-run the update every k frames.
        #[arg(long)]
        update_interval: Option<u64>,
        /// Update once whenever this file exists; it is removed afterwards.
        #[arg(long)]
        trigger: Option<PathBuf>,
        /// Also write overlays/frame_NNNN.png.
        #[arg(long)]
        overlay: bool,
    },
    /// Benchmark on a detection dataset.
    Eval {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Coco)]
        format: Format,
        /// Skip the augmented classes for COCO-format datasets.
        #[arg(long)]
        no_augmented: bool,
        /// Report P/R over all detections instead of at the best-F1 threshold.
        #[arg(long)]
        no_sweep: bool,
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Host the mock services on one port.
    ServeMocks {
        fixtures: PathBuf,
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write a seeded synthetic dataset or frame sequence with fixtures.
    Synth {
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SynthKind::Corpus)]
        kind: SynthKind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Images (corpus) or frames (sequence).
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Share of classes with detector confusions.
        #[arg(long, default_value_t = 0.0)]
        confusion_rate: f64,
        /// Share of classes the mock validator answers `invalid` for.
        #[arg(long, default_value_t = 0.0)]
        miss_rate: f64,
        /// Moving objects (sequence).
        #[arg(long, default_value_t = 3)]
        movers: usize,
        /// Entry frame per mover (sequence), e.g. `0,0,0,12`.
        #[arg(long, value_delimiter = ',')]
        enter: Vec<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Coco,
    Custom,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SynthKind {
    Corpus,
    Sequence,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return report(CliError::Io(e.to_string())),
    };
    match runtime.block_on(commands::run(cli)) {
        Ok(()) => ExitCode::from(error::OK as u8),
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.code() as u8)
}
