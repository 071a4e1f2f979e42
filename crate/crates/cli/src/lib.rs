//! `tryon` command: every pipeline stage driven from a config file plus
//! long-form flags. Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric
//! failure.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tryon_core::encoder::EncoderLossMode;
use tryon_core::schema::RendererId;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(tryon_core::Error),
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<tryon_core::Error> for CliError {
    fn from(e: tryon_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tryon", version, about = "Inverse-graphics virtual try-on pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by most subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub renderer: Option<RendererId>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hair swatch PNG; the built-in swatch when absent.
    #[arg(long)]
    pub swatch: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes procedural portraits as scene directories.
    GenScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Draws graphics vectors from the preset-fitted sampler.
    SampleParams {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        presets: Option<PathBuf>,
        #[arg(long)]
        uniform_mix: Option<f64>,
    },
    /// Renders a parameter file on one portrait.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        lip_mask: Option<PathBuf>,
        #[arg(long)]
        hair_mask: Option<PathBuf>,
        #[arg(long)]
        params: PathBuf,
    },
    /// Samples, renders and writes a training dataset.
    MakeDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        presets: Option<PathBuf>,
        #[arg(long)]
        uniform_mix: Option<f64>,
    },
    /// Trains the imitator on a dataset.
    TrainImitator {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        lambda2: Option<f32>,
    },
    /// Trains the encoder on a dataset.
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        imitator: Option<PathBuf>,
        /// Encoder checkpoint to continue from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EncoderLossMode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        lambda3: Option<f32>,
    },
    /// Estimates renderer parameters from reference portraits.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Reference portrait; repeat for a per-parameter median.
        #[arg(long, required = true)]
        reference: Vec<PathBuf>,
        /// Lip masks aligned with the references.
        #[arg(long)]
        lip_mask: Vec<PathBuf>,
        /// Hair masks aligned with the references.
        #[arg(long)]
        hair_mask: Vec<PathBuf>,
    },
    /// Transfer experiment for one encoder.
    EvalTransfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        presets: Option<PathBuf>,
    },
    /// Transfer experiment over several encoders, as a table.
    EvalAblation {
        #[command(flatten)]
        common: Common,
        /// `name=checkpoint_dir`, in table order.
        #[arg(long, value_parser = parse_condition)]
        condition: Vec<config::Condition>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        presets: Option<PathBuf>,
    },
    /// Per-parameter correlation of renderer and imitator responses.
    SensCorr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        imitator: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        probes: Option<usize>,
    },
    /// Local HTTP API and studio page.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Encoder checkpoint to load; repeat for several renderers.
        #[arg(long)]
        encoder: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<EncoderLossMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode {s:?}; expected graphics_only, rendering_only or both"))
}

fn parse_condition(s: &str) -> Result<config::Condition, String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected name=dir, got {s:?}"))?;
    Ok(config::Condition {
        name: name.to_string(),
        encoder: PathBuf::from(dir),
    })
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
