use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "wcam", version, about = "Wavelet-domain attribution maps for black-box image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a wavelet attribution map and its spatial projection.
    Attribute(RunArgs),
    /// Deletion, insertion and μ-fidelity of an attribution map.
    Metrics(MetricsArgs),
    /// Per-subband scale embedding and frequency curve.
    Embed(EmbedArgs),
    /// Top-k reconstructions and the minimal sufficient image.
    Reconstruct(ReconstructArgs),
    /// Embedding distances across images against a seed-noise baseline.
    Consistency(ConsistencyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Input image (PNG or JPEG).
    #[arg(long)]
    pub image: PathBuf,
    /// URL, synthetic:<model> or subprocess:<command>.
    #[arg(long, env = "WCAM_SCORER_URL")]
    pub scorer: String,
    /// Target class.
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    /// Mask grid side g.
    #[arg(long, default_value_t = 28)]
    pub grid: usize,
    /// Number of design points N.
    #[arg(long, default_value_t = 8)]
    pub designs: usize,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    /// haar or db4.
    #[arg(long, default_value = "haar")]
    pub wavelet: String,
    /// sobol, halton, lhs or mc.
    #[arg(long, default_value = "sobol")]
    pub sampler: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images per scorer call.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// probability or logit.
    #[arg(long, default_value = "probability")]
    pub score_kind: String,
    /// Side the image is resized to (bilinear); 0 keeps the original size.
    #[arg(long, default_value_t = 224)]
    pub size: u32,
    /// Output directory.
    #[arg(long, default_value = "wcam-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Read the map from a wcam.csv instead of estimating it.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Curve steps T; defaults to one step per cell.
    #[arg(long)]
    pub steps: Option<usize>,
    /// μ-fidelity subset size; defaults to an eighth of the cells.
    #[arg(long)]
    pub subset_size: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub subsets: usize,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// raw (sum per subband) or mean (mean per cell).
    #[arg(long, default_value = "raw")]
    pub norm: String,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Comma-separated numbers of kept cells.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 8, 32])]
    pub k: Vec<usize>,
    /// Skip the minimal-image search.
    #[arg(long)]
    pub no_minimal: bool,
}

#[derive(Args, Debug)]
pub struct ConsistencyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Further images; image i uses seed + i.
    #[arg(long = "with", num_args = 1..)]
    pub with: Vec<PathBuf>,
    #[arg(long, default_value = "raw")]
    pub norm: String,
    /// Seeded repeats on the first image for the noise baseline.
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Scorer(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Scorer(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Scorer(m) => write!(f, "scorer error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<wcam_core::Error> for CliError {
    fn from(e: wcam_core::Error) -> Self {
        match e {
            wcam_core::Error::Scorer(s) => CliError::Scorer(s.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Attribute(a) => commands::attribute(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Consistency(a) => commands::consistency(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wcam: {e}");
            ExitCode::from(e.code())
        }
    }
}
