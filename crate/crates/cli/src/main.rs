//! `keylearn`: build training sets, train, approximate, detect and evaluate.

mod commands;
mod config;
mod images;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status and message of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERICAL: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: Self::DATA,
            message: message.into(),
        }
    }
}

impl From<keylearn::Error> for Failure {
    fn from(e: keylearn::Error) -> Self {
        let code = match e {
            keylearn::Error::Numerical(_) => Self::NUMERICAL,
            _ => Self::DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn version_text() -> &'static str {
    static TEXT: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    TEXT.get_or_init(|| {
        format!(
            "{}\nmodel schema {}\ntrainset schema {}\nreport schema {}",
            env!("CARGO_PKG_VERSION"),
            keylearn::MODEL_SCHEMA_VERSION,
            keylearn::TRAINSET_SCHEMA_VERSION,
            keylearn::REPORT_SCHEMA_VERSION
        )
    })
}

#[derive(Parser, Debug)]
#[command(name = "keylearn", version = version_text(), about = "Learned keypoint detector toolkit")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic illumination stack.
    Synth(SynthArgs),
    /// Build a training-set archive from a scene directory.
    BuildTrainset(BuildArgs),
    /// Train a detector from an archive.
    Train(TrainArgs),
    /// Grid search over the loss weights.
    Cv(CvArgs),
    /// Add a separable approximation to a model.
    Approx(ApproxArgs),
    /// Detect keypoints in one image.
    Detect(DetectArgs),
    /// Repeatability over image sequences.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub images: Option<usize>,
    /// Images in `train/`; the others go to `test/`.
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Directory of co-registered images of one scene.
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-image `<id>.txt` candidate files (`x y scale response`); defaults
    /// to `<scene>/keypoints` when that directory exists.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub max_anchors: Option<usize>,
    #[arg(long)]
    pub min_support: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub archive: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines objective trace; defaults to `<out>.trace.jsonl`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub gamma_c: Option<f64>,
    #[arg(long)]
    pub gamma_s: Option<f64>,
    #[arg(long)]
    pub gamma_t: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub pca_dim: Option<usize>,
    /// Optimize in the full patch space.
    #[arg(long)]
    pub no_pca: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    pub train: PathBuf,
    pub validation: PathBuf,
    /// CSV table, one row per grid point.
    #[arg(long)]
    pub out: PathBuf,
    /// Use `points` log-spaced values in [lo, hi] for every weight.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub lo: f64,
    #[arg(long, default_value_t = 1e2)]
    pub hi: f64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ApproxArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dictionary size per channel.
    #[arg(long, short = 's')]
    pub size: Option<usize>,
    /// CSV of reconstruction error against dictionary size.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Sizes for the curve, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    pub model: PathBuf,
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the highest-scoring keypoints.
    #[arg(long, conflicts_with = "threshold")]
    pub budget: Option<usize>,
    /// Keep keypoints scoring above the value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Score with the model's separable approximation.
    #[arg(long)]
    pub separable: bool,
    #[arg(long)]
    pub radius: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// One sequence directory, or a directory of sequence directories.
    pub dataset: PathBuf,
    /// Output directory for `report.csv` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, group = "source")]
    pub model: Option<PathBuf>,
    /// Keypoint files `<id>.txt` (or `<sequence>/<id>.txt`).
    #[arg(long, group = "source")]
    pub keypoints: Option<PathBuf>,
    /// Uniform random keypoints (seeded).
    #[arg(long, group = "source")]
    pub random: bool,
    #[arg(long, requires = "model")]
    pub separable: bool,
    /// `standard`, `one_to_one` or `both`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Fixed keypoint budget.
    #[arg(long, conflicts_with = "rate")]
    pub budget: Option<usize>,
    /// Budget at which random keypoints reach this repeatability.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub threshold_px: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Score every image against this one (0-based) instead of all pairs.
    #[arg(long)]
    pub reference: Option<usize>,
    /// Read `H1to{k}p` ground truth instead of assuming aligned images.
    #[arg(long)]
    pub homographies: bool,
    /// Seed of the random detector.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub radius: Option<usize>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage(format!("--jobs: {e}")))?;
    }
    let cfg = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::BuildTrainset(a) => commands::build_trainset(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Cv(a) => commands::cv(cfg, a),
        Command::Approx(a) => commands::approx(cfg, a),
        Command::Detect(a) => commands::detect(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Failure::USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
