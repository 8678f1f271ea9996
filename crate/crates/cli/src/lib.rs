//! The `dressup` command-line driver.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use commands::{load_model, parse_order};

/// Exit status for bad input: unknown flags, missing files, invalid values.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for failures while doing the work.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dressup",
    version,
    about = "Layered virtual try-on on a toy dataset"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a toy dataset of pose pairs with a manifest.
    Dataset(DatasetArgs),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Score a model on a dataset split, or the SSIM between two images.
    Eval(EvalArgs),
    /// Dress a person in their own and donor garments in a given order.
    Tryon(TryonArgs),
    /// Apply one tweak to a session snapshot, or fit an attribute direction.
    Tweak(TweakArgs),
    /// Run the session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Number of pose pairs.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives manifest.json and samples/.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's step count.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Overrides the config's dataset path.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score; without one an untrained model seeded by --seed is scored.
    #[arg(long, conflicts_with_all = ["image", "reference"])]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory (or its manifest.json).
    #[arg(long, required_unless_present = "image", conflicts_with_all = ["image", "reference"])]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Image to compare against --reference; prints their SSIM.
    #[arg(long, requires = "reference")]
    pub image: Option<PathBuf>,
    #[arg(long, requires = "image")]
    pub reference: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TryonArgs {
    /// Person image, 64x64 RGB PNG.
    #[arg(long)]
    pub person: PathBuf,
    /// Person keypoints JSON.
    #[arg(long)]
    pub pose: PathBuf,
    /// Person label PNG.
    #[arg(long)]
    pub seg: PathBuf,
    /// Donor image supplying the garment for --label.
    #[arg(long, requires_all = ["garment_seg", "label"])]
    pub garment: Option<PathBuf>,
    #[arg(long, requires = "garment")]
    pub garment_seg: Option<PathBuf>,
    /// Donor keypoints; without them the donor is assumed aligned with the person.
    #[arg(long, requires = "garment")]
    pub garment_pose: Option<PathBuf>,
    /// Label of the donor garment; it takes that label's slot in --order.
    #[arg(long, requires = "garment")]
    pub label: Option<u8>,
    /// Garment labels, bottom layer first.
    #[arg(long, default_value = "4,3,2")]
    pub order: String,
    /// Read keypoints as an external pose estimator document.
    #[arg(long)]
    pub external_pose: bool,
    /// Visibility threshold for external keypoint confidences.
    #[arg(long, default_value_t = dressup_core::preprocessing::DEFAULT_CONFIDENCE_THRESHOLD)]
    pub confidence_threshold: f64,
    /// JSON object mapping external parse ids to labels 0..4; remaps both label PNGs.
    #[arg(long)]
    pub label_map: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TweakArgs {
    /// Session snapshot: a session.json or the session directory holding it.
    #[arg(long, required_unless_present = "fit", conflicts_with = "fit")]
    pub session: Option<PathBuf>,
    /// Tweak as a JSON string or the path of a JSON file.
    #[arg(long, required_unless_present = "fit", conflicts_with = "fit")]
    pub tweak: Option<String>,
    /// Swap out the last tweak of the same kind on the same garment instead of appending.
    #[arg(long, conflicts_with = "fit")]
    pub replace: bool,
    /// Write the updated snapshot here.
    #[arg(long, conflicts_with = "fit")]
    pub save: Option<PathBuf>,
    /// Directory of fitted directions; defaults to directions/ beside the checkpoint.
    #[arg(long, conflicts_with = "fit")]
    pub directions: Option<PathBuf>,
    /// Fit a direction for this attribute on the dataset's train split.
    #[arg(long, requires = "dataset")]
    pub fit: Option<String>,
    #[arg(long, requires = "fit")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rendered PNG, or the direction JSON with --fit.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint; defaults to MODEL_PATH.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Session directory; defaults to SESSION_DIR, then ./sessions.
    #[arg(long)]
    pub session_dir: Option<PathBuf>,
    /// Defaults to PORT, then 8080.
    #[arg(long)]
    pub port: Option<u16>,
    /// Serve an untrained model with this seed when no checkpoint is configured.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// A failure with its exit status.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<dressup_core::Error> for CliError {
    fn from(e: dressup_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<dressup_service::ApiError> for CliError {
    fn from(e: dressup_service::ApiError) -> Self {
        let msg = match &e.field {
            Some(f) => format!("{}: {}", f, e.message),
            None => e.message.clone(),
        };
        if (400..500).contains(&e.status) {
            CliError::Validation(msg)
        } else {
            CliError::Runtime(msg)
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the exit status.
/// Errors go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_VALIDATION,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Dataset(a) => commands::dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Tryon(a) => commands::tryon(a),
        Command::Tweak(a) => commands::tweak(a),
        Command::Serve(a) => commands::serve(a),
    }
}
