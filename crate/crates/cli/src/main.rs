use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;

#[derive(Parser)]
#[command(name = "homeloc", version, about = "RSSI fingerprinting for indoor positioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
pub struct IngestArgs {
    /// Flat config whose data files are loaded (recorded mode).
    #[arg(long)]
    pub flat: Option<PathBuf>,
    /// Store directory; records are appended to its session log.
    #[arg(long)]
    pub out: PathBuf,
    /// Subscribe to a bus instead of reading files.
    #[arg(long, requires = "bus")]
    pub live: bool,
    /// Bus URI, e.g. mqtt://localhost:1883.
    #[arg(long)]
    pub bus: Option<String>,
    /// Keep sender epochs instead of stamping with the local clock.
    #[arg(long)]
    pub recorded_timestamps: bool,
    /// Stop live ingestion after this many seconds (default: until Ctrl-C).
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Print the ingest report.
    #[arg(long)]
    pub stats: bool,
    /// Abort on the first malformed line.
    #[arg(long)]
    pub strict: bool,
}

#[derive(clap::Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub flat: PathBuf,
    /// Total window span in seconds.
    #[arg(long, default_value_t = 12.0)]
    pub window: f64,
    /// Sub-window span in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub sub: f64,
    /// `past` or `past+future`.
    #[arg(long, default_value = "past+future")]
    pub mode: String,
    #[arg(long, default_value = "uwb")]
    pub tech: String,
    /// Override the number of sub-windows.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Spacing of the evaluation grid.
    #[arg(long, default_value_t = 1000)]
    pub step_ms: i64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Clone)]
pub struct TrainBudget {
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Trees in the random forest.
    #[arg(long)]
    pub trees: Option<usize>,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// cnn, lstm, cnn_lstm, cnn_lstm_attention, knn or rf.
    #[arg(long, default_value = "cnn_lstm")]
    pub model: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Predict the room instead of coordinates.
    #[arg(long)]
    pub rooms: bool,
    /// Use one sigmoid per room with binary cross-entropy.
    #[arg(long, requires = "rooms")]
    pub binary_rooms: bool,
    /// Feed the missing-cell mask as extra channels.
    #[arg(long)]
    pub mask_channels: bool,
    /// Neighbours for kNN.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub budget: TrainBudget,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub flat: PathBuf,
    #[arg(long, default_value = "uwb")]
    pub tech: String,
    /// `default` or `quick`.
    #[arg(long, default_value = "default")]
    pub matrix: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Override the number of folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma separated subset of models.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Keep contiguous runs of samples together in folds.
    #[arg(long)]
    pub grouped: bool,
    #[command(flatten)]
    pub budget: TrainBudget,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for MAE-vs-window data series.
    #[arg(long)]
    pub emit_plots: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct ScoreExternalArgs {
    #[arg(long)]
    pub estimates: PathBuf,
    /// Label file in the recorded label format.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub flat: PathBuf,
    /// Name used for the system in the report row.
    #[arg(long, default_value = "external")]
    pub system: String,
    #[arg(long, default_value_t = homeloc_core::segmentation::DEFAULT_MAX_GAP_MS)]
    pub max_gap_ms: i64,
    /// Also write the score as a report row.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub flat: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bus: Option<String>,
    /// Address to bind; `:8080` binds every interface.
    #[arg(long, default_value = ":8080")]
    pub listen: String,
    /// Emit positions one lookahead late so future-reaching windows work live.
    #[arg(long)]
    pub delayed: bool,
    /// Where session logs are kept.
    #[arg(long, default_value = "homeloc-data")]
    pub data_dir: PathBuf,
}

#[derive(clap::Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub flat: PathBuf,
    /// Restrict to one technology.
    #[arg(long)]
    pub tech: Option<String>,
}

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Directory that receives the data files and flat.toml.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1800.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 2.0)]
    pub noise_db: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Load recorded files or a live bus into a session log.
    Ingest(IngestArgs),
    /// Build a training set file from a flat's recordings.
    Segment(SegmentArgs),
    /// Train one model on a training set file.
    Train(TrainArgs),
    /// Run a model over a training set file.
    Predict(PredictArgs),
    /// Cross-validate the experiment matrix on one flat.
    Eval(EvalArgs),
    /// Score an external system's position estimates against labels.
    ScoreExternal(ScoreExternalArgs),
    /// Run the live tracking service.
    Serve(ServeArgs),
    /// Describe a flat's recordings.
    Summarize(SummarizeArgs),
    /// Generate a synthetic flat with a random-walk track.
    Synth(SynthArgs),
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Segment(a) => commands::segment(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::ScoreExternal(a) => commands::score_external(a),
        Command::Serve(a) => commands::serve(a),
        Command::Summarize(a) => commands::summarize(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
