mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "motrack", version, about = "Motion-centric LiDAR single-object tracking")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML config file, or a preset name (`desk`, `paper`).
    #[arg(long, default_value = "desk")]
    pub config: String,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`, or `dataset` for generate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset root (overrides `dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Baseline {
    ZeroMotion,
    KalmanCv,
}

#[derive(Args, Clone)]
pub struct TrackerArgs {
    /// Trained model checkpoint.
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Classical tracker instead of a checkpoint.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with train/val/test splits.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on the train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint's epoch counter.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Track every test tracklet and export per-frame predictions.
    Track {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tracker: TrackerArgs,
    },
    /// Score predictions (or an in-process tracker) on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tracker: TrackerArgs,
        /// Prediction export written by `track`.
        #[arg(long, conflicts_with_all = ["checkpoint", "baseline"])]
        predictions: Option<PathBuf>,
        /// Distractor counts for the robustness sweep, e.g. `0,2,4`.
        #[arg(long, value_delimiter = ',')]
        distractor_sweep: Option<Vec<usize>>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let (name, result) = match cli.command {
        Command::Generate { common } => ("generate", commands::generate(&common)),
        Command::Train { common, resume } => ("train", commands::train(&common, resume.as_deref())),
        Command::Track { common, tracker } => ("track", commands::track(&common, &tracker)),
        Command::Eval {
            common,
            tracker,
            predictions,
            distractor_sweep,
        } => (
            "eval",
            commands::eval(&common, &tracker, predictions.as_deref(), distractor_sweep.as_deref()),
        ),
    };
    match result {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial(msg)) => {
            report_error(name, &msg, &[]);
            ExitCode::from(2)
        }
        Err(e) => {
            let chain: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            report_error(name, &e.to_string(), &chain);
            ExitCode::FAILURE
        }
    }
}

/// Human line, then one JSON object for scripts.
fn report_error(command: &str, message: &str, causes: &[String]) {
    eprintln!("error: {message}");
    for c in causes {
        eprintln!("  caused by: {c}");
    }
    let summary = serde_json::json!({ "command": command, "error": message, "causes": causes });
    eprintln!("{summary}");
}
