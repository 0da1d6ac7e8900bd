//! `hetnid` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetnid::pipeline::Stage;

#[derive(Parser, Debug)]
#[command(name = "hetnid", version, about = "Heterogeneous-graph network intrusion detection")]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArg {
    /// Pipeline TOML file; its sections supply stage settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic captures for the four built-in traffic archetypes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 260)]
        flows_per_class: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Parse captures and assemble bounded bidirectional flows.
    Extract {
        /// Capture files or directories.
        #[arg(long, required = true, num_args = 1..)]
        captures: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Add rolling per-destination features to extracted flows.
    Featurize {
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Window length in seconds.
        #[arg(long)]
        window_s: Option<f64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Label by capture and MAC address, hold out a test set and balance training.
    PrepareDataset {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        test_cap: Option<usize>,
        #[arg(long)]
        train_target: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Turn featurized flows into a graph corpus.
    BuildGraphs {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the classifier on a graph corpus.
    Train {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Predict a class for every graph in a corpus.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics and confusion matrix for labeled predictions.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Attribute one graph's prediction and query the language model.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        /// Flow id of the graph to explain.
        #[arg(long)]
        graph: String,
        #[arg(long)]
        steps: Option<usize>,
        /// Chat-completions base URL; omit for offline mode.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        llm_model: Option<String>,
        /// Directory for the JSON and Markdown report; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Run every stage, skipping those whose inputs and settings are unchanged.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
        /// Stop after this stage.
        #[arg(long)]
        until: Option<Stage>,
    },
    /// Print a pipeline config with every setting at its default.
    InitConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
