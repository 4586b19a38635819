mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Product-title tagger trained jointly on tagging and title/description triplets.
#[derive(Debug, Parser)]
#[command(name = "triplet-tagger", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic catalog as JSON lines.
    GenData {
        /// Generator seed (falls back to $TRIPLET_TAGGER_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of items.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the titles as CoNLL.
        #[arg(long)]
        conll: Option<PathBuf>,
    },
    /// Train a model from a run config.
    ///
    /// Trailing `--section.key=value` arguments override config entries,
    /// e.g. `--train.lr=0.0005 --train.mode=baseline`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training seed; wins over the config and $TRIPLET_TAGGER_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; wins over `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Score title tagging on a labelled file (JSON lines or .conll).
    Eval {
        /// Model to tag with.
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Score an existing CoNLL prediction file instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Gold data.
        #[arg(long)]
        data: PathBuf,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Row name in the report.
        #[arg(long)]
        name: Option<String>,
        /// Write the model's predictions as CoNLL.
        #[arg(long)]
        write_predictions: Option<PathBuf>,
        /// Entity types of the gold data when no checkpoint is given.
        #[arg(long, value_delimiter = ',', default_value = "ITEM,BRAND,ATTR")]
        entity_types: Vec<String>,
    },
    /// Print a results table from JSON reports.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the rows as a JSON array.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Finite-difference check of every backward rule and loss.
    GradCheck {
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Tag raw titles, one per line, and print CoNLL.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input file; stdin when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or config: exit 1.
    Usage(String),
    /// Bad data, I/O or a broken contract: exit 2.
    Data(String),
    /// Non-finite values or failed gradient checks: exit 3.
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<triplet_tagger::Error> for CliError {
    fn from(e: triplet_tagger::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData { seed, n, out, conll } => commands::gen_data(seed, n, &out, conll.as_deref()),
        Command::Train {
            config,
            seed,
            out,
            overrides,
        } => commands::train(&config, seed, out, &overrides),
        Command::Eval {
            checkpoint,
            predictions,
            data,
            out,
            name,
            write_predictions,
            entity_types,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            predictions,
            data,
            out,
            name,
            write_predictions,
            entity_types,
        }),
        Command::Compare { reports, json } => commands::compare(&reports, json.as_deref()),
        Command::GradCheck { corrupt } => commands::grad_check(corrupt.as_deref()),
        Command::Predict { checkpoint, input, out } => commands::predict(&checkpoint, input.as_deref(), out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
