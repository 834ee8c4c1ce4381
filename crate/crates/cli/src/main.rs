//! `evalbench` command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.
//! Results go to stdout (or `--out`), diagnostics to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evalbench_core::corpus::InputFormat;
use evalbench_core::results::Format;
use evalbench_core::stimuli::{AssignMode, System, Task};

#[derive(Parser)]
#[command(name = "evalbench", version, about = "Text generator evaluation workbench")]
pub struct Cli {
    /// Run configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; each stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct CorpusIn {
    /// Corpus file or directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "conllu")]
    input_format: InputFormat,
}

#[derive(Subcommand)]
pub enum Command {
    /// Linguistic profile of a corpus as JSON.
    Profile {
        #[command(flatten)]
        corpus: CorpusIn,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Side-by-side comparison of two corpora or saved profiles.
    Compare {
        /// Corpus path, or a profile written by `profile` (.json).
        #[arg(long, required_unless_present = "reference")]
        a: Option<PathBuf>,
        #[arg(long, required_unless_present = "reference")]
        b: Option<PathBuf>,
        #[arg(long, default_value = "conllu")]
        input_format: InputFormat,
        #[arg(long, default_value = "original")]
        label_a: String,
        #[arg(long, default_value = "generated")]
        label_b: String,
        #[arg(long, default_value = "text")]
        format: Format,
        /// Print the published reference comparison instead.
        #[arg(long)]
        reference: bool,
    },
    /// Build a token frequency dictionary (TSV).
    Freqdict {
        #[command(flatten)]
        corpus: CorpusIn,
        #[arg(long)]
        lowercase: bool,
        /// Leave punctuation out of the dictionary.
        #[arg(long)]
        no_punct: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Share of corpus tokens among the most frequent dictionary types.
    Hitrate {
        #[arg(long)]
        dict: PathBuf,
        #[command(flatten)]
        corpus: CorpusIn,
        #[arg(long)]
        permille: Option<u32>,
    },
    /// Train a Markov chain model (JSON lines).
    MarkovTrain {
        #[command(flatten)]
        corpus: CorpusIn,
        #[arg(long)]
        state_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample sentences, one per line.
    MarkovGenerate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 50)]
        max_tokens: usize,
    },
    /// Complete every prompt at both prompt lengths.
    MarkovContinue {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        /// System label written on the completions.
        #[arg(long, default_value = "baseline")]
        system: System,
        /// Redraws before padding a walk that ended early.
        #[arg(long, default_value_t = 100)]
        attempts: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perplexity from per-token log-probabilities.
    PplLogprobs {
        /// JSON lines: a header line, then one record per token.
        #[arg(long = "in", required_unless_present = "reference")]
        input: Option<PathBuf>,
        /// TSV of `doc_id<TAB>domain`.
        #[arg(long)]
        domains: Option<PathBuf>,
        /// Comma-separated domains listed first.
        #[arg(long, value_delimiter = ',')]
        first: Vec<String>,
        #[arg(long, default_value = "text")]
        format: Format,
        /// Print the published reference table instead.
        #[arg(long)]
        reference: bool,
    },
    /// Perplexity of a Markov model over a corpus.
    PplMarkov {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        corpus: CorpusIn,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        first: Vec<String>,
        #[arg(long, default_value = "text")]
        format: Format,
    },
    /// Sample prompt sentences from a corpus.
    Prompts {
        #[command(flatten)]
        corpus: CorpusIn,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the blinded stimulus set.
    Stimuli {
        #[arg(long)]
        prompts: PathBuf,
        /// Completion files (JSON lines); repeatable.
        #[arg(long, required = true)]
        completions: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write session plans for a task.
    Assign {
        #[arg(long)]
        stimuli: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long)]
        subjects: usize,
        /// Subject id prefix; defaults to `r` (ranking) or `c` (classification).
        #[arg(long)]
        prefix: Option<String>,
        #[arg(long)]
        mode: Option<AssignMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the annotation service.
    Serve {
        #[arg(long)]
        stimuli: PathBuf,
        /// Plan files; repeatable.
        #[arg(long, required = true)]
        plans: Vec<PathBuf>,
        /// Append-only judgment log.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Static UI bundle served at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Percentage tables from exported judgments.
    Aggregate {
        #[arg(long = "in", required_unless_present = "reference")]
        input: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: Format,
        /// Also write per-system distributions (CSV) here.
        #[arg(long)]
        figures: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the published reference tables instead.
        #[arg(long)]
        reference: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Profile { .. } => "profile",
            Command::Compare { .. } => "compare",
            Command::Freqdict { .. } => "freqdict",
            Command::Hitrate { .. } => "hitrate",
            Command::MarkovTrain { .. } => "markov-train",
            Command::MarkovGenerate { .. } => "markov-generate",
            Command::MarkovContinue { .. } => "markov-continue",
            Command::PplLogprobs { .. } => "ppl-logprobs",
            Command::PplMarkov { .. } => "ppl-markov",
            Command::Prompts { .. } => "prompts",
            Command::Stimuli { .. } => "stimuli",
            Command::Assign { .. } => "assign",
            Command::Serve { .. } => "serve",
            Command::Aggregate { .. } => "aggregate",
        }
    }
}

/// Errors in how the tool was invoked, as opposed to bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| {
        let level = if matches!(cli.command, Command::Serve { .. }) {
            "info"
        } else {
            "warn"
        };
        tracing_subscriber::EnvFilter::new(level)
    });
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
