use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmtrans::corpus::Limits;
use mmtrans::model::Mode;
use mmtrans_cli::commands::{self, BuildCorpusArgs, EvaluateArgs, Show, SplitName, SummarizeArgs, TrainArgs};
use mmtrans_cli::config::Precision;
use mmtrans_cli::CliResult;

#[derive(Parser)]
#[command(name = "mmtrans", version, about = "Multi-modal transformer summaries for Solidity methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShowArg {
    Sbt,
    Graph,
    Code,
}

#[derive(Subcommand)]
enum Command {
    /// Parse .sol files into <method, comment> pairs and write a dataset.
    BuildCorpus {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split seed; defaults to MMTRANS_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 600)]
        max_sbt: usize,
        #[arg(long, default_value_t = 200)]
        max_nodes: usize,
        #[arg(long, default_value_t = 600)]
        max_code: usize,
        #[arg(long, default_value_t = 20)]
        max_comment: usize,
    },
    /// Train a model; flags override the config file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// mmtrans, i-mmtrans or code-only.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        /// Continue from last.ckpt in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy-decode a split and report the four metrics.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Where to write predictions (default: beside the checkpoint).
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: PrecisionArg,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value_t = 20)]
        max_decode: usize,
    },
    /// Score a predictions file against references, line by line.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Print the generated comment for one method.
    Summarize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sol: PathBuf,
        /// Method name, optionally qualified as Contract.method.
        #[arg(long)]
        method: String,
        /// Vocabulary directory (default: the checkpoint's directory).
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: PrecisionArg,
        #[arg(long, default_value_t = 20)]
        max_decode: usize,
    },
    /// Print the SBT sequence, graph or code tokens of one method.
    Inspect {
        #[arg(long)]
        sol: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, value_enum, default_value = "sbt")]
        show: ShowArg,
    },
}

fn run(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::BuildCorpus { src, out, seed, max_sbt, max_nodes, max_code, max_comment } => {
            let args = BuildCorpusArgs {
                src,
                out,
                seed,
                limits: Limits { max_sbt, max_nodes, max_code, max_comment },
            };
            commands::build_corpus(&args).map(|s| s.report())
        }
        Command::Train { config, data, out, mode, heads, seed, max_steps, precision, resume } => {
            let args = TrainArgs {
                config,
                data,
                out,
                mode,
                heads,
                seed,
                max_steps,
                precision: precision.map(Into::into),
                resume,
            };
            commands::train(&args).map(|s| s.report())
        }
        Command::Evaluate { checkpoint, data, split, predictions, precision, batch_size, max_decode } => {
            let split = match split {
                SplitArg::Train => SplitName::Train,
                SplitArg::Valid => SplitName::Valid,
                SplitArg::Test => SplitName::Test,
            };
            let args = EvaluateArgs {
                checkpoint,
                data,
                split,
                predictions,
                precision: precision.into(),
                batch_size,
                max_decode,
            };
            commands::evaluate(&args).map(|s| {
                format!("{}\npredictions written to {}", s.report.display_percent(), s.predictions.display())
            })
        }
        Command::Score { predictions, references } => {
            commands::score(&predictions, &references).map(|r| r.display_percent())
        }
        Command::Summarize { checkpoint, sol, method, vocab, precision, max_decode } => {
            let args = SummarizeArgs {
                checkpoint,
                sol,
                method,
                vocab,
                precision: precision.into(),
                max_decode,
            };
            commands::summarize(&args)
        }
        Command::Inspect { sol, method, show } => {
            let show = match show {
                ShowArg::Sbt => Show::Sbt,
                ShowArg::Graph => Show::Graph,
                ShowArg::Code => Show::Code,
            };
            commands::inspect(&sol, &method, show)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
