mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiparse::multitask::ArchKind;

/// Multi-task semantic parsing: data generation, training, evaluation,
/// decoding, parameter reports and gradient checks.
#[derive(Parser, Debug)]
#[command(name = "multiparse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/dev/test corpora for two formalisms from a grammar.
    GenData(GenDataArgs),
    /// Train one architecture and write a run directory.
    Train(TrainArgs),
    /// Exact-match evaluation of a trained model on a corpus.
    Eval(EvalArgs),
    /// Parse one utterance with a trained model.
    Decode(DecodeArgs),
    /// Finite-difference check of the full training loss.
    Gradcheck(GradcheckArgs),
    /// Parameter counts of every architecture for the given corpora.
    Params(ParamsArgs),
    /// Target-task accuracy of several architectures across sizes and seeds.
    Transfer(TransferArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Grammar in TOML; the built-in grammar when omitted.
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Examples generated per task before splitting.
    #[arg(long, default_value_t = 1000)]
    n_per_task: usize,
    /// Train, dev and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    split: Vec<f64>,
}

/// Where training corpora come from.
#[derive(Args, Debug, Clone)]
struct CorpusArgs {
    /// Directory holding `<task>.train.tsv` and optional `<task>.dev.tsv` files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Tasks to take from `--data`; all tasks found when omitted.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Training corpus as `TASK=PATH`; repeatable.
    #[arg(long = "train", value_name = "TASK=PATH")]
    train: Vec<String>,
    /// Development corpus as `TASK=PATH`; repeatable.
    #[arg(long = "dev", value_name = "TASK=PATH")]
    dev: Vec<String>,
}

/// Training configuration: a TOML file, then flag overrides.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Last epoch run at the full learning rate.
    #[arg(long)]
    lr_halve_after: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    attention: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "one2sharemany")]
    arch: ArchKind,
    #[command(flatten)]
    corpora: CorpusArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; `runs/<unix time>-seed<seed>` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty run directory.
    #[arg(long)]
    force: bool,
    /// Print the parameter table and exit without training.
    #[arg(long)]
    params_only: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Task the corpus belongs to; may be omitted for single-task models.
    #[arg(long)]
    task: Option<String>,
    /// JSON report path; `<model>/eval-<task>.json` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    task: Option<String>,
    /// Print one line per decoding step with the top three actions.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    max_len: Option<usize>,
    /// Utterance words; quoted or as separate arguments.
    #[arg(trailing_var_arg = true)]
    utterance: Vec<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "one2sharemany")]
    arch: ArchKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    embed: usize,
    #[arg(long, default_value_t = 16)]
    attention: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    /// Corrupt the analytic gradient so the check must fail.
    #[arg(long)]
    inject_fault: bool,
    /// Largest relative error that passes.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// Also print the block table of this architecture.
    #[arg(long)]
    arch: Option<ArchKind>,
    #[command(flatten)]
    corpora: CorpusArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct TransferArgs {
    /// Directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long)]
    aux: String,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 500, 2000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5000)]
    aux_size: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    archs: Vec<ArchKind>,
    /// Give the single-task baseline only the steps its own data implies.
    #[arg(long)]
    unmatched_steps: bool,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Decode(a) => commands::decode(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Params(a) => commands::params(a),
        Command::Transfer(a) => commands::transfer(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
