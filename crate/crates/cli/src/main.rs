//! `convctc`: train, evaluate and decode convolutional CTC models, and run
//! the verification suites.

mod commands;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use options::{Precision, StageArg, TrainingSection};

#[derive(Parser)]
#[command(
    name = "convctc",
    version,
    about = "Convolutional CTC sequence labeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing metrics.jsonl, best.ckpt and last.ckpt to --out.
    Train(TrainArgs),
    /// Decode a manifest and score it against its labels.
    Eval(EvalArgs),
    /// Print the best-path decode of each feature file, one line per file.
    Decode(DecodeArgs),
    /// Run a verification suite; exits nonzero if it fails.
    Verify(VerifyArgs),
    /// Write a synthetic task: alphabet, manifests and feature files.
    GenSynthetic(GenArgs),
    /// Fit normalization statistics on a training manifest.
    FitStats(FitStatsArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Network config (JSON), optionally with a "training" section.
    #[arg(long, required_unless_present_any = ["resume", "checkpoint"])]
    pub config: Option<PathBuf>,
    /// Symbol inventory, one per line, `<blank>` first.
    #[arg(long, required_unless_present_any = ["resume", "checkpoint"])]
    pub alphabet: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Precomputed normalization stats; fitted on --train otherwise.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue a run exactly from a checkpoint. Only --epochs may change.
    #[arg(long, conflicts_with_all = ["checkpoint", "config", "alphabet", "stats"])]
    pub resume: Option<PathBuf>,
    /// Start a new run from a checkpoint's weights, config, alphabet and
    /// stats (e.g. `--stage sgd` fine-tuning from best.ckpt).
    #[arg(long, conflicts_with_all = ["config", "alphabet", "stats"])]
    pub checkpoint: Option<PathBuf>,
    /// Scoring map applied to dev hypotheses and references.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long, value_enum)]
    pub stage: Option<StageArg>,
    /// Learning rate [default: 1e-4 for adam, 1e-5 for sgd]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Utterances per update [default: 20]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Rate for every dropout layer [default: as in the config]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// L2 on weights [default: 1e-5 for sgd, 0 for adam]
    #[arg(long)]
    pub l2: Option<f64>,
    /// Evaluations without dev improvement before switching stage or stopping [default: 5]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Maximum number of epochs [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Evaluate on dev every N epochs [default: 1]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Average the loss over the batch instead of summing.
    #[arg(long)]
    pub loss_mean: bool,
    /// Stop at the Adam plateau instead of switching to SGD.
    #[arg(long)]
    pub no_fine_tune: bool,
    /// Visit utterances in manifest order.
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub sort_by_length: bool,
    /// Write null seconds so that reruns give byte-identical logs.
    #[arg(long)]
    pub no_timing: bool,
}

impl TrainArgs {
    pub fn section(&self) -> TrainingSection {
        TrainingSection {
            seed: self.seed,
            precision: self.precision,
            stage: self.stage,
            lr: self.lr,
            batch: self.batch,
            dropout: self.dropout,
            l2: self.l2,
            patience: self.patience,
            epochs: self.epochs,
            eval_every: self.eval_every,
            loss: self
                .loss_mean
                .then_some(convctc::train::LossReduction::Mean),
            fine_tune: self.no_fine_tune.then_some(false),
            shuffle: self.no_shuffle.then_some(false),
            sort_by_length: self.sort_by_length.then_some(true),
            timing: self.no_timing.then_some(false),
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest to score.
    #[arg(long, visible_alias = "manifest")]
    pub test: PathBuf,
    /// Scoring map, `<symbol> <target>` per line.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Write the full per-utterance report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Static feature files [bands x frames].
    #[arg(required = true)]
    pub features: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradcheck,
    CtcOracle,
    Shapes,
    All,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances for ctc-oracle.
    #[arg(long, default_value_t = convctc::verify::ORACLE_INSTANCES)]
    pub instances: usize,
    /// Frame counts pushed through the default network by `shapes`.
    #[arg(long, value_delimiter = ',', default_value = "1,7,100,313")]
    pub frames: Vec<usize>,
}

#[derive(Args)]
pub struct GenArgs {
    /// Task spec JSON; flags below override its fields.
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub symbols: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub dev_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct FitStatsArgs {
    #[arg(long)]
    pub alphabet: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    /// Output stats file.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
        Command::FitStats(a) => commands::fit_stats(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
