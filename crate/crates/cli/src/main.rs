//! `tinslt`: command-line front end for the gloss-to-text translation
//! stack. Subcommands cover the full pipeline: synthesize or augment a
//! corpus, pretrain the frozen teacher, train the fused translator, then
//! decode and score. Data and reports go to stdout or files; progress goes
//! to stderr. Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod checkpoint;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::CliResult;

#[derive(Parser)]
#[command(
    name = "tinslt",
    version,
    about = "Gloss-to-text translation: corpus tools, teacher pretraining, fused training, decoding, evaluation",
    after_help = "Environment:\n  TINSLT_THREADS  caps worker threads for ablate/sweep (default: available cores)",
    propagate_version = true
)]
struct Cli {
    /// Omit timestamps from JSON reports so reruns are byte-identical
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    GenCorpus(GenCorpusArgs),
    Augment(AugmentArgs),
    Pretrain(PretrainArgs),
    Train(TrainArgs),
    Translate(TranslateArgs),
    Evaluate(EvaluateArgs),
    Ablate(AblateArgs),
    Sweep(SweepArgs),
    InspectAlpha(InspectAlphaArgs),
    Stats(StatsArgs),
}

/// Generate a synthetic gloss/text parallel corpus
#[derive(Args)]
pub struct GenCorpusArgs {
    /// Output directory for NAME.gloss / NAME.text / NAME.json
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Basename of the three output files
    #[arg(long, default_value = "synth")]
    pub name: String,
    /// Number of sentence pairs
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    /// Upper bound on gloss-side vocabulary types
    #[arg(long, default_value_t = 24)]
    pub gloss_vocab: usize,
    /// Upper bound on text-side vocabulary types
    #[arg(long, default_value_t = 40)]
    pub text_vocab: usize,
    /// Probability of dropping each function word on the gloss side
    #[arg(long, default_value_t = 0.3)]
    pub drop_prob: f64,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Upsample a corpus by the four-factor difference ratio
#[derive(Args)]
pub struct AugmentArgs {
    /// Corpus prefix; reads PREFIX.gloss and PREFIX.text
    #[arg(long = "in", value_name = "PREFIX")]
    pub input: PathBuf,
    /// Output directory for STEM.aug.{gloss,text,json}
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// TOML config; the [augment] section supplies defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rare-word frequency threshold [config: augment.tau_r, default: 2]
    #[arg(long)]
    pub tau_r: Option<usize>,
    /// Cover-ratio threshold [config: augment.tau_c, default: 0.5]
    #[arg(long)]
    pub tau_c: Option<f64>,
    /// Factor weights, four comma-separated values [config: augment.theta, default: 0.1,0.1,0.6,0.2]
    #[arg(long, value_delimiter = ',', num_args = 4, value_name = "V,R,S,D")]
    pub theta: Option<Vec<f64>>,
    /// Injection-sampling seed [config: train.seed, default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Pretrain the frozen teacher encoder by masked-token reconstruction
#[derive(Args)]
pub struct PretrainArgs {
    /// Corpus prefix; reads PREFIX.gloss and PREFIX.text
    #[arg(long = "in", value_name = "PREFIX")]
    pub input: PathBuf,
    /// Output directory for the checkpoint pair
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Basename of the checkpoint pair (NAME.bin / NAME.json)
    #[arg(long, default_value = "teacher")]
    pub name: String,
    /// TOML config; [teacher], [pretrain], [train], and [augment] apply
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pretraining epochs [config: pretrain.epochs, default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pretraining batch size [config: pretrain.batch_size, default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Pretraining learning rate [config: pretrain.lr, default: 0.003]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Token masking probability [config: teacher.mask_prob, default: 0.15]
    #[arg(long)]
    pub mask_prob: Option<f64>,
    /// Pretraining seed [config: pretrain.seed, default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Train the translation model, optionally fused with a frozen teacher
#[derive(Args)]
pub struct TrainArgs {
    /// Corpus prefix; reads PREFIX.gloss and PREFIX.text
    #[arg(long = "in", value_name = "PREFIX")]
    pub input: PathBuf,
    /// Output directory for model.{bin,json} and train_log.csv
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// TOML config driving the whole run
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Teacher checkpoint; required when instruction fusion is enabled
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Drop the instruction module and train the vanilla backbone
    #[arg(long)]
    pub vanilla: bool,
    /// Skip data augmentation of the training split
    #[arg(long)]
    pub no_augment: bool,
    /// Learning rate [config: train.lr, default: 0.0003]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Warmup steps of the inverse-sqrt schedule [config: train.warmup_steps, default: 100]
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Epoch cap [config: train.max_epochs, default: 60]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Batch size [config: train.batch_size, default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Beam width used by downstream decoding [config: train.beam_size, default: 5]
    #[arg(long)]
    pub beam_size: Option<usize>,
    /// Early-stopping patience in epochs [config: train.early_stop_patience, default: 10]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Dev split fraction [config: train.dev_fraction, default: 0.1]
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// Split, shuffle, and init seed [config: train.seed, default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Decode gloss lines into text with a trained checkpoint
#[derive(Args)]
pub struct TranslateArgs {
    /// Model checkpoint (prefix or .bin/.json path)
    #[arg(long)]
    pub model: PathBuf,
    /// Teacher checkpoint; required for fused models
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Input file, one gloss sentence per line
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output file; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Beam width
    #[arg(long, default_value_t = 5)]
    pub beam_size: usize,
    /// Epoch at which scheduled alpha is evaluated [default: the checkpoint's best epoch]
    #[arg(long)]
    pub alpha_epoch: Option<f64>,
}

/// Score hypothesis lines against reference lines
#[derive(Args)]
pub struct EvaluateArgs {
    /// Hypothesis file, one sentence per line
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference file, one sentence per line
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Also write the metrics JSON here
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    /// Also write a one-row results-table CSV here
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    /// Row label used in the CSV output
    #[arg(long, default_value = "run")]
    pub label: String,
}

/// Train the five-row ablation grid and report dev metrics per row
#[derive(Args)]
#[command(
    after_help = "Rows train in parallel worker threads; TINSLT_THREADS caps the count.\nRow order: baseline, +data_aug, +encoder_fusion, +decoder_fusion, full."
)]
pub struct AblateArgs {
    /// Corpus prefix; reads PREFIX.gloss and PREFIX.text
    #[arg(long = "in", value_name = "PREFIX")]
    pub input: PathBuf,
    /// Output directory for ablation.{csv,json}
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// TOML config; all four sections apply
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed shared by every row [config: train.seed, default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Measure dev BLEU-4 across one hyperparameter's values
#[derive(Args)]
#[command(
    after_help = "beam_size re-decodes one trained model; the other parameters retrain per value.\nValues run in parallel worker threads; TINSLT_THREADS caps the count."
)]
pub struct SweepArgs {
    /// Parameter to sweep: beam_size, n_layers, lr, or dropout
    #[arg(long)]
    pub param: String,
    /// Comma-separated values to try
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Corpus prefix; reads PREFIX.gloss and PREFIX.text
    #[arg(long = "in", value_name = "PREFIX")]
    pub input: PathBuf,
    /// Output directory for sweep_PARAM.{csv,json}
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// TOML config driving the base run
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Teacher checkpoint; required when instruction fusion is enabled
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Drop the instruction module for the swept runs
    #[arg(long)]
    pub vanilla: bool,
    /// Skip data augmentation of the training split
    #[arg(long)]
    pub no_augment: bool,
    /// Base seed [config: train.seed, default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Print a fusion-coefficient trajectory, or a checkpoint's learned alpha
#[derive(Args)]
pub struct InspectAlphaArgs {
    /// Read alpha from this trained checkpoint instead of a schedule
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// TOML config; [train.instruction.alpha] supplies schedule defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Schedule: constant, cosine_annealing, cosine_decrement, cosine_increment, monotone_increase [config: train.instruction.alpha.strategy, default: learned]
    #[arg(long)]
    pub strategy: Option<String>,
    /// Trajectory length in epochs
    #[arg(long, default_value_t = 26)]
    pub epochs: usize,
    /// Constant-strategy value [config: train.instruction.alpha.value, default: 0.65]
    #[arg(long)]
    pub value: Option<f64>,
    /// Schedule floor [config: train.instruction.alpha.alpha_min, default: 0]
    #[arg(long)]
    pub alpha_min: Option<f64>,
    /// Schedule ceiling [config: train.instruction.alpha.alpha_max, default: 1]
    #[arg(long)]
    pub alpha_max: Option<f64>,
    /// Cosine period in epochs [config: train.instruction.alpha.t_c, default: 25]
    #[arg(long)]
    pub t_c: Option<f64>,
    /// Cosine phase [config: train.instruction.alpha.gamma, default: 0]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Output file; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Report the four corpus difference factors and the upsampling ratio
#[derive(Args)]
pub struct StatsArgs {
    /// Corpus prefix; reads PREFIX.gloss and PREFIX.text
    #[arg(long = "in", value_name = "PREFIX")]
    pub input: PathBuf,
    /// TOML config; the [augment] section supplies defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rare-word frequency threshold [config: augment.tau_r, default: 2]
    #[arg(long)]
    pub tau_r: Option<usize>,
    /// Cover-ratio threshold [config: augment.tau_c, default: 0.5]
    #[arg(long)]
    pub tau_c: Option<f64>,
    /// Factor weights, four comma-separated values [config: augment.theta, default: 0.1,0.1,0.6,0.2]
    #[arg(long, value_delimiter = ',', num_args = 4, value_name = "V,R,S,D")]
    pub theta: Option<Vec<f64>>,
    /// Also write the JSON report here
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    let ts = checkpoint::timestamp(cli.no_timestamp);
    match cli.command {
        Command::GenCorpus(args) => commands::gen_corpus(args, ts),
        Command::Augment(args) => commands::augment_corpus(args, ts),
        Command::Pretrain(args) => commands::pretrain(args, ts),
        Command::Train(args) => commands::train(args, ts),
        Command::Translate(args) => commands::translate(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Ablate(args) => commands::ablate(args, ts),
        Command::Sweep(args) => commands::sweep(args, ts),
        Command::InspectAlpha(args) => commands::inspect_alpha(args),
        Command::Stats(args) => commands::stats(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
