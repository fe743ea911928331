//! `eres2net` command-line front end.

mod commands;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eres2net::profile::FlopConvention;
use eres2net::{Error, ErrorCategory};

#[derive(Parser, Debug)]
#[command(name = "eres2net", version, about = "ERes2NetV2 speaker verification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model with AAM-softmax on a manifest of labelled utterances.
    Train(TrainArgs),
    /// Extract 192-dim embeddings for a list of utterances.
    Extract(ExtractArgs),
    /// Cosine-score a trial list against an embedding archive.
    Score(ScoreArgs),
    /// Score a trial list and report EER and MinDCF.
    Eval(EvalArgs),
    /// Count parameters and FLOPs of a configuration.
    Profile(ProfileArgs),
    /// Generate a deterministic synthetic multi-speaker corpus.
    SynthCorpus(SynthArgs),
    /// Write the log-mel filterbank features of one WAV file.
    DumpFbank(DumpFbankArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training manifest (`utterance<TAB>wav<TAB>speaker`).
    pub manifest: PathBuf,
    /// Model config file or `preset:<name>`.
    pub config: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Enable additive-noise and reverberation augmentation.
    #[arg(long)]
    pub augment: bool,
    /// Noise manifest; defaults to `noise.tsv` beside the training manifest.
    #[arg(long)]
    pub noise_manifest: Option<PathBuf>,
    /// Impulse-response manifest; defaults to `rir.tsv` beside the training manifest.
    #[arg(long)]
    pub rir_manifest: Option<PathBuf>,
    /// Add 0.9x and 1.1x copies as new speakers.
    #[arg(long)]
    pub speed_perturb: bool,
    /// Large-margin fine-tuning overrides (margin 0.5, 6 s crops).
    #[arg(long)]
    pub large_margin: bool,
    /// Initialize from a checkpoint (model tensors only).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 5)]
    pub warmup_epochs: usize,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub crop_secs: Option<f64>,
    /// Output directory for checkpoints and the loss history.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    pub checkpoint: PathBuf,
    /// Manifest or list of `id<whitespace>wav` / bare wav paths.
    pub wav_list: PathBuf,
    /// Defaults to `config.conf` beside the checkpoint.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    pub embeddings: PathBuf,
    pub trials: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Duration {
    Full,
    #[value(name = "3")]
    Three,
    #[value(name = "2")]
    Two,
}

impl Duration {
    pub fn seconds(self) -> Option<f64> {
        match self {
            Duration::Full => None,
            Duration::Three => Some(3.0),
            Duration::Two => Some(2.0),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Duration::Full => "full",
            Duration::Three => "3s",
            Duration::Two => "2s",
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub embeddings: PathBuf,
    pub trials: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub duration: Duration,
    /// Seed of the test-side crops for truncated durations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Needed for truncated durations.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `config.conf` beside the checkpoint.
    #[arg(long)]
    pub config: Option<String>,
    /// Audio for the trial ids; needed for truncated durations.
    #[arg(long)]
    pub wav_list: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub p_target: f64,
    /// Directory for scores, metrics and DET dump; defaults to the archive's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Config file or `preset:<name>`.
    pub config: String,
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    /// Reference config; prints the reductions of CONFIG relative to it.
    #[arg(long)]
    pub compare: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ReportFormat,
    #[arg(long, default_value = "mac")]
    pub convention: FlopConvention,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub utts_per_speaker: usize,
    #[arg(long, default_value_t = 4.0)]
    pub seconds: f64,
    /// Utterances per speaker held out for the trial list.
    #[arg(long)]
    pub heldout: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DumpFbankArgs {
    pub wav: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Format => 3,
        ErrorCategory::Data => 4,
        ErrorCategory::Internal => 1,
    }
}

fn configure_threads() -> eres2net::Result<()> {
    let Ok(value) = std::env::var("ERES2NET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| Error::config(format!("ERES2NET_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("cannot configure {n} threads: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Extract(a) => commands::extract(&a),
        Command::Score(a) => commands::score(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Profile(a) => commands::profile(&a),
        Command::SynthCorpus(a) => commands::synth_corpus(&a),
        Command::DumpFbank(a) => commands::dump_fbank(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
