use std::path::PathBuf;

use a2pit::detector::{DetectionConfig, DetectionMode, ThresholdPreset, DEFAULT_FRAME_HOP};
use a2pit::evalkit::SelectionMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

/// Mixture synthesis, output detection, evaluation and toy training for
/// separation with auxiliary autoencoding outputs.
#[derive(Debug, Parser)]
#[command(name = "a2pit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dataset of multi-speaker mixtures with a manifest.
    Synth(SynthArgs),
    /// Score separated outputs against their mixtures and count speakers.
    Detect(DetectArgs),
    /// Write confusion and separation reports for separated outputs.
    Eval(EvalArgs),
    /// Histogram of autoencoding scores of separated outputs.
    Hist(HistArgs),
    /// Train the linear toy separator on the built-in two-band corpus.
    TrainToy(TrainToyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of utterances.
    #[arg(long)]
    pub count: usize,
    /// Allowed speaker counts, e.g. `2,3`.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=4))]
    pub speakers: Option<Vec<u8>>,
    /// Add a noise clip to every mixture.
    #[arg(long)]
    pub noisy: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Utterance length in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Directory of mono 16-bit WAV speech clips. Synthetic tones otherwise.
    #[arg(long)]
    pub source_dir: Option<PathBuf>,
    /// Directory of mono 16-bit WAV noise clips. Synthetic noise otherwise.
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    /// TOML file with synthesis settings; flags given here take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Autoencoding,
    Energy,
}

#[derive(Debug, Args)]
pub struct DetectionArgs {
    /// Named threshold preset.
    #[arg(long, value_parser = clap::value_parser!(ThresholdPreset))]
    pub preset: Option<ThresholdPreset>,
    /// Threshold in dB; overrides `--preset`.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Autoencoding)]
    pub mode: ModeArg,
    /// Power threshold in dB for `--mode energy`.
    #[arg(long, allow_negative_numbers = true)]
    pub energy_threshold: Option<f64>,
}

impl DetectionArgs {
    pub fn config(&self, hop: Option<usize>) -> CliResult<DetectionConfig> {
        let mut cfg = match self.threshold {
            Some(t) => DetectionConfig::with_threshold(t),
            None => DetectionConfig::from_preset(self.preset.unwrap_or(ThresholdPreset::Clean)),
        };
        cfg.mode = match self.mode {
            ModeArg::Autoencoding => DetectionMode::Autoencoding,
            ModeArg::Energy => DetectionMode::EnergyBaseline,
        };
        if let Some(e) = self.energy_threshold {
            cfg.energy_threshold_db = e;
        }
        cfg.frame_hop = hop.unwrap_or(DEFAULT_FRAME_HOP);
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Directory holding `uttNNNNNN_estK.wav` outputs.
    #[arg(long)]
    pub est_dir: PathBuf,
    /// Directory holding `uttNNNNNN_mix0.wav` mixtures.
    #[arg(long)]
    pub mix_dir: PathBuf,
    #[command(flatten)]
    pub detection: DetectionArgs,
    /// Also report cumulative scores every `hop` samples.
    #[arg(long)]
    pub hop: Option<usize>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Oracle,
    Predicted,
    Both,
}

impl SelectionArg {
    pub fn modes(self) -> Vec<SelectionMode> {
        match self {
            SelectionArg::Oracle => vec![SelectionMode::Oracle],
            SelectionArg::Predicted => vec![SelectionMode::Predicted],
            SelectionArg::Both => vec![SelectionMode::Oracle, SelectionMode::Predicted],
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub est_dir: PathBuf,
    /// Manifest written by `synth`; audio is read from its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SelectionArg::Both)]
    pub selection: SelectionArg,
    #[command(flatten)]
    pub detection: DetectionArgs,
    /// Seed for fault-tolerant output selection.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub est_dir: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bin width in dB.
    #[arg(long, default_value_t = a2pit::evalkit::DEFAULT_BIN_WIDTH)]
    pub bin: f64,
    /// Lower edge of the histogram in dB.
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    /// Upper edge of the histogram in dB.
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub n_outputs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Utterances per gradient step.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// FIR length of the separator.
    #[arg(long, default_value_t = a2pit::toytrain::TOY_FRAME_LEN)]
    pub frame_len: usize,
    #[arg(long, default_value_t = 200)]
    pub train_count: usize,
    /// Held-out utterances scored after training; 0 skips evaluation.
    #[arg(long, default_value_t = 200)]
    pub test_count: usize,
    /// Write the held-out set, its manifest and the model outputs to `OUT/test`.
    #[arg(long)]
    pub emit_test: bool,
}
