//! `wsail` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "wsail", version, about = "Weakly-supervised audio classification and enhancement")]
pub struct Cli {
    /// INI run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-file work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Proposal types used when training.
    #[arg(long, global = true, value_enum)]
    pub proposals: Option<ProposalArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProposalArg {
    Tsp,
    Ncp,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    LabelKnown,
    LabelUnknown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic weakly-labeled corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        noise_scenes: Option<usize>,
        /// Clip and noise scene length in seconds.
        #[arg(long)]
        seconds: Option<f64>,
        #[arg(long)]
        visual_dim: Option<usize>,
    },
    /// Train a classifier on the train split of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the checkpoint, loss log and config snapshot.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Also train a visual stream from the manifest's feature files.
        #[arg(long)]
        visual: bool,
    },
    /// Predict classes for manifest entries or WAV files.
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "inputs")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// JSON-lines predictions; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        inputs: Vec<PathBuf>,
    },
    /// Split a mixture into source and noise.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Class name for label-known mode.
        #[arg(long)]
        label: Option<String>,
        /// Hard threshold on the scaled component scores.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Test-split accuracy of one or more checkpoints, plus their ensemble.
    EvalCls {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-split accuracy under additive scene noise.
    EvalNoisy {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        /// Comma-separated SNR levels in dB; `inf` means clean.
        #[arg(long)]
        snr: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SDR of enhanced clean-plus-scene mixtures.
    EvalSdr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        /// Mixing SNR in dB.
        #[arg(long)]
        snr: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-component statistics of the NMF of one file.
    NmfInspect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<wsail::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WSAIL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
