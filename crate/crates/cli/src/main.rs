//! Command-line entry point for the FLN-conditioned hierarchical music
//! generation pipeline: preprocess, the three-task training protocol,
//! constrained generation, objective evaluation, and latent inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training
//! divergence.

mod commands;
mod config;
mod data;

use anyhow::Result;
use clap::{Parser, Subcommand};
use commands::generate::FlnSource;
use commands::train::Task;
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Ok = 0,
    Usage = 1,
    DataError = 2,
    Divergence = 3,
}

#[derive(Parser)]
#[command(name = "flngen", version, about = "Hierarchical FLN-conditioned music generation")]
struct Cli {
    /// Flat key = value config file; flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed (required for train and generate)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override a single config key, e.g. --set lcvae.epochs=5 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a MIDI directory into phrase/song stores and the FLN dictionary
    Preprocess {
        /// Directory of .mid files
        #[arg(long)]
        midi_dir: PathBuf,
        /// Output directory for the corpus stores
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one task (lcvae, then hcvae on top of it, then hcgan)
    Train {
        #[arg(value_enum)]
        task: Task,
        /// Preprocessed corpus directory
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint and training log
        #[arg(long)]
        out: PathBuf,
        /// Task-1 checkpoint (required for hcvae and hcgan)
        #[arg(long)]
        lcvae: Option<PathBuf>,
        /// Task-2 checkpoint (required for hcgan)
        #[arg(long)]
        hcvae: Option<PathBuf>,
        /// Resume from an existing checkpoint of the same task
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample songs under FLN constraints and write MIDI + label files
    Generate {
        /// Task-2 (hcvae) or Task-3 (hcgan) checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task-1 checkpoint the model was trained against
        #[arg(long)]
        lcvae: PathBuf,
        /// file=PATH | model | dataset-sample
        #[arg(long, default_value = "model")]
        fln_source: String,
        /// Preprocessed corpus (for dataset-sample)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of songs
        #[arg(short = 'n', long, default_value_t = 1)]
        count: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Objective metrics over a corpus or a directory of MIDI files
    Evaluate {
        /// Directory of MIDI files to evaluate
        #[arg(long, conflicts_with = "corpus")]
        input: Option<PathBuf>,
        /// Preprocessed corpus directory to evaluate
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Second input for side-by-side comparison (MIDI directory)
        #[arg(long)]
        compare: Option<PathBuf>,
        /// FLN dictionary for accuracy scoring of labeled generations
        #[arg(long)]
        dict: Option<PathBuf>,
        /// Output directory for report files
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two phrases' cm-subtracted latent vectors
    InspectLatent {
        /// Task-1 checkpoint
        #[arg(long)]
        lcvae: PathBuf,
        /// Preprocessed corpus directory
        #[arg(long)]
        data: PathBuf,
        /// Song index
        #[arg(long)]
        song: usize,
        /// First phrase index (0..16)
        #[arg(long)]
        phrase_a: usize,
        /// Second phrase index (0..16)
        #[arg(long)]
        phrase_b: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {s:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<ExitKind> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Preprocess { midi_dir, out } => commands::preprocess::run(midi_dir, out, &cfg),
        Command::Train {
            task,
            data,
            out,
            lcvae,
            hcvae,
            resume,
        } => commands::train::run(
            &commands::train::TrainArgs {
                task: *task,
                data_dir: data,
                out_dir: out,
                lcvae_ckpt: lcvae.as_deref(),
                hcvae_ckpt: hcvae.as_deref(),
                resume: resume.as_deref(),
            },
            &cfg,
        ),
        Command::Generate {
            checkpoint,
            lcvae,
            fln_source,
            data,
            count,
            out,
        } => commands::generate::run(
            &commands::generate::GenerateArgs {
                checkpoint,
                lcvae_ckpt: lcvae,
                fln_source: FlnSource::parse(fln_source)?,
                data_dir: data.as_deref(),
                count: *count,
                out_dir: out,
            },
            &cfg,
        ),
        Command::Evaluate {
            input,
            corpus,
            compare,
            dict,
            out,
        } => {
            let main_input = match (input, corpus) {
                (Some(d), None) => commands::evaluate::Input::MidiDir(d),
                (None, Some(d)) => commands::evaluate::Input::Corpus(d),
                _ => {
                    eprintln!("evaluate needs exactly one of --input or --corpus");
                    return Ok(ExitKind::Usage);
                }
            };
            commands::evaluate::run(
                &commands::evaluate::EvaluateArgs {
                    input: main_input,
                    compare: compare.as_deref().map(commands::evaluate::Input::MidiDir),
                    dict: dict.as_deref(),
                    out_dir: out,
                },
                &cfg,
            )
        }
        Command::InspectLatent {
            lcvae,
            data,
            song,
            phrase_a,
            phrase_b,
        } => commands::inspect::run(&commands::inspect::InspectArgs {
            lcvae_ckpt: lcvae,
            data_dir: data,
            song: *song,
            phrase_a: *phrase_a,
            phrase_b: *phrase_b,
        }),
    }
}

fn classify_error(e: &anyhow::Error) -> ExitKind {
    use flngen_core::error::ModelError;
    if let Some(m) = e.downcast_ref::<ModelError>() {
        return match m {
            ModelError::Divergence { .. } => ExitKind::Divergence,
            _ => ExitKind::DataError,
        };
    }
    let msg = format!("{e:#}");
    if msg.contains("config") || msg.contains("--") || msg.contains("seed is required") {
        ExitKind::Usage
    } else {
        ExitKind::DataError
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(kind) => ExitCode::from(kind as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify_error(&e) as u8)
        }
    }
}
