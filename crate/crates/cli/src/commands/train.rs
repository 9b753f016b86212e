//! `train`: the three-task protocol. Task order is enforced through
//! checkpoint arguments and verified provenance hashes.

use crate::config::RunConfig;
use crate::data;
use crate::ExitKind;
use anyhow::{anyhow, Context, Result};
use flngen_core::checkpoint;
use flngen_core::error::ModelError;
use flngen_core::hcgan::Hcgan;
use flngen_core::hcvae::{FlnSeqVae, Gvae, Hcvae};
use flngen_core::lcvae::Lcvae;
use flngen_core::nn::weight_hash;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Lcvae,
    Hcvae,
    Hcgan,
}

pub struct TrainArgs<'a> {
    pub task: Task,
    pub data_dir: &'a Path,
    pub out_dir: &'a Path,
    pub lcvae_ckpt: Option<&'a Path>,
    pub hcvae_ckpt: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

fn divergence_exit(e: &anyhow::Error) -> Option<ExitKind> {
    e.downcast_ref::<ModelError>().and_then(|m| match m {
        ModelError::Divergence { .. } => Some(ExitKind::Divergence),
        _ => None,
    })
}

pub fn run(args: &TrainArgs, cfg: &RunConfig) -> Result<ExitKind> {
    let seed = cfg.require_seed().map_err(|e| e.context("train"))?;
    std::fs::create_dir_all(args.out_dir)?;
    let result = match args.task {
        Task::Lcvae => train_lcvae(args, cfg, seed),
        Task::Hcvae => train_hcvae(args, cfg, seed),
        Task::Hcgan => train_hcgan(args, cfg, seed),
    };
    match result {
        Ok(()) => Ok(ExitKind::Ok),
        Err(e) => match divergence_exit(&e) {
            Some(kind) => {
                eprintln!("{e}");
                Ok(kind)
            }
            None => Err(e),
        },
    }
}

fn train_lcvae(args: &TrainArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let dict = data::load_dictionary(args.data_dir)?;
    let (phrases, labels) = data::load_phrases(args.data_dir)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut model = match args.resume {
        Some(path) => {
            let (m, d) = checkpoint::load_lcvae(path)?;
            if d.hash() != dict.hash() {
                return Err(anyhow!("resume checkpoint was trained on a different dictionary"));
            }
            let mut m = m;
            m.cfg = cfg.lcvae(dict.class_count(), seed);
            m
        }
        None => Lcvae::new(cfg.lcvae(dict.class_count(), seed), &mut rng),
    };

    let ckpt_path = args.out_dir.join("lcvae.ckpt");
    let log_path = args.out_dir.join("train_log.tsv");
    let mut log_text = String::new();
    let stats = model.train(&phrases, &labels, &mut rng, |m, s| {
        let _ = checkpoint::save_lcvae(&ckpt_path, m, &dict);
        let _ = writeln!(
            log_text,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            s.epoch, s.recon, s.kl, s.total
        );
        let _ = std::fs::write(&log_path, &log_text);
        println!("epoch {}\trecon {:.4}\tkl {:.4}\ttotal {:.4}", s.epoch, s.recon, s.kl, s.total);
    })?;
    checkpoint::save_lcvae(&ckpt_path, &model, &dict)?;
    println!(
        "trained lcvae for {} epochs -> {}",
        stats.len(),
        ckpt_path.display()
    );
    Ok(())
}

fn train_hcvae(args: &TrainArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let lcvae_path = args.lcvae_ckpt.ok_or_else(|| {
        anyhow!(ModelError::MissingPretrain(
            "train hcvae requires --lcvae <checkpoint> from Task 1".into()
        ))
    })?;
    let (lcvae, dict) = checkpoint::load_lcvae(lcvae_path).context("loading Task-1 checkpoint")?;
    let songs = data::load_songs(args.data_dir)?;
    if songs.is_empty() {
        return Err(anyhow!("no songs in {}", args.data_dir.display()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gvae = Gvae::new(cfg.gvae(seed), lcvae.cfg.latent_dim, &mut rng);
    let lcvae_hash = weight_hash(&lcvae);
    let mut hcvae = Hcvae {
        lcvae,
        gvae,
        flnseq: None,
    };

    let ckpt_path = args.out_dir.join("hcvae.ckpt");
    let log_path = args.out_dir.join("train_log.tsv");
    let mut log_text = String::new();
    hcvae.train_gvae(&songs, &mut rng, |m, s| {
        let _ = checkpoint::save_hcvae(&ckpt_path, m, &dict);
        let _ = writeln!(
            log_text,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            s.epoch, s.recon, s.kl, s.total
        );
        let _ = std::fs::write(&log_path, &log_text);
        println!("epoch {}\trecon {:.4}\tkl {:.4}\ttotal {:.4}", s.epoch, s.recon, s.kl, s.total);
    })?;
    assert_eq!(
        weight_hash(&hcvae.lcvae),
        lcvae_hash,
        "phrase model must be frozen during Task 2"
    );

    // auxiliary label-sequence model for `generate --fln-source model`
    let seqs: Vec<Vec<flngen_core::ClassLabel>> =
        songs.iter().map(|s| s.labels.clone()).collect();
    let mut flnseq = FlnSeqVae::new(cfg.flnseq(dict.class_count(), seed), &mut rng);
    flnseq.train(&seqs, &mut rng)?;
    hcvae.flnseq = Some(flnseq);

    checkpoint::save_hcvae(&ckpt_path, &hcvae, &dict)?;
    println!("trained hcvae -> {}", ckpt_path.display());
    Ok(())
}

fn train_hcgan(args: &TrainArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let hcvae_path = args.hcvae_ckpt.ok_or_else(|| {
        anyhow!(ModelError::MissingPretrain(
            "train hcgan requires --hcvae <checkpoint> from Task 2".into()
        ))
    })?;
    let lcvae_path = args.lcvae_ckpt.ok_or_else(|| {
        anyhow!(ModelError::MissingPretrain(
            "train hcgan requires --lcvae <checkpoint> from Task 1".into()
        ))
    })?;
    let (hcvae, dict) =
        checkpoint::load_hcvae(hcvae_path, lcvae_path).context("loading Task-2 checkpoint")?;
    let warm_start_hash = weight_hash(&hcvae.gvae);
    let songs = data::load_songs(args.data_dir)?;
    if songs.is_empty() {
        return Err(anyhow!("no songs in {}", args.data_dir.display()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut gan = Hcgan::new(hcvae, cfg.gan(seed), &mut rng);

    let ckpt_path = args.out_dir.join("hcgan.ckpt");
    let log_path = args.out_dir.join("train_log.tsv");
    let mut log_text = String::new();
    let mut since_save = 0usize;
    gan.train(&songs, &mut rng, |s| {
        let _ = writeln!(
            log_text,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            s.step, s.w_estimate, s.gp, s.critic_loss, s.gen_loss
        );
        since_save += 1;
        if since_save >= 50 {
            since_save = 0;
            let _ = std::fs::write(&log_path, &log_text);
        }
        if s.step % 10 == 0 {
            println!(
                "step {}\tw {:.4}\tgp {:.4}\tcritic {:.4}\tgen {:.4}",
                s.step, s.w_estimate, s.gp, s.critic_loss, s.gen_loss
            );
        }
    })?;
    std::fs::write(&log_path, &log_text)?;
    checkpoint::save_hcgan(&ckpt_path, &gan, &dict, &warm_start_hash)?;
    println!("trained hcgan -> {}", ckpt_path.display());
    Ok(())
}
