//! `generate`: constrained song sampling from a Task-2 or Task-3 checkpoint.
//! FLN sequences come from a label file, the label-sequence model, or a
//! dataset sample; songs and the sequences used are written side by side.

use crate::config::RunConfig;
use crate::data;
use crate::ExitKind;
use anyhow::{anyhow, Context, Result};
use flngen_core::checkpoint::{self, Kind};
use flngen_core::corpus::{export_midi, SONG_PHRASES};
use flngen_core::fln::ClassLabel;
use flngen_core::hcvae::Hcvae;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub enum FlnSource {
    File(std::path::PathBuf),
    Model,
    DatasetSample,
}

impl FlnSource {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("file=") {
            return Ok(FlnSource::File(path.into()));
        }
        match s {
            "model" => Ok(FlnSource::Model),
            "dataset-sample" => Ok(FlnSource::DatasetSample),
            other => Err(anyhow!(
                "--fln-source must be file=PATH, model, or dataset-sample (got {other:?})"
            )),
        }
    }
}

pub struct GenerateArgs<'a> {
    pub checkpoint: &'a Path,
    pub lcvae_ckpt: &'a Path,
    pub fln_source: FlnSource,
    pub data_dir: Option<&'a Path>,
    pub count: usize,
    pub out_dir: &'a Path,
}

fn parse_label_file(path: &Path, class_count: usize) -> Result<Vec<Vec<ClassLabel>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read label file {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<u32>> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| anyhow!("line {}: bad label {t:?}", lineno + 1))
            })
            .collect();
        let vals = vals?;
        if vals.len() != SONG_PHRASES {
            return Err(anyhow!(
                "line {}: expected {} labels, got {}",
                lineno + 1,
                SONG_PHRASES,
                vals.len()
            ));
        }
        for &v in &vals {
            if v as usize >= class_count {
                return Err(anyhow!(
                    "line {}: label {v} out of range ({} classes)",
                    lineno + 1,
                    class_count
                ));
            }
        }
        out.push(vals.into_iter().map(ClassLabel).collect());
    }
    if out.is_empty() {
        return Err(anyhow!("label file {} is empty", path.display()));
    }
    Ok(out)
}

pub fn run(args: &GenerateArgs, cfg: &RunConfig) -> Result<ExitKind> {
    let seed = cfg.require_seed().map_err(|e| e.context("generate"))?;
    let kind = checkpoint::peek_kind(args.checkpoint)?;
    let hcvae: Hcvae = match kind {
        Kind::Hcvae => checkpoint::load_hcvae(args.checkpoint, args.lcvae_ckpt)?.0,
        Kind::Hcgan => {
            let (gan, _) = checkpoint::load_hcgan(args.checkpoint, args.lcvae_ckpt)?;
            gan.hcvae
        }
        Kind::Lcvae => {
            return Err(anyhow!(
                "generation needs a Task-2 (hcvae) or Task-3 (hcgan) checkpoint; got a Task-1 file"
            ))
        }
    };
    let class_count = hcvae.lcvae.cfg.class_count;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // resolve the label sequences up front
    let sequences: Vec<Vec<ClassLabel>> = match &args.fln_source {
        FlnSource::File(path) => {
            let lines = parse_label_file(path, class_count)?;
            (0..args.count)
                .map(|i| lines[i % lines.len()].clone())
                .collect()
        }
        FlnSource::Model => {
            let model = hcvae.flnseq.as_ref().ok_or_else(|| {
                anyhow!("this checkpoint has no label-sequence model; retrain Task 2")
            })?;
            (0..args.count).map(|_| model.sample(&mut rng)).collect()
        }
        FlnSource::DatasetSample => {
            let dir = args
                .data_dir
                .ok_or_else(|| anyhow!("--fln-source dataset-sample requires --data"))?;
            let songs = data::load_songs(dir)?;
            if songs.is_empty() {
                return Err(anyhow!("no songs in {}", dir.display()));
            }
            (0..args.count)
                .map(|_| songs[rng.gen_range(0..songs.len())].labels.clone())
                .collect()
        }
    };

    std::fs::create_dir_all(args.out_dir)?;
    for (i, labels) in sequences.iter().enumerate() {
        let song = hcvae.generate_song(labels, &mut rng)?;
        let midi_path = args.out_dir.join(format!("gen_{i:03}.mid"));
        export_midi(&song, &midi_path)?;
        let label_line: Vec<String> = labels.iter().map(|l| l.0.to_string()).collect();
        std::fs::write(
            args.out_dir.join(format!("gen_{i:03}.labels")),
            format!("{}\n", label_line.join(" ")),
        )?;
    }
    println!(
        "generated {} songs -> {}",
        sequences.len(),
        args.out_dir.display()
    );
    Ok(ExitKind::Ok)
}
