//! `inspect-latent`: per-dimension comparison of two phrases' cm-subtracted
//! latents, for checking how musical structure shows up at the latent level.

use crate::data;
use crate::ExitKind;
use anyhow::{anyhow, Result};
use flngen_core::checkpoint;
use flngen_core::metrics::latent_diff;
use std::path::Path;

pub struct InspectArgs<'a> {
    pub lcvae_ckpt: &'a Path,
    pub data_dir: &'a Path,
    pub song: usize,
    pub phrase_a: usize,
    pub phrase_b: usize,
}

pub fn run(args: &InspectArgs) -> Result<ExitKind> {
    let (lcvae, dict) = checkpoint::load_lcvae(args.lcvae_ckpt)?;
    let songs = data::load_songs(args.data_dir)?;
    let song = songs
        .get(args.song)
        .ok_or_else(|| anyhow!("song index {} out of range ({} songs)", args.song, songs.len()))?;
    let get = |i: usize| {
        song.phrases
            .get(i)
            .ok_or_else(|| anyhow!("phrase index {i} out of range (17 phrases)"))
    };
    let a = get(args.phrase_a)?;
    let b = get(args.phrase_b)?;
    let report = latent_diff(a, b, &lcvae, &dict)?;
    println!(
        "song {} phrases {} vs {} (cm-subtracted latents)",
        args.song, args.phrase_a, args.phrase_b
    );
    println!("dim\t|diff|");
    for (i, d) in report.diffs.iter().enumerate() {
        println!("{i}\t{d:.9}");
    }
    println!("max\t{:.9}", report.max);
    println!("mean\t{:.9}", report.mean);
    Ok(ExitKind::Ok)
}
