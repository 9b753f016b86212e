//! `preprocess`: MIDI directory -> phrase/song stores + FLN dictionary.

use crate::config::RunConfig;
use crate::data;
use crate::ExitKind;
use anyhow::{Context, Result};
use flngen_core::corpus::{
    self, build_song_tensor, load_midi, normalize, split_phrases, steps_per_beat, to_piano_roll,
    RollMeta,
};
use flngen_core::fln;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn run(midi_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<ExitKind> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(midi_dir)
        .with_context(|| format!("cannot read {}", midi_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("mid") | Some("midi") | Some("MID")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        eprintln!("no MIDI files found in {}", midi_dir.display());
        return Ok(ExitKind::DataError);
    }

    std::fs::create_dir_all(out_dir)?;
    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    let mut per_song_phrases = Vec::new();
    let mut transpositions = Vec::new();

    for path in &files {
        let step = || -> Result<_, corpus::CorpusError> {
            let loaded = load_midi(path)?;
            let norm = normalize(&loaded)?;
            let roll = to_piano_roll(
                &norm.events,
                steps_per_beat(),
                RollMeta {
                    source: Some(path.clone()),
                    transposition: norm.transposition,
                },
            );
            Ok((split_phrases(&roll), norm.transposition))
        };
        match step() {
            Ok((phrases, transposition)) => {
                per_song_phrases.push((path.clone(), phrases));
                transpositions.push(transposition);
            }
            Err(e) => failures.push((path.clone(), e.to_string())),
        }
    }

    let all_phrases: Vec<_> = per_song_phrases
        .iter()
        .flat_map(|(_, ps)| ps.iter().cloned())
        .collect();
    if all_phrases.is_empty() {
        eprintln!("no phrases extracted from {}", midi_dir.display());
        return Ok(ExitKind::DataError);
    }
    let dict = fln::build_dictionary(&all_phrases, cfg.preprocess_min_count)
        .context("building FLN dictionary")?;

    let labels: Vec<_> = all_phrases.iter().map(|p| fln::label(p, &dict)).collect();

    let mut songs = Vec::new();
    let mut too_short = 0usize;
    for (_, phrases) in &per_song_phrases {
        match build_song_tensor(phrases, &dict) {
            Ok(s) => songs.push(s),
            Err(corpus::CorpusError::TooShort { .. }) => too_short += 1,
            Err(e) => return Err(e.into()),
        }
    }

    let paths = data::CorpusPaths::new(out_dir);
    dict.save(&paths.dictionary)?;
    data::save_phrases(out_dir, &all_phrases, &labels)?;
    data::save_songs(out_dir, &songs)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "files_scanned\t{}", files.len());
    let _ = writeln!(manifest, "files_parsed\t{}", per_song_phrases.len());
    let _ = writeln!(manifest, "files_failed\t{}", failures.len());
    let _ = writeln!(manifest, "phrases\t{}", all_phrases.len());
    let _ = writeln!(manifest, "songs_kept\t{}", songs.len());
    let _ = writeln!(manifest, "songs_too_short\t{}", too_short);
    let _ = writeln!(manifest, "dictionary_k\t{}", dict.k());
    let _ = writeln!(manifest, "class_count\t{}", dict.class_count());
    let _ = writeln!(manifest, "min_count\t{}", cfg.preprocess_min_count);
    for (path, err) in &failures {
        let _ = writeln!(manifest, "failed\t{}\t{}", path.display(), err);
    }
    std::fs::write(&paths.manifest, manifest)?;

    println!(
        "preprocessed {} files: {} phrases, {} songs (K = {}, {} classes), {} parse failures",
        files.len(),
        all_phrases.len(),
        songs.len(),
        dict.k(),
        dict.class_count(),
        failures.len()
    );
    for (path, err) in &failures {
        eprintln!("  failed: {}: {}", path.display(), err);
    }
    Ok(if failures.is_empty() {
        ExitKind::Ok
    } else {
        ExitKind::DataError
    })
}
