//! Layout of a preprocessed corpus directory and helpers to read it back.

use anyhow::{anyhow, Context, Result};
use flngen_core::corpus::{Phrase, SongTensor, PHRASE_STEPS, PITCHES, SONG_PHRASES};
use flngen_core::fln::{ClassLabel, FlnClassDictionary};
use flngen_core::store::Tensor;
use ndarray::Array2;
use std::path::{Path, PathBuf};

pub struct CorpusPaths {
    pub dictionary: PathBuf,
    pub phrases: PathBuf,
    pub phrase_labels: PathBuf,
    pub songs: PathBuf,
    pub song_labels: PathBuf,
    pub manifest: PathBuf,
}

impl CorpusPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            dictionary: dir.join("dictionary.txt"),
            phrases: dir.join("phrases.msw"),
            phrase_labels: dir.join("phrase_labels.msw"),
            songs: dir.join("songs.msw"),
            song_labels: dir.join("song_labels.msw"),
            manifest: dir.join("manifest.txt"),
        }
    }
}

pub fn load_dictionary(dir: &Path) -> Result<FlnClassDictionary> {
    let p = CorpusPaths::new(dir);
    FlnClassDictionary::load(&p.dictionary)
        .map_err(|e| anyhow!("cannot load dictionary from {}: {e}", dir.display()))
}

pub fn load_phrases(dir: &Path) -> Result<(Vec<Phrase>, Vec<ClassLabel>)> {
    let p = CorpusPaths::new(dir);
    let t = Tensor::load(&p.phrases).context("phrase store")?;
    if t.shape.len() != 3 || t.shape[1] != PHRASE_STEPS || t.shape[2] != PITCHES {
        return Err(anyhow!("phrase store has shape {:?}", t.shape));
    }
    let data = t.as_u8()?;
    let n = t.shape[0];
    let stride = PHRASE_STEPS * PITCHES;
    let mut phrases = Vec::with_capacity(n);
    for i in 0..n {
        let grid = Array2::from_shape_vec(
            (PHRASE_STEPS, PITCHES),
            data[i * stride..(i + 1) * stride].to_vec(),
        )?;
        phrases.push(Phrase::new(grid).map_err(|e| anyhow!("phrase {i}: {e}"))?);
    }
    let lt = Tensor::load(&p.phrase_labels).context("phrase label store")?;
    let labels: Vec<ClassLabel> = lt.as_u32()?.into_iter().map(ClassLabel).collect();
    if labels.len() != n {
        return Err(anyhow!("{} phrases but {} labels", n, labels.len()));
    }
    Ok((phrases, labels))
}

pub fn load_songs(dir: &Path) -> Result<Vec<SongTensor>> {
    let p = CorpusPaths::new(dir);
    let t = Tensor::load(&p.songs).context("song store")?;
    if t.shape.len() != 4
        || t.shape[1] != SONG_PHRASES
        || t.shape[2] != PHRASE_STEPS
        || t.shape[3] != PITCHES
    {
        return Err(anyhow!("song store has shape {:?}", t.shape));
    }
    let data = t.as_u8()?;
    let lt = Tensor::load(&p.song_labels).context("song label store")?;
    let labels = lt.as_u32()?;
    let n = t.shape[0];
    if labels.len() != n * SONG_PHRASES {
        return Err(anyhow!("song label store size mismatch"));
    }
    let phrase_stride = PHRASE_STEPS * PITCHES;
    let song_stride = SONG_PHRASES * phrase_stride;
    let mut songs = Vec::with_capacity(n);
    for i in 0..n {
        let mut phrases = Vec::with_capacity(SONG_PHRASES);
        for j in 0..SONG_PHRASES {
            let off = i * song_stride + j * phrase_stride;
            let grid = Array2::from_shape_vec(
                (PHRASE_STEPS, PITCHES),
                data[off..off + phrase_stride].to_vec(),
            )?;
            phrases.push(Phrase::new(grid).map_err(|e| anyhow!("song {i} phrase {j}: {e}"))?);
        }
        let song_labels = labels[i * SONG_PHRASES..(i + 1) * SONG_PHRASES]
            .iter()
            .map(|&v| ClassLabel(v))
            .collect();
        songs.push(SongTensor {
            phrases,
            labels: song_labels,
        });
    }
    Ok(songs)
}

pub fn save_phrases(dir: &Path, phrases: &[Phrase], labels: &[ClassLabel]) -> Result<()> {
    let p = CorpusPaths::new(dir);
    let mut bytes = Vec::with_capacity(phrases.len() * PHRASE_STEPS * PITCHES);
    for ph in phrases {
        bytes.extend(ph.grid().iter().copied());
    }
    Tensor::from_u8(vec![phrases.len(), PHRASE_STEPS, PITCHES], bytes).save(&p.phrases)?;
    let label_vals: Vec<u32> = labels.iter().map(|l| l.0).collect();
    Tensor::from_u32(vec![labels.len()], &label_vals).save(&p.phrase_labels)?;
    Ok(())
}

pub fn save_songs(dir: &Path, songs: &[SongTensor]) -> Result<()> {
    let p = CorpusPaths::new(dir);
    let mut bytes = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for s in songs {
        for ph in &s.phrases {
            bytes.extend(ph.grid().iter().copied());
        }
        labels.extend(s.labels.iter().map(|l| l.0));
    }
    Tensor::from_u8(
        vec![songs.len(), SONG_PHRASES, PHRASE_STEPS, PITCHES],
        bytes,
    )
    .save(&p.songs)?;
    Tensor::from_u32(vec![songs.len(), SONG_PHRASES], &labels).save(&p.song_labels)?;
    Ok(())
}
