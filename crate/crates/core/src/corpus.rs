//! MIDI corpus preprocessing: parsing, key/tempo normalization, piano-roll
//! conversion, phrase slicing, song tensors, and MIDI export.
//!
//! Timing is kept rational end to end. One phrase is 50 steps covering 8
//! beats (6.25 steps per beat); a song is 17 phrases = 850 steps = 34
//! four-beat bars. Exported files use 500 ticks per quarter at 120 bpm, so
//! one step is exactly 80 ticks and round-trips are bit-exact.

use crate::fln::{self, ClassLabel, FlnClassDictionary};
use crate::midi::{self, MidiError, RawNote, SmfData};
use ndarray::Array2;
use num_rational::Ratio;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub type Beats = Ratio<i64>;

pub const PITCHES: usize = 128;
pub const PHRASE_STEPS: usize = 50;
pub const SONG_PHRASES: usize = 17;
pub const SONG_STEPS: usize = PHRASE_STEPS * SONG_PHRASES;
pub const BAR_STEPS: usize = 25;
pub const BARS_PER_SONG: usize = SONG_STEPS / BAR_STEPS;
/// One phrase spans 8 beats: 6.25 steps per beat.
pub fn steps_per_beat() -> Beats {
    Ratio::new(PHRASE_STEPS as i64, 8)
}
/// Export timing: 500 ticks per quarter at 120 bpm puts one step at 80 ticks.
pub const EXPORT_DIVISION: u16 = 500;
pub const EXPORT_US_PER_QN: i64 = 500_000;
pub const STEP_TICKS: i64 = 80;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("file contains no note events")]
    EmptyFile,
    #[error("key estimation failed: empty pitch histogram")]
    KeyEstimation,
    #[error("song too short: {phrases} phrases, need {SONG_PHRASES}")]
    TooShort { phrases: usize },
    #[error("bad grid shape: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("grid entries must be 0 or 1")]
    NotBinary,
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl From<MidiError> for CorpusError {
    fn from(e: MidiError) -> Self {
        match e {
            MidiError::Parse(msg) => CorpusError::Parse(msg),
            MidiError::EmptyFile => CorpusError::EmptyFile,
            MidiError::Io(e) => CorpusError::Io(e),
        }
    }
}

/// A note with onset and duration in beats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: Beats,
    pub duration: Beats,
    pub velocity: u8,
}

/// Parsed file: events in source beats plus the tempo map needed to re-time
/// them onto the 120 bpm grid.
#[derive(Debug, Clone)]
pub struct LoadedMidi {
    pub events: Vec<NoteEvent>,
    smf: SmfData,
}

/// Events after key/tempo normalization, onsets on the 120 bpm beat grid.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub events: Vec<NoteEvent>,
    /// Semitone shift that was applied (0 or negative: down to C major).
    pub transposition: i32,
}

#[derive(Debug, Clone, Default)]
pub struct RollMeta {
    pub source: Option<PathBuf>,
    pub transposition: i32,
}

/// Binary time×pitch activation matrix; columns are the 128 MIDI pitches.
#[derive(Debug, Clone)]
pub struct PianoRoll {
    pub grid: Array2<u8>,
    pub meta: RollMeta,
}

/// A 50×128 slice of a piano roll.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phrase {
    grid: Array2<u8>,
}

impl Phrase {
    pub fn new(grid: Array2<u8>) -> Result<Self, CorpusError> {
        let got = (grid.nrows(), grid.ncols());
        if got != (PHRASE_STEPS, PITCHES) {
            return Err(CorpusError::Shape {
                expected: (PHRASE_STEPS, PITCHES),
                got,
            });
        }
        if grid.iter().any(|&v| v > 1) {
            return Err(CorpusError::NotBinary);
        }
        Ok(Self { grid })
    }

    pub fn zeros() -> Self {
        Self {
            grid: Array2::zeros((PHRASE_STEPS, PITCHES)),
        }
    }

    pub fn grid(&self) -> &Array2<u8> {
        &self.grid
    }
}

/// Exactly 17 phrases with their conditioning labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SongTensor {
    pub phrases: Vec<Phrase>,
    pub labels: Vec<ClassLabel>,
}

impl SongTensor {
    /// Concatenated 850×128 grid.
    pub fn grid(&self) -> Array2<u8> {
        let mut g = Array2::zeros((SONG_STEPS, PITCHES));
        for (i, p) in self.phrases.iter().enumerate() {
            g.slice_mut(ndarray::s![i * PHRASE_STEPS..(i + 1) * PHRASE_STEPS, ..])
                .assign(p.grid());
        }
        g
    }

    /// Split an 850×128 grid back into 17 phrases, labeling them via `dict`.
    pub fn from_grid(grid: &Array2<u8>, dict: &FlnClassDictionary) -> Result<Self, CorpusError> {
        let got = (grid.nrows(), grid.ncols());
        if got != (SONG_STEPS, PITCHES) {
            return Err(CorpusError::Shape {
                expected: (SONG_STEPS, PITCHES),
                got,
            });
        }
        let mut phrases = Vec::with_capacity(SONG_PHRASES);
        for i in 0..SONG_PHRASES {
            let g = grid
                .slice(ndarray::s![i * PHRASE_STEPS..(i + 1) * PHRASE_STEPS, ..])
                .to_owned();
            phrases.push(Phrase::new(g)?);
        }
        let labels = phrases.iter().map(|p| fln::label(p, dict)).collect();
        Ok(Self { phrases, labels })
    }
}

/// Parse a MIDI file into note events sorted by onset (in source beats),
/// retaining the tempo map for normalization.
pub fn load_midi(path: &Path) -> Result<LoadedMidi, CorpusError> {
    let smf = midi::read_smf(path)?;
    let div = smf.division as i64;
    let events = smf
        .notes
        .iter()
        .map(|n| NoteEvent {
            pitch: n.pitch,
            onset: Ratio::new(n.onset_tick, div),
            duration: Ratio::new(n.duration_ticks.max(1), div),
            velocity: n.velocity,
        })
        .collect();
    Ok(LoadedMidi { events, smf })
}

pub const KRUMHANSL_MAJOR: [f64; 12] = [
    6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88,
];

fn pearson(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..12 {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    let den = (da * db).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Estimate the major-key tonic pitch class of a duration-weighted pitch-class
/// histogram: highest Krumhansl-profile correlation wins, ties to the smallest
/// tonic (= smallest absolute downward transposition).
pub fn estimate_tonic(events: &[NoteEvent]) -> Result<u8, CorpusError> {
    let mut hist = [0.0f64; 12];
    for e in events {
        hist[(e.pitch % 12) as usize] += ratio_to_f64(e.duration);
    }
    if hist.iter().sum::<f64>() <= 0.0 {
        return Err(CorpusError::KeyEstimation);
    }
    let mut best_k = 0usize;
    let mut best_c = f64::NEG_INFINITY;
    for k in 0..12 {
        let mut rot = [0.0f64; 12];
        for j in 0..12 {
            rot[j] = hist[(j + k) % 12];
        }
        let c = pearson(&KRUMHANSL_MAJOR, &rot);
        if c > best_c {
            best_c = c;
            best_k = k;
        }
    }
    Ok(best_k as u8)
}

pub fn ratio_to_f64(r: Beats) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn transpose_pitch(pitch: u8, offset: i32) -> u8 {
    let mut p = pitch as i32 + offset;
    // keep the pitch class, rescuing out-of-range notes by octave
    while p < 0 {
        p += 12;
    }
    while p > 127 {
        p -= 12;
    }
    p as u8
}

/// Key- and tempo-normalize parsed events: re-time onto the 120 bpm beat grid
/// using the retained tempo map, then transpose down so the estimated key is
/// C major.
pub fn normalize(midi: &LoadedMidi) -> Result<Normalized, CorpusError> {
    let div = midi.smf.division as i64;
    let retimed: Vec<NoteEvent> = midi
        .events
        .iter()
        .map(|e| {
            let onset_tick = e.onset * div;
            let end_tick = (e.onset + e.duration) * div;
            NoteEvent {
                pitch: e.pitch,
                onset: tick_to_beats_120(onset_tick, div, &midi.smf),
                duration: tick_to_beats_120(end_tick, div, &midi.smf)
                    - tick_to_beats_120(onset_tick, div, &midi.smf),
                velocity: e.velocity,
            }
        })
        .collect();
    normalize_at_120(&retimed)
}

/// Transposition step of [`normalize`], for events already on the 120 bpm
/// grid. Idempotent: a second application estimates C and shifts by 0.
pub fn normalize_at_120(events: &[NoteEvent]) -> Result<Normalized, CorpusError> {
    let tonic = estimate_tonic(events)? as i32;
    let offset = -tonic;
    let events = events
        .iter()
        .map(|e| NoteEvent {
            pitch: transpose_pitch(e.pitch, offset),
            ..*e
        })
        .collect();
    Ok(Normalized {
        events,
        transposition: offset,
    })
}

/// Wall-clock microseconds of an absolute tick under the tempo map, expressed
/// as beats at 120 bpm (1 beat = 500 000 us). Exact rational arithmetic.
fn tick_to_beats_120(tick: Ratio<i64>, division: i64, smf: &SmfData) -> Beats {
    let mut us: Ratio<i64> = Ratio::new(0, 1);
    let mut prev_tick = Ratio::new(0, 1);
    let mut prev_tempo = 500_000i64;
    for ev in &smf.tempo_map {
        let ev_tick = Ratio::from_integer(ev.tick);
        if ev_tick >= tick {
            break;
        }
        us += (ev_tick - prev_tick) * Ratio::new(prev_tempo, division);
        prev_tick = ev_tick;
        prev_tempo = ev.us_per_qn;
    }
    us += (tick - prev_tick) * Ratio::new(prev_tempo, division);
    us / 500_000
}

fn round_half_up(x: Ratio<i64>) -> i64 {
    (x + Ratio::new(1, 2)).floor().to_integer()
}

/// Rasterize events to a binary roll. Onsets/offsets quantize to the nearest
/// step; a note never occupies fewer than one step.
pub fn to_piano_roll(events: &[NoteEvent], steps_per_beat: Beats, meta: RollMeta) -> PianoRoll {
    let mut spans = Vec::with_capacity(events.len());
    let mut rows = 0i64;
    for e in events {
        let start = round_half_up(e.onset * steps_per_beat);
        let mut end = round_half_up((e.onset + e.duration) * steps_per_beat);
        if end <= start {
            end = start + 1;
        }
        rows = rows.max(end);
        spans.push((start, end, e.pitch));
    }
    let mut grid = Array2::zeros((rows.max(0) as usize, PITCHES));
    for (start, end, pitch) in spans {
        for t in start..end {
            grid[(t as usize, pitch as usize)] = 1;
        }
    }
    PianoRoll { grid, meta }
}

/// Non-overlapping 50-row windows from row 0; a trailing remainder of fewer
/// than 50 rows is discarded.
pub fn split_phrases(roll: &PianoRoll) -> Vec<Phrase> {
    let n = roll.grid.nrows() / PHRASE_STEPS;
    (0..n)
        .map(|i| Phrase {
            grid: roll
                .grid
                .slice(ndarray::s![i * PHRASE_STEPS..(i + 1) * PHRASE_STEPS, ..])
                .to_owned(),
        })
        .collect()
}

/// Take the first 17 phrases of a song and label them; shorter songs are
/// rejected rather than padded.
pub fn build_song_tensor(
    phrases: &[Phrase],
    dict: &FlnClassDictionary,
) -> Result<SongTensor, CorpusError> {
    if phrases.len() < SONG_PHRASES {
        return Err(CorpusError::TooShort {
            phrases: phrases.len(),
        });
    }
    let phrases: Vec<Phrase> = phrases[..SONG_PHRASES].to_vec();
    let labels = phrases.iter().map(|p| fln::label(p, dict)).collect();
    Ok(SongTensor { phrases, labels })
}

/// Merge consecutive active steps per pitch into sustained notes.
pub fn grid_to_notes(grid: &Array2<u8>) -> Vec<(u8, usize, usize)> {
    let mut notes = Vec::new();
    for pitch in 0..grid.ncols() {
        let mut run_start: Option<usize> = None;
        for t in 0..=grid.nrows() {
            let on = t < grid.nrows() && grid[(t, pitch)] != 0;
            match (run_start, on) {
                (None, true) => run_start = Some(t),
                (Some(s), false) => {
                    notes.push((pitch as u8, s, t - s));
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    notes.sort_by_key(|&(p, s, _)| (s, p));
    notes
}

/// Write a song as a single-track format-0 file at 120 bpm.
pub fn export_midi(song: &SongTensor, path: &Path) -> Result<(), CorpusError> {
    export_grid(&song.grid(), path)
}

/// Write any binary grid as a single-track format-0 file at 120 bpm.
pub fn export_grid(grid: &Array2<u8>, path: &Path) -> Result<(), CorpusError> {
    let notes: Vec<RawNote> = grid_to_notes(grid)
        .into_iter()
        .map(|(pitch, start, len)| RawNote {
            pitch,
            velocity: 100,
            onset_tick: start as i64 * STEP_TICKS,
            duration_ticks: len as i64 * STEP_TICKS,
        })
        .collect();
    midi::write_smf(path, EXPORT_DIVISION, EXPORT_US_PER_QN, &notes)?;
    Ok(())
}
