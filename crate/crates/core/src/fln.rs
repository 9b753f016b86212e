//! First-and-Last-Notes conditioning: pair extraction from phrases and the
//! frequency-thresholded class dictionary.
//!
//! Labels: 0 is the empty class, 1..=K are dictionary pairs in descending
//! frequency order, K+1 is the catch-all for pairs outside the dictionary.

use crate::corpus::Phrase;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlnError {
    #[error("no pair occurs more than {min_count} times")]
    NoPairs { min_count: usize },
    #[error("malformed dictionary file: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// First and last sounding pitches of a phrase; both empty for silent phrases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlnPair {
    Empty,
    Notes { first: u8, last: u8 },
}

/// Conditioning class in `0..=K+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassLabel(pub u32);

impl ClassLabel {
    /// One-hot over the `K+2` classes.
    pub fn one_hot(self, class_count: usize) -> Vec<f64> {
        assert!((self.0 as usize) < class_count, "label out of range");
        let mut v = vec![0.0; class_count];
        v[self.0 as usize] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    pub label: u32,
    pub first: u8,
    pub last: u8,
    pub count: usize,
}

/// Map from FLN pairs to class labels 1..=K, built from training counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlnClassDictionary {
    pair_to_label: HashMap<(u8, u8), u32>,
    entries: Vec<DictEntry>,
    pub min_count: usize,
}

impl FlnClassDictionary {
    /// Dictionary size K.
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    /// Total classes K+2 (empty + K pairs + other).
    pub fn class_count(&self) -> usize {
        self.k() + 2
    }

    /// Label reserved for pairs outside the dictionary.
    pub fn other_label(&self) -> ClassLabel {
        ClassLabel(self.k() as u32 + 1)
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    /// The stored pair for a concrete label in 1..=K.
    pub fn pair_of(&self, label: ClassLabel) -> Option<(u8, u8)> {
        let idx = label.0 as usize;
        (idx >= 1 && idx <= self.k()).then(|| {
            let e = &self.entries[idx - 1];
            (e.first, e.last)
        })
    }

    pub fn lookup(&self, pair: FlnPair) -> ClassLabel {
        match pair {
            FlnPair::Empty => ClassLabel(0),
            FlnPair::Notes { first, last } => self
                .pair_to_label
                .get(&(first, last))
                .map(|&l| ClassLabel(l))
                .unwrap_or_else(|| self.other_label()),
        }
    }

    /// Text serialization: header lines for K and min_count, then one
    /// `label<TAB>first<TAB>last<TAB>count` line per entry.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "K\t{}", self.k());
        let _ = writeln!(s, "min_count\t{}", self.min_count);
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", e.label, e.first, e.last, e.count);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, FlnError> {
        let mut lines = text.lines();
        let k: usize = parse_header(lines.next(), "K")?;
        let min_count: usize = parse_header(lines.next(), "min_count")?;
        let mut entries = Vec::with_capacity(k);
        let mut pair_to_label = HashMap::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(FlnError::Malformed(format!("bad entry line: {line:?}")));
            }
            let entry = DictEntry {
                label: f[0].parse().map_err(|_| FlnError::Malformed(line.into()))?,
                first: f[1].parse().map_err(|_| FlnError::Malformed(line.into()))?,
                last: f[2].parse().map_err(|_| FlnError::Malformed(line.into()))?,
                count: f[3].parse().map_err(|_| FlnError::Malformed(line.into()))?,
            };
            pair_to_label.insert((entry.first, entry.last), entry.label);
            entries.push(entry);
        }
        if entries.len() != k {
            return Err(FlnError::Malformed(format!(
                "header K={k} but {} entries",
                entries.len()
            )));
        }
        Ok(Self {
            pair_to_label,
            entries,
            min_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FlnError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FlnError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the text serialization; embedded in checkpoints.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        crate::nn::hex_string(&h.finalize())
    }
}

fn parse_header<T: std::str::FromStr>(line: Option<&str>, key: &str) -> Result<T, FlnError> {
    let line = line.ok_or_else(|| FlnError::Malformed(format!("missing {key} header")))?;
    let (k, v) = line
        .split_once('\t')
        .ok_or_else(|| FlnError::Malformed(format!("bad header line: {line:?}")))?;
    if k != key {
        return Err(FlnError::Malformed(format!("expected {key} header, got {k}")));
    }
    v.parse()
        .map_err(|_| FlnError::Malformed(format!("bad {key} value: {v:?}")))
}

/// First and last sounding pitches. At the first/last active step, chords
/// resolve to the highest pitch.
pub fn extract_fln(phrase: &Phrase) -> FlnPair {
    let g = phrase.grid();
    let mut first_step = None;
    let mut last_step = None;
    for t in 0..g.nrows() {
        if g.row(t).iter().any(|&v| v != 0) {
            if first_step.is_none() {
                first_step = Some(t);
            }
            last_step = Some(t);
        }
    }
    match (first_step, last_step) {
        (Some(f), Some(l)) => {
            let top = |t: usize| (0..g.ncols()).rev().find(|&p| g[(t, p)] != 0).unwrap() as u8;
            FlnPair::Notes {
                first: top(f),
                last: top(l),
            }
        }
        _ => FlnPair::Empty,
    }
}

/// Count pairs over a corpus and keep those with count strictly above
/// `min_count`. Labels 1..=K go in descending count order, ties broken by
/// `(first, last)` ascending.
pub fn build_dictionary(
    phrases: &[Phrase],
    min_count: usize,
) -> Result<FlnClassDictionary, FlnError> {
    let mut counts: HashMap<(u8, u8), usize> = HashMap::new();
    for p in phrases {
        if let FlnPair::Notes { first, last } = extract_fln(p) {
            *counts.entry((first, last)).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<((u8, u8), usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c > min_count)
        .collect();
    if kept.is_empty() {
        return Err(FlnError::NoPairs { min_count });
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut pair_to_label = HashMap::new();
    let mut entries = Vec::with_capacity(kept.len());
    for (i, ((first, last), count)) in kept.into_iter().enumerate() {
        let label = i as u32 + 1;
        pair_to_label.insert((first, last), label);
        entries.push(DictEntry {
            label,
            first,
            last,
            count,
        });
    }
    Ok(FlnClassDictionary {
        pair_to_label,
        entries,
        min_count,
    })
}

/// Total labeling: empty phrases to 0, dictionary pairs to their label,
/// anything else to K+1.
pub fn label(phrase: &Phrase, dict: &FlnClassDictionary) -> ClassLabel {
    dict.lookup(extract_fln(phrase))
}

/// Small fixed dictionary for tests in other modules.
#[cfg(test)]
pub fn tests_dict() -> FlnClassDictionary {
    FlnClassDictionary::from_text("K\t2\nmin_count\t1\n1\t60\t67\t10\n2\t64\t60\t5\n").unwrap()
}
