//! Objective evaluation: empty bars, used pitch classes per bar, qualified
//! notes, irregular tone, FLN accuracy, and latent-difference reports.
//!
//! Bars are 25 steps (34 per song). Notes are reconstructed from rolls by
//! merging consecutive same-pitch steps. "Qualified" means at least
//! `qn_min_steps` steps long; "irregular" means a pitch class outside the
//! C-major scale the preprocessing transposes into.

use crate::corpus::{grid_to_notes, Phrase, BAR_STEPS};
use crate::fln::{extract_fln, ClassLabel, FlnClassDictionary, FlnPair};
use crate::lcvae::Lcvae;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty evaluation set")]
    EmptySet,
    #[error("no phrases with concrete conditioning labels")]
    NoConstrainedPhrases,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub bar_steps: usize,
    pub qn_min_steps: usize,
    /// Count empty bars (as zero) in the UPC average.
    pub upc_includes_empty_bars: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bar_steps: BAR_STEPS,
            qn_min_steps: 2,
            upc_includes_empty_bars: true,
        }
    }
}

/// Aggregate metric values plus the per-song breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eb_percent: f64,
    pub upc: f64,
    pub qn_percent: f64,
    pub it_percent: f64,
    pub fln_accuracy_percent: Option<f64>,
    pub per_song: Vec<SongMetrics>,
    pub config: MetricsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SongMetrics {
    pub name: String,
    pub eb_percent: f64,
    pub upc: f64,
    pub qn_percent: f64,
    pub it_percent: f64,
}

const DIATONIC: [bool; 12] = [
    true, false, true, false, true, true, false, true, false, true, false, true,
];

struct Counts {
    bars: usize,
    empty_bars: usize,
    pitch_classes: usize,
    notes: usize,
    qualified: usize,
    irregular: usize,
}

fn count_song(grid: &Array2<f64>, cfg: &MetricsConfig) -> Counts {
    let steps = grid.nrows();
    let nbars = steps / cfg.bar_steps;
    let mut empty_bars = 0;
    let mut pitch_classes = 0;
    for b in 0..nbars {
        let bar = grid.slice(ndarray::s![b * cfg.bar_steps..(b + 1) * cfg.bar_steps, ..]);
        let mut pcs = [false; 12];
        let mut any = false;
        for t in 0..bar.nrows() {
            for p in 0..bar.ncols() {
                if bar[(t, p)] != 0.0 {
                    any = true;
                    pcs[p % 12] = true;
                }
            }
        }
        if !any {
            empty_bars += 1;
        }
        pitch_classes += pcs.iter().filter(|&&x| x).count();
    }
    let bin = grid.mapv(|v| u8::from(v != 0.0));
    let notes = grid_to_notes(&bin);
    let qualified = notes.iter().filter(|&&(_, _, len)| len >= cfg.qn_min_steps).count();
    let irregular = notes
        .iter()
        .filter(|&&(p, _, _)| !DIATONIC[(p % 12) as usize])
        .count();
    Counts {
        bars: nbars,
        empty_bars,
        pitch_classes,
        notes: notes.len(),
        qualified,
        irregular,
    }
}

/// Percentage of all-zero bars.
pub fn empty_bars(songs: &[Array2<f64>], cfg: &MetricsConfig) -> Result<f64, MetricsError> {
    let (mut bars, mut empty) = (0usize, 0usize);
    for s in songs {
        let c = count_song(s, cfg);
        bars += c.bars;
        empty += c.empty_bars;
    }
    if bars == 0 {
        return Err(MetricsError::EmptySet);
    }
    Ok(100.0 * empty as f64 / bars as f64)
}

/// Distinct pitch classes per bar, averaged.
pub fn used_pitch_classes(songs: &[Array2<f64>], cfg: &MetricsConfig) -> Result<f64, MetricsError> {
    let (mut bars, mut pcs, mut empty) = (0usize, 0usize, 0usize);
    for s in songs {
        let c = count_song(s, cfg);
        bars += c.bars;
        pcs += c.pitch_classes;
        empty += c.empty_bars;
    }
    let denom = if cfg.upc_includes_empty_bars {
        bars
    } else {
        bars - empty
    };
    if denom == 0 {
        return Err(MetricsError::EmptySet);
    }
    Ok(pcs as f64 / denom as f64)
}

/// Percentage of notes at least `qn_min_steps` long.
pub fn qualified_notes(songs: &[Array2<f64>], cfg: &MetricsConfig) -> Result<f64, MetricsError> {
    let (mut notes, mut q) = (0usize, 0usize);
    for s in songs {
        let c = count_song(s, cfg);
        notes += c.notes;
        q += c.qualified;
    }
    if notes == 0 {
        return Err(MetricsError::EmptySet);
    }
    Ok(100.0 * q as f64 / notes as f64)
}

/// Percentage of notes whose pitch class is outside C major.
pub fn irregular_tone(songs: &[Array2<f64>], cfg: &MetricsConfig) -> Result<f64, MetricsError> {
    let (mut notes, mut irr) = (0usize, 0usize);
    for s in songs {
        let c = count_song(s, cfg);
        notes += c.notes;
        irr += c.irregular;
    }
    if notes == 0 {
        return Err(MetricsError::EmptySet);
    }
    Ok(100.0 * irr as f64 / notes as f64)
}

/// Fraction of generated phrases whose extracted pair matches the pair of
/// their conditioning label. Labels 0 and K+1 have no concrete pair and are
/// excluded from the denominator.
pub fn fln_accuracy(
    phrases: &[Phrase],
    labels: &[ClassLabel],
    dict: &FlnClassDictionary,
) -> Result<f64, MetricsError> {
    assert_eq!(phrases.len(), labels.len());
    let mut total = 0usize;
    let mut hit = 0usize;
    for (p, l) in phrases.iter().zip(labels) {
        let Some((first, last)) = dict.pair_of(*l) else {
            continue;
        };
        total += 1;
        if extract_fln(p) == (FlnPair::Notes { first, last }) {
            hit += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::NoConstrainedPhrases);
    }
    Ok(100.0 * hit as f64 / total as f64)
}

/// Full report over song grids (values may be probabilities or binary).
pub fn evaluate(
    songs: &[(String, Array2<f64>)],
    cfg: &MetricsConfig,
    fln: Option<(&[Phrase], &[ClassLabel], &FlnClassDictionary)>,
) -> Result<MetricsReport, MetricsError> {
    if songs.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let grids: Vec<Array2<f64>> = songs.iter().map(|(_, g)| g.clone()).collect();
    let per_song = songs
        .iter()
        .map(|(name, g)| {
            let one = std::slice::from_ref(g);
            Ok(SongMetrics {
                name: name.clone(),
                eb_percent: empty_bars(one, cfg)?,
                upc: used_pitch_classes(one, cfg)?,
                qn_percent: qualified_notes(one, cfg).unwrap_or(0.0),
                it_percent: irregular_tone(one, cfg).unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let fln_accuracy_percent = match fln {
        Some((phrases, labels, dict)) => Some(fln_accuracy(phrases, labels, dict)?),
        None => None,
    };
    Ok(MetricsReport {
        eb_percent: empty_bars(&grids, cfg)?,
        upc: used_pitch_classes(&grids, cfg)?,
        qn_percent: qualified_notes(&grids, cfg)?,
        it_percent: irregular_tone(&grids, cfg)?,
        fln_accuracy_percent,
        per_song,
        config: cfg.clone(),
    })
}

impl MetricsReport {
    /// Flat table with the four metric columns plus FLN accuracy.
    pub fn to_table(&self, row_name: &str) -> String {
        let mut s = String::new();
        s.push_str("set\tEB(%)\tUPC\tQN(%)\tIT(%)\tFLN-acc(%)\n");
        s.push_str(&format!(
            "{}\t{:.2}\t{:.2}\t{:.1}\t{:.2}\t{}\n",
            row_name,
            self.eb_percent,
            self.upc,
            self.qn_percent,
            self.it_percent,
            match self.fln_accuracy_percent {
                Some(v) => format!("{v:.1}"),
                None => "-".to_string(),
            }
        ));
        s
    }

    /// Machine-readable key-value lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("eb_percent = {:.6}\n", self.eb_percent));
        s.push_str(&format!("upc = {:.6}\n", self.upc));
        s.push_str(&format!("qn_percent = {:.6}\n", self.qn_percent));
        s.push_str(&format!("it_percent = {:.6}\n", self.it_percent));
        if let Some(v) = self.fln_accuracy_percent {
            s.push_str(&format!("fln_accuracy_percent = {v:.6}\n"));
        }
        s.push_str(&format!("bar_steps = {}\n", self.config.bar_steps));
        s.push_str(&format!("qn_min_steps = {}\n", self.config.qn_min_steps));
        s.push_str(&format!(
            "upc_includes_empty_bars = {}\n",
            self.config.upc_includes_empty_bars
        ));
        s.push_str(&format!("songs = {}\n", self.per_song.len()));
        s
    }
}

/// Per-dimension |(mu_a - cm_a) - (mu_b - cm_b)| between two phrases.
#[derive(Debug, Clone)]
pub struct LatentDiffReport {
    pub diffs: Array1<f64>,
    pub max: f64,
    pub mean: f64,
}

pub fn latent_diff(
    a: &Phrase,
    b: &Phrase,
    lcvae: &Lcvae,
    dict: &FlnClassDictionary,
) -> Result<LatentDiffReport, crate::error::ModelError> {
    let la = dict.lookup(extract_fln(a));
    let lb = dict.lookup(extract_fln(b));
    let (mus, _) = lcvae.encode_batch_grids(&[a.grid().clone(), b.grid().clone()]);
    let cma = lcvae.class_mean(la)?;
    let cmb = lcvae.class_mean(lb)?;
    let va = &mus.row(0).to_owned() - &cma;
    let vb = &mus.row(1).to_owned() - &cmb;
    let diffs = (&va - &vb).mapv(f64::abs);
    let max = diffs.iter().cloned().fold(0.0, f64::max);
    let mean = diffs.sum() / diffs.len() as f64;
    Ok(LatentDiffReport { diffs, max, mean })
}
