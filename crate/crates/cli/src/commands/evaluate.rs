//! `evaluate`: Table-style objective metrics over a preprocessed corpus or a
//! directory of MIDI files (optionally with side-by-side comparison and FLN
//! accuracy when label files and a dictionary are available).

use crate::config::RunConfig;
use crate::data;
use crate::ExitKind;
use anyhow::{anyhow, Context, Result};
use flngen_core::corpus::{
    load_midi, normalize, split_phrases, steps_per_beat, to_piano_roll, Phrase, RollMeta,
};
use flngen_core::fln::{ClassLabel, FlnClassDictionary};
use flngen_core::metrics::{self, MetricsReport};
use ndarray::Array2;
use std::path::{Path, PathBuf};

pub struct EvaluateArgs<'a> {
    pub input: Input<'a>,
    pub compare: Option<Input<'a>>,
    pub dict: Option<&'a Path>,
    pub out_dir: &'a Path,
}

pub enum Input<'a> {
    MidiDir(&'a Path),
    Corpus(&'a Path),
}

struct LoadedSet {
    name: String,
    grids: Vec<(String, Array2<f64>)>,
    /// per-phrase pairs when label sidecars exist
    fln: Option<(Vec<Phrase>, Vec<ClassLabel>)>,
}

fn load_midi_dir(dir: &Path) -> Result<LoadedSet> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("mid") | Some("midi")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(anyhow!("no MIDI files in {}", dir.display()));
    }
    let mut grids = Vec::new();
    let mut phrases = Vec::new();
    let mut labels = Vec::new();
    let mut any_labels = false;
    for path in &files {
        let loaded = load_midi(path).with_context(|| path.display().to_string())?;
        let norm = normalize(&loaded)?;
        let roll = to_piano_roll(&norm.events, steps_per_beat(), RollMeta::default());
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        // label sidecar written by `generate`
        let sidecar = path.with_extension("labels");
        if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar)?;
            let vals: Result<Vec<u32>> = text
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| anyhow!("bad label in {sidecar:?}")))
                .collect();
            let vals = vals?;
            let ps = split_phrases(&roll);
            if vals.len() == ps.len() {
                any_labels = true;
                phrases.extend(ps);
                labels.extend(vals.into_iter().map(ClassLabel));
            }
        }
        grids.push((name, roll.grid.mapv(f64::from)));
    }
    Ok(LoadedSet {
        name: dir.display().to_string(),
        grids,
        fln: any_labels.then_some((phrases, labels)),
    })
}

fn load_corpus(dir: &Path) -> Result<LoadedSet> {
    let songs = data::load_songs(dir)?;
    if songs.is_empty() {
        return Err(anyhow!("no songs in {}", dir.display()));
    }
    let grids = songs
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("song_{i:03}"), s.grid().mapv(f64::from)))
        .collect();
    Ok(LoadedSet {
        name: dir.display().to_string(),
        grids,
        fln: None,
    })
}

fn load_input(input: &Input) -> Result<LoadedSet> {
    match input {
        Input::MidiDir(d) => load_midi_dir(d),
        Input::Corpus(d) => load_corpus(d),
    }
}

fn evaluate_set(
    set: &LoadedSet,
    cfg: &RunConfig,
    dict: Option<&FlnClassDictionary>,
) -> Result<MetricsReport> {
    let mcfg = cfg.metrics();
    let fln = match (&set.fln, dict) {
        (Some((phrases, labels)), Some(d)) => Some((phrases.as_slice(), labels.as_slice(), d)),
        _ => None,
    };
    metrics::evaluate(&set.grids, &mcfg, fln).map_err(|e| anyhow!("{}: {e}", set.name))
}

fn write_report(out_dir: &Path, stem: &str, name: &str, report: &MetricsReport) -> Result<()> {
    std::fs::write(
        out_dir.join(format!("{stem}.txt")),
        report.to_table(name),
    )?;
    std::fs::write(out_dir.join(format!("{stem}.kv")), report.to_kv())?;
    let mut per_song = String::from("song\tEB(%)\tUPC\tQN(%)\tIT(%)\n");
    for s in &report.per_song {
        per_song.push_str(&format!(
            "{}\t{:.2}\t{:.2}\t{:.1}\t{:.2}\n",
            s.name, s.eb_percent, s.upc, s.qn_percent, s.it_percent
        ));
    }
    std::fs::write(out_dir.join(format!("{stem}_per_song.tsv")), per_song)?;
    Ok(())
}

pub fn run(args: &EvaluateArgs, cfg: &RunConfig) -> Result<ExitKind> {
    std::fs::create_dir_all(args.out_dir)?;
    let dict = match args.dict {
        Some(p) => Some(
            FlnClassDictionary::load(p)
                .map_err(|e| anyhow!("cannot load dictionary {}: {e}", p.display()))?,
        ),
        None => None,
    };

    let set = load_input(&args.input)?;
    let report = evaluate_set(&set, cfg, dict.as_ref())?;
    write_report(args.out_dir, "report", &set.name, &report)?;
    print!("{}", report.to_table(&set.name));

    if let Some(other) = &args.compare {
        let set_b = load_input(other)?;
        let report_b = evaluate_set(&set_b, cfg, dict.as_ref())?;
        write_report(args.out_dir, "report_compare", &set_b.name, &report_b)?;
        print!("{}", report_b.to_table(&set_b.name));
    }
    println!("reports written to {}", args.out_dir.display());
    Ok(ExitKind::Ok)
}
