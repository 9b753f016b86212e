//! End-to-end grid fidelity: exporting a song to MIDI, parsing it back, and
//! re-rasterizing must reproduce the binary grid exactly. Plus property
//! tests for the preprocessing invariants.

use flngen_core::corpus::{
    self, load_midi, normalize, split_phrases, steps_per_beat, to_piano_roll, Phrase, PianoRoll,
    RollMeta, PHRASE_STEPS, PITCHES, SONG_STEPS,
};
use flngen_core::fln::{self, ClassLabel};
use flngen_core::synthetic;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tempfile::tempdir;

fn random_song_grid(rng: &mut impl Rng) -> Array2<u8> {
    // random monophonic-ish content with varied note lengths and rests
    let mut g = Array2::zeros((SONG_STEPS, PITCHES));
    let mut t = 0usize;
    while t < SONG_STEPS {
        if rng.gen_bool(0.2) {
            t += rng.gen_range(1..8);
            continue;
        }
        let pitch = rng.gen_range(40..100) as usize;
        let len = rng.gen_range(1..12).min(SONG_STEPS - t);
        for s in t..t + len {
            g[(s, pitch)] = 1;
        }
        // occasional chord tone
        if rng.gen_bool(0.1) {
            let p2 = (pitch + 4).min(127);
            for s in t..t + len {
                g[(s, p2)] = 1;
            }
        }
        t += len + 1;
    }
    g
}

#[test]
fn export_load_roll_roundtrip_ten_random_songs() {
    let dir = tempdir().unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for i in 0..10 {
        let grid = random_song_grid(&mut rng);
        let path = dir.path().join(format!("rt_{i}.mid"));
        corpus::export_grid(&grid, &path).unwrap();
        let loaded = load_midi(&path).unwrap();
        let norm = normalize(&loaded).unwrap();
        // generated content is arbitrary; undo whatever transposition the
        // key estimate applied so the grid comparison is direct
        let events: Vec<corpus::NoteEvent> = norm
            .events
            .iter()
            .map(|e| corpus::NoteEvent {
                pitch: (e.pitch as i32 - norm.transposition) as u8,
                ..*e
            })
            .collect();
        let roll = to_piano_roll(&events, steps_per_beat(), RollMeta::default());
        assert_eq!(roll.grid.nrows(), last_active_end(&grid));
        let mut padded = Array2::zeros((SONG_STEPS, PITCHES));
        padded
            .slice_mut(ndarray::s![..roll.grid.nrows(), ..])
            .assign(&roll.grid);
        assert_eq!(padded, grid, "round trip mismatch on song {i}");
    }
}

fn last_active_end(grid: &Array2<u8>) -> usize {
    (0..grid.nrows())
        .rev()
        .find(|&t| grid.row(t).iter().any(|&v| v != 0))
        .map(|t| t + 1)
        .unwrap_or(0)
}

#[test]
fn synthetic_corpus_roundtrips_through_preprocessing() {
    let dir = tempdir().unwrap();
    let grids = synthetic::song_grids(6, 99);
    let paths = synthetic::write_corpus(dir.path(), 6, 99).unwrap();
    for (grid, path) in grids.iter().zip(&paths) {
        let loaded = load_midi(path).unwrap();
        let norm = normalize(&loaded).unwrap();
        assert_eq!(norm.transposition, 0, "synthetic songs are already C major");
        let roll = to_piano_roll(&norm.events, steps_per_beat(), RollMeta::default());
        let phrases = split_phrases(&roll);
        assert_eq!(phrases.len(), 17);
        for (i, p) in phrases.iter().enumerate() {
            let expect = grid.slice(ndarray::s![i * PHRASE_STEPS..(i + 1) * PHRASE_STEPS, ..]);
            assert_eq!(p.grid(), &expect.to_owned(), "{path:?} phrase {i}");
        }
    }
}

#[test]
fn export_empty_song_then_load_reports_empty() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("empty.mid");
    corpus::export_grid(&Array2::zeros((SONG_STEPS, PITCHES)), &path).unwrap();
    assert!(matches!(
        load_midi(&path),
        Err(corpus::CorpusError::EmptyFile)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_phrases_count_is_floor_rows_over_50(rows in 0usize..400) {
        let roll = PianoRoll {
            grid: Array2::zeros((rows, PITCHES)),
            meta: RollMeta::default(),
        };
        prop_assert_eq!(split_phrases(&roll).len(), rows / 50);
    }

    #[test]
    fn label_is_total_and_in_range(cells in proptest::collection::vec((0usize..50, 0usize..128), 0..12)) {
        let mut g: Array2<u8> = Array2::zeros((PHRASE_STEPS, PITCHES));
        for (t, p) in cells {
            g[(t, p)] = 1;
        }
        let phrase = Phrase::new(g).unwrap();
        let dict = fln::FlnClassDictionary::from_text(
            "K\t2\nmin_count\t1\n1\t60\t67\t10\n2\t64\t60\t5\n",
        ).unwrap();
        let label = fln::label(&phrase, &dict);
        prop_assert!(label.0 <= dict.k() as u32 + 1);
        let oh = label.one_hot(dict.class_count());
        prop_assert_eq!(oh.len(), dict.class_count());
        prop_assert_eq!(oh.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn dictionary_counts_exceed_threshold_by_recount(seed in 0u64..500) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut phrases = Vec::new();
        for _ in 0..60 {
            let first = 55 + rng.gen_range(0..6) as usize;
            let last = 55 + rng.gen_range(0..6) as usize;
            let mut g: Array2<u8> = Array2::zeros((PHRASE_STEPS, PITCHES));
            g[(0, first)] = 1;
            g[(49, last)] = 1;
            phrases.push(Phrase::new(g).unwrap());
        }
        if let Ok(dict) = fln::build_dictionary(&phrases, 2) {
            // independent recount
            for e in dict.entries() {
                let count = phrases
                    .iter()
                    .filter(|p| {
                        fln::extract_fln(p)
                            == fln::FlnPair::Notes { first: e.first, last: e.last }
                    })
                    .count();
                prop_assert_eq!(count, e.count);
                prop_assert!(count > 2);
            }
        }
    }
}

#[test]
fn dictionary_matches_brute_force_counter_on_synthetic_corpus() {
    // independent oracle: hash-map count over extracted pairs
    use std::collections::HashMap;
    let grids = synthetic::song_grids(30, 17);
    let phrases = synthetic::all_phrases(&grids);
    assert_eq!(phrases.len(), 510);
    let min_count = 10;
    let dict = fln::build_dictionary(&phrases, min_count).unwrap();

    let mut counter: HashMap<(u8, u8), usize> = HashMap::new();
    for p in &phrases {
        if let fln::FlnPair::Notes { first, last } = fln::extract_fln(p) {
            *counter.entry((first, last)).or_insert(0) += 1;
        }
    }
    let mut expected: Vec<((u8, u8), usize)> = counter
        .into_iter()
        .filter(|&(_, c)| c > min_count)
        .collect();
    expected.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    assert_eq!(dict.k(), expected.len());
    for (i, ((first, last), count)) in expected.into_iter().enumerate() {
        let label = ClassLabel(i as u32 + 1);
        assert_eq!(dict.pair_of(label), Some((first, last)));
        assert_eq!(dict.entries()[i].count, count);
    }
}
