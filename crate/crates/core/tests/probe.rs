//! Throwaway sizing probe (ignored by default): measures Task-1 step time
//! and FLN accuracy trajectory at candidate desk dimensions.

use flngen_core::fln::{build_dictionary, ClassLabel};
use flngen_core::lcvae::{Lcvae, LcvaeConfig};
use flngen_core::metrics::fln_accuracy;
use flngen_core::synthetic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

#[test]
#[ignore]
fn probe_task1_sizing() {
    for &(hidden, epochs_per_round, rounds) in &[(48usize, 10usize, 6usize), (32, 10, 6)] {
        let grids = synthetic::song_grids(50, 424242);
        let phrases = synthetic::all_phrases(&grids);
        let dict = build_dictionary(&phrases, 20).unwrap();
        let labels: Vec<ClassLabel> =
            phrases.iter().map(|p| flngen_core::fln::label(p, &dict)).collect();
        println!("hidden={hidden} K={} classes={} phrases={}", dict.k(), dict.class_count(), phrases.len());

        let cfg = LcvaeConfig {
            latent_dim: 32,
            intermediate_dim: hidden,
            eps_var: 0.01,
            batch_size: 16,
            class_count: dict.class_count(),
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: epochs_per_round,
            binarize_threshold: 0.5,
            seed: 1,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut model = Lcvae::new(cfg, &mut rng);
        for round in 0..rounds {
            let t0 = Instant::now();
            let log = model.train(&phrases, &labels, &mut rng, |_, _| {}).unwrap();
            let secs = t0.elapsed().as_secs_f64();
            // accuracy over 100 generated phrases
            let mut gen_rng = ChaCha20Rng::seed_from_u64(99);
            let mut gen_phrases = Vec::new();
            let mut gen_labels = Vec::new();
            for _ in 0..100 {
                let l = ClassLabel(gen_rng.gen_range(1..=dict.k() as u32));
                gen_phrases.push(model.generate_phrase(l, &mut gen_rng).unwrap());
                gen_labels.push(l);
            }
            let acc = fln_accuracy(&gen_phrases, &gen_labels, &dict).unwrap();
            println!(
                "hidden={} after {} epochs: loss={:.2} fln_acc={:.1}% ({:.1}s for {} epochs, {:.2}s/epoch)",
                hidden,
                (round + 1) * epochs_per_round,
                log.last().unwrap().total,
                acc,
                secs,
                epochs_per_round,
                secs / epochs_per_round as f64
            );
        }
    }
}
