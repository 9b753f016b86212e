//! Criterion benchmarks for the pipeline's hot paths: piano-roll conversion,
//! metric computation, phrase encoding, and one adversarial critic step.

use criterion::{criterion_group, criterion_main, Criterion};
use flngen_core::corpus::{self, steps_per_beat, to_piano_roll, NoteEvent, RollMeta};
use flngen_core::fln::build_dictionary;
use flngen_core::hcgan::{interpolate, GanConfig, Hcgan};
use flngen_core::hcvae::{Gvae, GvaeConfig, Hcvae, ReconTarget};
use flngen_core::lcvae::{Lcvae, LcvaeConfig};
use flngen_core::metrics::{self, MetricsConfig};
use flngen_core::synthetic;
use ndarray::Array2;
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::hint::black_box;

fn bench_piano_roll(c: &mut Criterion) {
    let grids = synthetic::song_grids(4, 1);
    let events: Vec<NoteEvent> = grids
        .iter()
        .flat_map(|g| corpus::grid_to_notes(g))
        .map(|(pitch, start, len)| NoteEvent {
            pitch,
            onset: Ratio::new(start as i64 * 4, 25),
            duration: Ratio::new(len as i64 * 4, 25),
            velocity: 100,
        })
        .collect();
    c.bench_function("to_piano_roll_4_songs", |b| {
        b.iter(|| to_piano_roll(black_box(&events), steps_per_beat(), RollMeta::default()))
    });
}

fn bench_metrics(c: &mut Criterion) {
    let grids: Vec<Array2<f64>> = synthetic::song_grids(16, 2)
        .iter()
        .map(|g| g.mapv(f64::from))
        .collect();
    let cfg = MetricsConfig::default();
    c.bench_function("metrics_16_songs", |b| {
        b.iter(|| {
            let eb = metrics::empty_bars(black_box(&grids), &cfg).unwrap();
            let upc = metrics::used_pitch_classes(&grids, &cfg).unwrap();
            let qn = metrics::qualified_notes(&grids, &cfg).unwrap();
            let it = metrics::irregular_tone(&grids, &cfg).unwrap();
            (eb, upc, qn, it)
        })
    });
}

fn small_models() -> (Hcgan, Vec<Array2<f64>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let grids = synthetic::song_grids(8, 3);
    let phrases = synthetic::all_phrases(&grids);
    let dict = build_dictionary(&phrases, 5).unwrap();
    let lcvae = Lcvae::new(
        LcvaeConfig {
            latent_dim: 16,
            intermediate_dim: 32,
            eps_var: 0.01,
            batch_size: 8,
            class_count: dict.class_count(),
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 1,
            binarize_threshold: 0.5,
            seed: 3,
        },
        &mut rng,
    );
    let gvae = Gvae::new(
        GvaeConfig {
            latent_dim: 32,
            intermediate_dim: 32,
            eps_var: 0.1,
            batch_size: 4,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 1,
            recon_target: ReconTarget::Song,
            seed: 3,
        },
        16,
        &mut rng,
    );
    let hcvae = Hcvae {
        lcvae,
        gvae,
        flnseq: None,
    };
    let gan = Hcgan::new(
        hcvae,
        GanConfig {
            gp_weight: 1.0,
            critic_steps_per_gen: 1,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            batch_size: 2,
            steps: 1,
            conv_channels: (16, 8),
            shared_encoder_trainable: true,
            lcvae_decoder_trainable: false,
            seed: 3,
        },
        &mut rng,
    );
    let f64_grids = grids.iter().map(|g| g.mapv(f64::from)).collect();
    (gan, f64_grids)
}

fn bench_encode(c: &mut Criterion) {
    let (gan, _) = small_models();
    let grids = synthetic::song_grids(1, 4);
    let phrase_grids: Vec<Array2<u8>> = (0..17)
        .map(|i| {
            grids[0]
                .slice(ndarray::s![i * 50..(i + 1) * 50, ..])
                .to_owned()
        })
        .collect();
    c.bench_function("lcvae_encode_17_phrases", |b| {
        b.iter(|| gan.hcvae.lcvae.encode_batch_grids(black_box(&phrase_grids)))
    });
}

fn bench_critic_step(c: &mut Criterion) {
    let (gan, grids) = small_models();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let real = vec![grids[0].clone(), grids[1].clone()];
    let fake = vec![grids[2].clone(), grids[3].clone()];
    let xhat = interpolate(&real, &fake, &mut rng);
    c.bench_function("critic_loss_with_penalty_gradients", |b| {
        b.iter(|| gan.critic_loss_grads(black_box(&real), &fake, &xhat))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_piano_roll, bench_metrics, bench_encode, bench_critic_step
}
criterion_main!(benches);
