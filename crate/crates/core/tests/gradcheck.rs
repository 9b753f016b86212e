//! Numerical oracles for the loss functions: quadrature for the class-mean
//! KL, central finite differences for every analytic gradient (including the
//! second-order gradient-penalty path), Monte Carlo for the reparameterized
//! sampler, and closed-form cases for the gradient penalty.

use flngen_core::autodiff::Tape;
use flngen_core::corpus::{Phrase, PHRASE_STEPS, PITCHES, SONG_PHRASES, SONG_STEPS};
use flngen_core::fln::ClassLabel;
use flngen_core::hcgan::{gradient_penalty_graph, interpolate, GanConfig, Hcgan};
use flngen_core::hcvae::{Gvae, GvaeConfig, Hcvae, ReconTarget};
use flngen_core::lcvae::{
    kl_closed_form, labels_one_hot, phrase_step_inputs, sample_with_eps, EncoderOutput, Lcvae,
    LcvaeConfig,
};
use flngen_core::nn::{gradient_map, normal_noise, Binder, Params};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

// ---- Eq.-4 KL vs quadrature ----

/// Simpson integration of KL(N(mu, s2) || N(c, 1)) for one dimension.
fn kl_quadrature_1d(mu: f64, s2: f64, c: f64) -> f64 {
    let s = s2.sqrt();
    let lo = (mu - 15.0 * s).min(c - 15.0);
    let hi = (mu + 15.0 * s).max(c + 15.0);
    let n = 60_001usize; // odd
    let h = (hi - lo) / (n - 1) as f64;
    let f = |x: f64| {
        let p = (-0.5 * (x - mu) * (x - mu) / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
        let logp = -0.5 * (x - mu) * (x - mu) / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        let logq = -0.5 * (x - c) * (x - c) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        p * (logp - logq)
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn kl_matches_quadrature_on_100_random_cases() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.gen_range(1..=4);
        let mut quad = 0.0;
        let mut mu = Array1::zeros(d);
        let mut lv = Array1::zeros(d);
        let mut cm = Array1::zeros(d);
        for i in 0..d {
            mu[i] = rng.gen_range(-3.0..3.0);
            let s2: f64 = rng.gen_range(0.1..5.0);
            lv[i] = s2.ln();
            cm[i] = rng.gen_range(-3.0..3.0);
            quad += kl_quadrature_1d(mu[i], s2, cm[i]);
        }
        let closed = kl_closed_form(&mu, &lv, &cm);
        worst = worst.max((closed - quad).abs());
    }
    assert!(worst < 1e-6, "max |closed - quadrature| = {worst}");
}

#[test]
fn kl_spot_values_from_standalone_script() {
    // frozen by an independent quadrature script before the build
    let case = |mu: f64, s2: f64, c: f64| {
        kl_closed_form(
            &Array1::from_vec(vec![mu]),
            &Array1::from_vec(vec![s2.ln()]),
            &Array1::from_vec(vec![c]),
        )
    };
    assert!((case(0.3, 0.5, -0.7) - 0.596573590280).abs() < 1e-10);
    assert!((case(-1.2, 2.5, 0.4) - 1.571854634063).abs() < 1e-10);
    assert!((case(2.0, 0.1, -1.0) - 5.201292546497).abs() < 1e-10);
}

// ---- gradient checks ----

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Sample (tensor, flat index) pairs across all parameters, round-robin.
fn sample_param_indices(
    params: &dyn Params,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    params.visit(&mut |name, t| {
        for _ in 0..per_tensor {
            out.push((name.to_string(), rng.gen_range(0..t.len())));
        }
    });
    out
}

fn perturb(params: &mut dyn Params, name: &str, idx: usize, delta: f64) {
    params.visit_mut(&mut |n, t| {
        if n == name {
            t.as_slice_mut().unwrap()[idx] += delta;
        }
    });
}

fn tiny_lcvae(seed: u64) -> Lcvae {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Lcvae::new(
        LcvaeConfig {
            latent_dim: 4,
            intermediate_dim: 6,
            eps_var: 0.01,
            batch_size: 2,
            class_count: 5,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 1,
            binarize_threshold: 0.5,
            seed,
        },
        &mut rng,
    )
}

fn test_phrase(seed: u64) -> Phrase {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut g = Array2::zeros((PHRASE_STEPS, PITCHES));
    for t in 0..PHRASE_STEPS {
        if t % 4 == 0 {
            g[(t, 55 + rng.gen_range(0..24) as usize)] = 1;
        }
    }
    Phrase::new(g).unwrap()
}

#[test]
fn lcvae_total_loss_gradcheck_100_params() {
    let mut model = tiny_lcvae(31);
    let phrase = test_phrase(5);
    let label = ClassLabel(2);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let eps = normal_noise(&mut rng, &[4], 0.01)
        .into_dimensionality::<ndarray::Ix1>()
        .unwrap();

    // analytic gradients from the training graph
    let grads = {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, true);
        let vars = model.bind(&mut b);
        let bound = b.into_bound();
        let xs: Vec<_> = phrase_step_inputs(&[&phrase])
            .into_iter()
            .map(|m| t.constant(m))
            .collect();
        let oh = t.constant(labels_one_hot(&[label], 5));
        let e = t.constant(eps.clone().insert_axis(ndarray::Axis(0)).into_dyn());
        let (total, _, _) = model.loss_graph(&mut t, &vars, &xs, oh, e);
        gradient_map(&mut t, total, &bound)
    };

    let picks = sample_param_indices(&model, 7, &mut rng);
    assert!(picks.len() >= 100, "sampled {} params", picks.len());
    let h = 1e-5;
    let mut checked = 0;
    for (name, idx) in picks {
        perturb(&mut model, &name, idx, h);
        let fp = model.total_loss(&phrase, label, &eps).unwrap();
        perturb(&mut model, &name, idx, -2.0 * h);
        let fm = model.total_loss(&phrase, label, &eps).unwrap();
        perturb(&mut model, &name, idx, h);
        let fd = (fp - fm) / (2.0 * h);
        let an = grads[&name].as_slice().unwrap()[idx];
        assert!(
            rel_err(fd, an) < 1e-4,
            "{name}[{idx}]: fd={fd:.9} analytic={an:.9}"
        );
        checked += 1;
    }
    assert!(checked >= 100);
}

fn tiny_gan(seed: u64) -> Hcgan {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let lcvae = tiny_lcvae(seed);
    let gvae = Gvae::new(
        GvaeConfig {
            latent_dim: 8,
            intermediate_dim: 6,
            eps_var: 0.1,
            batch_size: 2,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 1,
            recon_target: ReconTarget::Song,
            seed,
        },
        4,
        &mut rng,
    );
    let hcvae = Hcvae {
        lcvae,
        gvae,
        flnseq: None,
    };
    Hcgan::new(
        hcvae,
        GanConfig {
            gp_weight: 1.0,
            critic_steps_per_gen: 1,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            batch_size: 2,
            steps: 1,
            conv_channels: (5, 4),
            shared_encoder_trainable: true,
            lcvae_decoder_trainable: false,
            seed,
        },
        &mut rng,
    )
}

fn random_song_grid(rng: &mut impl Rng) -> Array2<f64> {
    let mut g = Array2::zeros((SONG_STEPS, PITCHES));
    for t in 0..SONG_STEPS {
        if t % 6 == 0 {
            g[(t, 50 + rng.gen_range(0..30) as usize)] = 1.0;
        }
    }
    g
}

#[test]
fn critic_loss_gradcheck_including_gradient_penalty() {
    let mut gan = tiny_gan(41);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let real: Vec<Array2<f64>> = (0..2).map(|_| random_song_grid(&mut rng)).collect();
    let fake: Vec<Array2<f64>> = (0..2)
        .map(|_| Array2::from_shape_fn((SONG_STEPS, PITCHES), |_| rng.gen_range(0.0..0.4)))
        .collect();
    let xhat = interpolate(&real, &fake, &mut rng);

    let (_, grads) = gan.critic_loss_grads(&real, &fake, &xhat);

    let picks = sample_param_indices(&gan.critic, 14, &mut rng);
    assert!(picks.len() >= 50);
    let h = 1e-5;
    for (name, idx) in picks {
        perturb(&mut gan.critic, &name, idx, h);
        let (fp, _, _) = gan.critic_loss_values(&real, &fake, &xhat);
        perturb(&mut gan.critic, &name, idx, -2.0 * h);
        let (fm, _, _) = gan.critic_loss_values(&real, &fake, &xhat);
        perturb(&mut gan.critic, &name, idx, h);
        let fd = (fp - fm) / (2.0 * h);
        let an = grads[&name].as_slice().unwrap()[idx];
        assert!(
            rel_err(fd, an) < 1e-4,
            "{name}[{idx}]: fd={fd:.9} analytic={an:.9} (includes second-order penalty term)"
        );
    }
}

#[test]
fn generator_loss_gradcheck() {
    let mut gan = tiny_gan(43);
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let z = normal_noise(&mut rng, &[2, 8], 1.0)
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    let labels: Vec<Vec<ClassLabel>> = (0..2)
        .map(|_| (0..SONG_PHRASES).map(|_| ClassLabel(rng.gen_range(0..5))).collect())
        .collect();
    let eps_l = normal_noise(&mut rng, &[SONG_PHRASES * 2, 4], 0.01)
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();

    let (_, grads) = gan.generator_loss_grads(&z, &labels, &eps_l);

    // generator trainables: the global decoder (lcvae decoder frozen in cfg)
    struct GvaeView<'a>(&'a mut Gvae);
    impl Params for GvaeView<'_> {
        fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
            self.0.dec_h0.visit("gvae.dec_h0", f);
            self.0.dec_c0.visit("gvae.dec_c0", f);
            self.0.dec.visit("gvae.dec", f);
            self.0.out.visit("gvae.out", f);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
            self.0.dec_h0.visit_mut("gvae.dec_h0", f);
            self.0.dec_c0.visit_mut("gvae.dec_c0", f);
            self.0.dec.visit_mut("gvae.dec", f);
            self.0.out.visit_mut("gvae.out", f);
        }
    }

    let mut rng2 = ChaCha20Rng::seed_from_u64(5);
    let picks = {
        let view = GvaeView(&mut gan.hcvae.gvae);
        sample_param_indices(&view, 8, &mut rng2)
    };
    assert!(picks.len() >= 50);
    let h = 1e-5;
    for (name, idx) in picks {
        {
            let mut view = GvaeView(&mut gan.hcvae.gvae);
            perturb(&mut view, &name, idx, h);
        }
        let fp = gan.generator_loss_value(&z, &labels, &eps_l);
        {
            let mut view = GvaeView(&mut gan.hcvae.gvae);
            perturb(&mut view, &name, idx, -2.0 * h);
        }
        let fm = gan.generator_loss_value(&z, &labels, &eps_l);
        {
            let mut view = GvaeView(&mut gan.hcvae.gvae);
            perturb(&mut view, &name, idx, h);
        }
        let fd = (fp - fm) / (2.0 * h);
        let an = grads[&name].as_slice().unwrap()[idx];
        assert!(
            rel_err(fd, an) < 1e-4,
            "{name}[{idx}]: fd={fd:.9} analytic={an:.9}"
        );
    }
}

// ---- reparameterization ----

#[test]
fn sample_with_zero_eps_returns_mu_exactly() {
    let out = EncoderOutput {
        mu: Array1::from_vec(vec![0.3, -1.2, 2.5, 0.0]),
        log_var: Array1::from_vec(vec![0.5, -0.3, 1.0, 0.0]),
    };
    let z = sample_with_eps(&out, &Array1::zeros(4));
    assert_eq!(z, out.mu);
}

#[test]
fn sample_monte_carlo_variance_both_eps_vars() {
    let dims = 8;
    let mut rng = ChaCha20Rng::seed_from_u64(123);
    let mu = Array1::from_vec((0..dims).map(|i| i as f64 * 0.3 - 1.0).collect());
    let log_var = Array1::from_vec((0..dims).map(|i| (0.2 + 0.4 * i as f64).ln()).collect());
    for &eps_var in &[0.01f64, 0.1] {
        let n = 100_000usize;
        let mut sum = vec![0.0; dims];
        let mut sumsq = vec![0.0; dims];
        for _ in 0..n {
            let eps = normal_noise(&mut rng, &[dims], eps_var)
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            let z = sample_with_eps(
                &EncoderOutput {
                    mu: mu.clone(),
                    log_var: log_var.clone(),
                },
                &eps,
            );
            for i in 0..dims {
                let d = z[i] - mu[i];
                sum[i] += d;
                sumsq[i] += d * d;
            }
        }
        for i in 0..dims {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            let expected = log_var[i].exp() * eps_var;
            assert!(
                (var - expected).abs() / expected < 0.05,
                "dim {i} eps_var {eps_var}: var {var} vs expected {expected}"
            );
        }
    }
}

// ---- gradient penalty unit suite ----

/// Penalty for a linear critic `score = c * sum(x)` on (B, N) inputs.
fn toy_penalty(x: &ArrayD<f64>, c: f64) -> f64 {
    let (bsz, n) = (x.shape()[0], x.shape()[1]);
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let w = t.constant(ArrayD::from_elem(IxDyn(&[n, 1]), c));
    let scores = t.matmul(xv, w);
    let gp = gradient_penalty_graph(&mut t, &[xv], 1, bsz, scores);
    t.scalar_value(gp)
}

#[test]
fn penalty_zero_for_unit_gradient_critic() {
    let n = 64usize;
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let x = normal_noise(&mut rng, &[3, n], 1.0);
    let gp = toy_penalty(&x, 1.0 / (n as f64).sqrt());
    assert!(gp.abs() < 1e-10, "penalty {gp}");
}

#[test]
fn penalty_closed_form_for_double_sum_critic() {
    let n = 49usize;
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let x = normal_noise(&mut rng, &[4, n], 1.0);
    let gp = toy_penalty(&x, 2.0);
    let expected = (2.0 * (n as f64).sqrt() - 1.0).powi(2);
    assert!(
        (gp - expected).abs() < 1e-9,
        "penalty {gp} vs closed form {expected}"
    );
}

#[test]
fn toy_penalty_matches_finite_difference_gradient_norm() {
    // random small two-layer critic: penalty from the tape's input gradient
    // must match a finite-difference gradient-norm computation
    let (bsz, n, hdim) = (2usize, 10usize, 6usize);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let w1 = normal_noise(&mut rng, &[n, hdim], 0.5);
    let w2 = normal_noise(&mut rng, &[hdim, 1], 0.5);
    let x = normal_noise(&mut rng, &[bsz, n], 1.0);

    let score = |xv: &ArrayD<f64>| -> Vec<f64> {
        let mut t = Tape::new();
        let xx = t.constant(xv.clone());
        let a = t.constant(w1.clone());
        let b = t.constant(w2.clone());
        let h = t.matmul(xx, a);
        let h = t.tanh(h);
        let s = t.matmul(h, b);
        let v = t.value(s);
        (0..bsz).map(|i| v[[i, 0]]).collect()
    };

    // FD gradient norms per sample
    let h = 1e-6;
    let mut fd_norms = vec![0.0f64; bsz];
    for i in 0..bsz {
        let mut sq = 0.0;
        for j in 0..n {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let g = (score(&xp)[i] - score(&xm)[i]) / (2.0 * h);
            sq += g * g;
        }
        fd_norms[i] = sq.sqrt();
    }
    let fd_penalty =
        fd_norms.iter().map(|&nm| (nm - 1.0) * (nm - 1.0)).sum::<f64>() / bsz as f64;

    let mut t = Tape::new();
    let xx = t.leaf(x.clone());
    let a = t.constant(w1.clone());
    let b = t.constant(w2.clone());
    let hv = t.matmul(xx, a);
    let hv = t.tanh(hv);
    let s = t.matmul(hv, b);
    let gp = gradient_penalty_graph(&mut t, &[xx], 1, bsz, s);
    let tape_penalty = t.scalar_value(gp);

    assert!(
        (tape_penalty - fd_penalty).abs() < 1e-3,
        "tape {tape_penalty} vs fd {fd_penalty}"
    );
}

#[test]
fn interpolates_stay_on_segment() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let real: Vec<Array2<f64>> = (0..3)
        .map(|_| Array2::from_shape_fn((20, 5), |_| rng.gen_range(0.0..1.0)))
        .collect();
    let fake: Vec<Array2<f64>> = (0..3)
        .map(|_| Array2::from_shape_fn((20, 5), |_| rng.gen_range(0.0..1.0)))
        .collect();
    let xhat = interpolate(&real, &fake, &mut rng);
    for ((r, f), x) in real.iter().zip(&fake).zip(&xhat) {
        for ((rv, fv), xv) in r.iter().zip(f.iter()).zip(x.iter()) {
            let lo = rv.min(*fv) - 1e-12;
            let hi = rv.max(*fv) + 1e-12;
            assert!(*xv >= lo && *xv <= hi);
        }
    }
}

#[test]
fn constant_critic_loss_equals_gp_weight() {
    let mut gan = tiny_gan(51);
    // zero every critic weight: scores are constant, gradients vanish
    gan.critic.visit_mut(&mut |_, t| t.fill(0.0));
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let real: Vec<Array2<f64>> = (0..2).map(|_| random_song_grid(&mut rng)).collect();
    let fake: Vec<Array2<f64>> = (0..2).map(|_| random_song_grid(&mut rng)).collect();
    let xhat = interpolate(&real, &fake, &mut rng);
    let (loss, w, gp) = gan.critic_loss_values(&real, &fake, &xhat);
    assert!(w.abs() < 1e-12);
    assert!((gp - 1.0).abs() < 1e-5, "gp {gp}");
    assert!((loss - gan.cfg.gp_weight).abs() < 1e-5, "loss {loss}");
}

#[test]
fn identical_batches_have_zero_wasserstein_estimate() {
    let gan = tiny_gan(53);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let batch: Vec<Array2<f64>> = (0..2).map(|_| random_song_grid(&mut rng)).collect();
    let xhat = interpolate(&batch, &batch, &mut rng);
    let (_, w, _) = gan.critic_loss_values(&batch, &batch, &xhat);
    assert!(w.abs() < 1e-12);
}
