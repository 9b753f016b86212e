//! Adversarial refinement: WGAN-GP with the hierarchical decoder as the
//! generator and a critic that shares the phrase encoder.
//!
//! The critic runs the (initially L-CVAE-copied) recurrent encoder over each
//! of the 17 phrases, stacks the per-phrase features into a 17-wide map,
//! applies two width-3 convolutions along the phrase axis, and ends in an
//! unsquashed scalar head. Loss per Eq.-3 form:
//!
//! `critic:   mean D(fake) - mean D(real) + gp_weight * mean (||∇_x̂ D(x̂)|| - 1)^2`
//! `generator: -mean D(fake)`
//!
//! with x̂ drawn uniformly on segments between real and fake samples. The
//! penalty's weight gradients need second-order terms; the tape provides
//! them by differentiating through the appended backward pass.

use crate::autodiff::{Tape, Var};
use crate::corpus::{SongTensor, PHRASE_STEPS, PITCHES, SONG_PHRASES};
use crate::error::{shape_err, ModelError};
use crate::fln::ClassLabel;
use crate::hcvae::Hcvae;
use crate::lcvae::labels_one_hot;
use crate::nn::{gradient_map, normal_noise, Adam, Binder, Linear, Lstm, Params};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanConfig {
    /// Weight of the gradient penalty; the objective's penalty term is
    /// written unweighted, hence 1.0 (the WGAN-GP reference uses 10).
    pub gp_weight: f64,
    pub critic_steps_per_gen: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub conv_channels: (usize, usize),
    pub shared_encoder_trainable: bool,
    pub lcvae_decoder_trainable: bool,
    pub seed: u64,
}

impl GanConfig {
    pub fn defaults(seed: u64) -> Self {
        Self {
            gp_weight: 1.0,
            critic_steps_per_gen: 5,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            batch_size: 8,
            steps: 1000,
            conv_channels: (64, 32),
            shared_encoder_trainable: true,
            lcvae_decoder_trainable: false,
            seed,
        }
    }
}

/// Scalar-output critic over whole songs.
pub struct Critic {
    pub enc: Lstm,
    pub conv1: Linear,
    pub conv2: Linear,
    pub head: Linear,
    intermediate: usize,
}

pub struct CriticVars {
    pub enc: crate::nn::LstmVars,
    pub conv1: crate::nn::LinearVars,
    pub conv2: crate::nn::LinearVars,
    pub head: crate::nn::LinearVars,
}

impl Params for Critic {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        self.enc.visit("critic.enc", f);
        self.conv1.visit("critic.conv1", f);
        self.conv2.visit("critic.conv2", f);
        self.head.visit("critic.head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.enc.visit_mut("critic.enc", f);
        self.conv1.visit_mut("critic.conv1", f);
        self.conv2.visit_mut("critic.conv2", f);
        self.head.visit_mut("critic.head", f);
    }
}

const CONV_K: usize = 3;

impl Critic {
    /// Fresh conv/head layers on top of a copy of the phrase encoder.
    pub fn from_shared_encoder(
        enc: &Lstm,
        conv_channels: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let i = enc.hidden;
        let (c1, c2) = conv_channels;
        let p1 = SONG_PHRASES - CONV_K + 1; // 15
        let p2 = p1 - CONV_K + 1; // 13
        Self {
            enc: Lstm {
                w_x: enc.w_x.clone(),
                w_h: enc.w_h.clone(),
                b: enc.b.clone(),
                hidden: i,
            },
            conv1: Linear::new(rng, CONV_K * i, c1, true),
            conv2: Linear::new(rng, CONV_K * c1, c2, true),
            head: Linear::new(rng, p2 * c2, 1, true),
            intermediate: i,
        }
    }

    pub fn bind(&self, b: &mut Binder, shared_trainable: bool) -> CriticVars {
        CriticVars {
            enc: crate::nn::LstmVars {
                w_x: b.bind_as("critic.enc.w_x", &self.enc.w_x, shared_trainable),
                w_h: b.bind_as("critic.enc.w_h", &self.enc.w_h, shared_trainable),
                b: b.bind_as("critic.enc.b", &self.enc.b, shared_trainable),
                hidden: self.enc.hidden,
            },
            conv1: self.conv1.bind(b, "critic.conv1"),
            conv2: self.conv2.bind(b, "critic.conv2"),
            head: self.head.bind(b, "critic.head"),
        }
    }

    /// Score graph. `steps` are 50 inputs of shape (17*B, 128) in
    /// phrase-major row order; the result is (B, 1), unbounded.
    pub fn score_graph(&self, t: &mut Tape, vars: &CriticVars, steps: &[Var], batch: usize) -> Var {
        let rows = SONG_PHRASES * batch;
        assert_eq!(t.shape(steps[0]), vec![rows, PITCHES], "bad critic input fold");
        let (h0, c0) = Lstm::zero_state(t, rows, self.intermediate);
        let hs = Lstm::run(t, &vars.enc, steps, h0, c0);
        let last = *hs.last().expect("50 steps");
        // per-phrase features
        let feats: Vec<Var> = (0..SONG_PHRASES)
            .map(|i| t.slice(last, 0, i * batch, (i + 1) * batch))
            .collect();
        let conv = |t: &mut Tape, inputs: &[Var], lin: &crate::nn::LinearVars| -> Vec<Var> {
            (0..inputs.len() - CONV_K + 1)
                .map(|p| {
                    let w = t.concat(&inputs[p..p + CONV_K], 1);
                    let h = Linear::apply(t, lin, w);
                    t.tanh(h)
                })
                .collect()
        };
        let c1 = conv(t, &feats, &vars.conv1);
        let c2 = conv(t, &c1, &vars.conv2);
        let flat = t.concat(&c2, 1);
        Linear::apply(t, &vars.head, flat)
    }
}

/// Penalty `mean_b (||∇_x̂ critic(x̂_b)|| - 1)^2` as a differentiable graph.
///
/// `xhat_steps` are grad-enabled leaves; rows of each step matrix hold
/// `rows_per_sample` row-groups per sample, laid out group-major
/// (`row = group * batch + sample`). The critic closure must return (B, 1)
/// scores for those steps.
pub fn gradient_penalty_graph(
    t: &mut Tape,
    xhat_steps: &[Var],
    rows_per_sample: usize,
    batch: usize,
    scores: Var,
) -> Var {
    let total = t.sum_all(scores);
    let grads = t.grad(total, xhat_steps);
    let mut sq_acc: Option<Var> = None;
    for g in grads {
        let g2 = t.mul(g, g);
        let row_sq = t.sum_axis(g2, 1); // (rows,)
        let grouped = t.reshape(row_sq, &[rows_per_sample, batch]);
        let per_sample = t.sum_axis(grouped, 0); // (batch,)
        sq_acc = Some(match sq_acc {
            Some(a) => t.add(a, per_sample),
            None => per_sample,
        });
    }
    let sq = sq_acc.expect("at least one step");
    // epsilon guards the sqrt's derivative at zero-gradient points
    let sq = t.add_scalar(sq, 1e-12);
    let norm = t.sqrt(sq);
    let dev = t.add_scalar(norm, -1.0);
    let pen = t.mul(dev, dev);
    t.mean_all(pen)
}

/// Per-step log record of the adversarial run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanStepStats {
    pub step: usize,
    pub w_estimate: f64,
    pub gp: f64,
    pub critic_loss: f64,
    pub gen_loss: f64,
}

/// The full adversarial stage: generator (hierarchical decoder) + critic.
pub struct Hcgan {
    pub hcvae: Hcvae,
    pub critic: Critic,
    pub cfg: GanConfig,
}

impl Hcgan {
    /// Warm start: the generator IS the trained hierarchical model; the
    /// critic's recurrent layers start as a copy of the phrase encoder.
    pub fn new(hcvae: Hcvae, cfg: GanConfig, rng: &mut impl Rng) -> Self {
        let critic = Critic::from_shared_encoder(&hcvae.lcvae.enc, cfg.conv_channels, rng);
        Self { hcvae, critic, cfg }
    }

    /// Generator output for an explicit global latent: identical computation
    /// to song generation, pre-binarization.
    pub fn generator(
        &self,
        z: &ndarray::Array1<f64>,
        labels: &[ClassLabel],
        rng: &mut impl Rng,
    ) -> Result<Array2<f64>, ModelError> {
        if labels.len() != SONG_PHRASES {
            return Err(shape_err(SONG_PHRASES, labels.len()));
        }
        let pl = self.hcvae.gvae.phrase_latent();
        let decoded = self.hcvae.gvae_decode(z);
        let eps = normal_noise(rng, &[SONG_PHRASES, pl], self.hcvae.lcvae.cfg.eps_var);
        let mut zin = Array2::zeros((SONG_PHRASES, pl));
        for i in 0..SONG_PHRASES {
            let cm = self.hcvae.lcvae.class_mean(labels[i])?;
            for j in 0..pl {
                zin[(i, j)] = decoded[(i, j)] + cm[j] + eps[[i, j]];
            }
        }
        let grids = self.hcvae.lcvae.decode_batch(&zin);
        let mut probs = Array2::zeros((SONG_PHRASES * PHRASE_STEPS, PITCHES));
        for (i, g) in grids.iter().enumerate() {
            probs
                .slice_mut(ndarray::s![i * PHRASE_STEPS..(i + 1) * PHRASE_STEPS, ..])
                .assign(g);
        }
        Ok(probs)
    }

    /// Critic score for one (850, 128) grid of probabilities or binary cells.
    pub fn critic_score(&self, song: &Array2<f64>) -> Result<f64, ModelError> {
        let scores = self.critic_scores(std::slice::from_ref(song))?;
        Ok(scores[0])
    }

    pub fn critic_scores(&self, songs: &[Array2<f64>]) -> Result<Vec<f64>, ModelError> {
        for s in songs {
            if s.dim() != (SONG_PHRASES * PHRASE_STEPS, PITCHES) {
                return Err(shape_err((SONG_PHRASES * PHRASE_STEPS, PITCHES), s.dim()));
            }
        }
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.critic.bind(&mut b, false);
        let steps = song_step_leaves(&mut t, songs, false);
        let out = self
            .critic
            .score_graph(&mut t, &vars, &steps, songs.len());
        let v = t.value(out);
        Ok((0..songs.len()).map(|i| v[[i, 0]]).collect())
    }

    /// Spec operation: penalty value at uniform interpolates between the two
    /// batches under the current critic.
    pub fn gradient_penalty(
        &self,
        real: &[Array2<f64>],
        fake: &[Array2<f64>],
        rng: &mut impl Rng,
    ) -> f64 {
        assert_eq!(real.len(), fake.len());
        let xhat = interpolate(real, fake, rng);
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.critic.bind(&mut b, false);
        let steps = song_step_leaves(&mut t, &xhat, true);
        let scores = self.critic.score_graph(&mut t, &vars, &steps, xhat.len());
        let gp = gradient_penalty_graph(&mut t, &steps, SONG_PHRASES, xhat.len(), scores);
        t.scalar_value(gp)
    }

    /// `mean D(fake) - mean D(real) + gp_weight * penalty` with a fixed
    /// interpolate batch. Also returns (w_estimate, gp).
    pub fn critic_loss_values(
        &self,
        real: &[Array2<f64>],
        fake: &[Array2<f64>],
        xhat: &[Array2<f64>],
    ) -> (f64, f64, f64) {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.critic.bind(&mut b, false);
        let (loss, w, gp) = self.critic_loss_graph(&mut t, &vars, real, fake, xhat);
        (
            t.scalar_value(loss),
            t.scalar_value(w),
            t.scalar_value(gp),
        )
    }

    /// Builds the critic loss on `t`; returns (loss, w_estimate, gp) vars.
    fn critic_loss_graph(
        &self,
        t: &mut Tape,
        vars: &CriticVars,
        real: &[Array2<f64>],
        fake: &[Array2<f64>],
        xhat: &[Array2<f64>],
    ) -> (Var, Var, Var) {
        let bsz = real.len();
        let real_steps = song_step_leaves(t, real, false);
        let fake_steps = song_step_leaves(t, fake, false);
        let xhat_steps = song_step_leaves(t, xhat, true);
        let real_out = self.critic.score_graph(t, vars, &real_steps, bsz);
        let fake_out = self.critic.score_graph(t, vars, &fake_steps, bsz);
        let xhat_out = self.critic.score_graph(t, vars, &xhat_steps, bsz);
        let gp = gradient_penalty_graph(t, &xhat_steps, SONG_PHRASES, bsz, xhat_out);
        let mean_real = t.mean_all(real_out);
        let mean_fake = t.mean_all(fake_out);
        let w_est = t.sub(mean_real, mean_fake);
        let neg_w = t.sub(mean_fake, mean_real);
        let gp_term = t.scale(gp, self.cfg.gp_weight);
        let loss = t.add(neg_w, gp_term);
        (loss, w_est, gp)
    }

    /// Critic loss and its analytic parameter gradients for a fixed
    /// interpolate batch (the training step's exact graph).
    pub fn critic_loss_grads(
        &self,
        real: &[Array2<f64>],
        fake: &[Array2<f64>],
        xhat: &[Array2<f64>],
    ) -> (f64, HashMap<String, ArrayD<f64>>) {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, true);
        let vars = self.critic.bind(&mut b, self.cfg.shared_encoder_trainable);
        let bound = b.into_bound();
        let (loss, _, _) = self.critic_loss_graph(&mut t, &vars, real, fake, xhat);
        let grads = gradient_map(&mut t, loss, &bound);
        (t.scalar_value(loss), grads)
    }

    /// Generator loss and its analytic parameter gradients for fixed inputs.
    pub fn generator_loss_grads(
        &self,
        z: &Array2<f64>,
        labels: &[Vec<ClassLabel>],
        eps_l: &Array2<f64>,
    ) -> (f64, HashMap<String, ArrayD<f64>>) {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, true);
        let gvars = self.hcvae.gvae.bind_decoder(&mut b);
        b.set_trainable(self.cfg.lcvae_decoder_trainable);
        let lvars = self.hcvae.lcvae.bind_decoder(&mut b);
        let cm_vars = self.hcvae.lcvae.class_mean.bind(&mut b, "class_mean");
        b.set_trainable(false);
        let cvars = self.critic.bind(&mut b, false);
        let bound = b.into_bound();
        let (loss, _) =
            self.generator_loss_graph(&mut t, &gvars, &lvars, &cm_vars, &cvars, z, labels, eps_l);
        let grads = gradient_map(&mut t, loss, &bound);
        (t.scalar_value(loss), grads)
    }

    /// `-mean D(G(z))` for a fixed generator input; used by gradient checks.
    pub fn generator_loss_value(
        &self,
        z: &Array2<f64>,
        labels: &[Vec<ClassLabel>],
        eps_l: &Array2<f64>,
    ) -> f64 {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let gvars = self.hcvae.gvae.bind_decoder(&mut b);
        let lvars = self.hcvae.lcvae.bind_decoder(&mut b);
        let cm_vars = self.hcvae.lcvae.class_mean.bind(&mut b, "class_mean");
        let cvars = self.critic.bind(&mut b, false);
        let (loss, _) = self.generator_loss_graph(
            &mut t, &gvars, &lvars, &cm_vars, &cvars, z, labels, eps_l,
        );
        t.scalar_value(loss)
    }

    #[allow(clippy::too_many_arguments)]
    fn generator_loss_graph(
        &self,
        t: &mut Tape,
        gvars: &crate::hcvae::GvaeDecVars,
        lvars: &crate::lcvae::LcvaeDecVars,
        cm_vars: &crate::nn::LinearVars,
        cvars: &CriticVars,
        z: &Array2<f64>,
        labels: &[Vec<ClassLabel>],
        eps_l: &Array2<f64>,
    ) -> (Var, Var) {
        let bsz = z.nrows();
        let class_count = self.hcvae.lcvae.cfg.class_count;
        let zv = t.constant(z.clone().into_dyn());
        let outs = self.hcvae.gvae.decode_graph(t, gvars, zv);
        // fold phrases into batch rows [phrase*bsz + song]
        let zin_parts: Vec<Var> = outs
            .iter()
            .enumerate()
            .map(|(i, &o)| {
                let step_labels: Vec<ClassLabel> = labels.iter().map(|l| l[i]).collect();
                let oh = t.constant(labels_one_hot(&step_labels, class_count));
                let cm = Linear::apply(t, cm_vars, oh);
                t.add(o, cm)
            })
            .collect();
        let zin = t.concat(&zin_parts, 0);
        let el = t.constant(eps_l.clone().into_dyn());
        let zin = t.add(zin, el);
        let logits = self.hcvae.lcvae.decode_graph(t, lvars, zin);
        let probs: Vec<Var> = logits.iter().map(|&lg| t.sigmoid(lg)).collect();
        let scores = self.critic.score_graph(t, cvars, &probs, bsz);
        let mean = t.mean_all(scores);
        let loss = t.neg(mean);
        (loss, mean)
    }

    /// Alternating WGAN-GP training. Fake conditioning reuses the label
    /// sequences of the sampled real batch.
    pub fn train(
        &mut self,
        songs: &[SongTensor],
        rng: &mut impl Rng,
        mut on_step: impl FnMut(&GanStepStats),
    ) -> Result<Vec<GanStepStats>, ModelError> {
        let cfg = self.cfg.clone();
        let mut critic_opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, None);
        let mut gen_opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, None);
        let grids: Vec<Array2<f64>> = songs.iter().map(|s| s.grid().mapv(f64::from)).collect();
        let pl = self.hcvae.gvae.phrase_latent();
        let gl = self.hcvae.gvae.cfg.latent_dim;
        let mut log = Vec::with_capacity(cfg.steps);

        for step in 0..cfg.steps {
            let mut last = (0.0, 0.0, 0.0); // (w, gp, critic_loss)
            for _ in 0..cfg.critic_steps_per_gen {
                let (batch_grids, batch_labels) = sample_batch(songs, &grids, cfg.batch_size, rng);
                let fake = self.sample_fake(&batch_labels, gl, rng)?;
                let xhat = interpolate(&batch_grids, &fake, rng);

                let (loss, w, gp, grads) = {
                    let mut t = Tape::new();
                    let mut b = Binder::new(&mut t, true);
                    let vars = self.critic.bind(&mut b, cfg.shared_encoder_trainable);
                    let bound = b.into_bound();
                    let (loss, w, gp) =
                        self.critic_loss_graph(&mut t, &vars, &batch_grids, &fake, &xhat);
                    let grads = gradient_map(&mut t, loss, &bound);
                    (
                        t.scalar_value(loss),
                        t.scalar_value(w),
                        t.scalar_value(gp),
                        grads,
                    )
                };
                if !loss.is_finite() {
                    return Err(ModelError::Divergence { step: step as u64 });
                }
                critic_opt.step(&mut self.critic, &grads);
                last = (w, gp, loss);
            }

            // generator update
            let (_, batch_labels) = sample_batch(songs, &grids, cfg.batch_size, rng);
            let z = normal_noise(rng, &[cfg.batch_size, gl], 1.0)
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let eps_l = normal_noise(
                rng,
                &[SONG_PHRASES * cfg.batch_size, pl],
                self.hcvae.lcvae.cfg.eps_var,
            )
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
            let (gen_loss, grads) = {
                let mut t = Tape::new();
                let mut b = Binder::new(&mut t, true);
                let gvars = self.hcvae.gvae.bind_decoder(&mut b);
                b.set_trainable(cfg.lcvae_decoder_trainable);
                let lvars = self.hcvae.lcvae.bind_decoder(&mut b);
                let cm_vars = self.hcvae.lcvae.class_mean.bind(&mut b, "class_mean");
                b.set_trainable(false);
                let cvars = self.critic.bind(&mut b, false);
                let bound = b.into_bound();
                let (loss, _) = self.generator_loss_graph(
                    &mut t, &gvars, &lvars, &cm_vars, &cvars, &z, &batch_labels, &eps_l,
                );
                let grads = gradient_map(&mut t, loss, &bound);
                (t.scalar_value(loss), grads)
            };
            if !gen_loss.is_finite() {
                return Err(ModelError::Divergence { step: step as u64 });
            }
            apply_generator_grads(self, &cfg, &mut gen_opt, &grads);

            let stats = GanStepStats {
                step,
                w_estimate: last.0,
                gp: last.1,
                critic_loss: last.2,
                gen_loss,
            };
            on_step(&stats);
            log.push(stats);
        }
        Ok(log)
    }

    fn sample_fake(
        &self,
        labels: &[Vec<ClassLabel>],
        global_latent: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Array2<f64>>, ModelError> {
        labels
            .iter()
            .map(|ls| {
                let z = normal_noise(rng, &[global_latent], 1.0)
                    .into_dimensionality::<ndarray::Ix1>()
                    .unwrap();
                self.generator(&z, ls, rng)
            })
            .collect()
    }
}

fn sample_batch(
    songs: &[SongTensor],
    grids: &[Array2<f64>],
    batch: usize,
    rng: &mut impl Rng,
) -> (Vec<Array2<f64>>, Vec<Vec<ClassLabel>>) {
    let mut bg = Vec::with_capacity(batch);
    let mut bl = Vec::with_capacity(batch);
    for _ in 0..batch {
        let i = rng.gen_range(0..songs.len());
        bg.push(grids[i].clone());
        bl.push(songs[i].labels.clone());
    }
    (bg, bl)
}

/// `x̂ = α real + (1-α) fake`, α uniform per sample.
pub fn interpolate(
    real: &[Array2<f64>],
    fake: &[Array2<f64>],
    rng: &mut impl Rng,
) -> Vec<Array2<f64>> {
    real.iter()
        .zip(fake)
        .map(|(r, f)| {
            let alpha: f64 = rng.gen_range(0.0..1.0);
            r * alpha + &(f * (1.0 - alpha))
        })
        .collect()
}

/// Stack songs into 50 step leaves of shape (17*B, 128), phrase-major rows.
fn song_step_leaves(t: &mut Tape, songs: &[Array2<f64>], grad: bool) -> Vec<Var> {
    let bsz = songs.len();
    (0..PHRASE_STEPS)
        .map(|s| {
            let mut m = ArrayD::zeros(IxDyn(&[SONG_PHRASES * bsz, PITCHES]));
            for i in 0..SONG_PHRASES {
                for (bi, song) in songs.iter().enumerate() {
                    for j in 0..PITCHES {
                        m[[i * bsz + bi, j]] = song[(i * PHRASE_STEPS + s, j)];
                    }
                }
            }
            if grad {
                t.leaf(m)
            } else {
                t.constant(m)
            }
        })
        .collect()
}

fn apply_generator_grads(
    gan: &mut Hcgan,
    cfg: &GanConfig,
    opt: &mut Adam,
    grads: &HashMap<String, ArrayD<f64>>,
) {
    struct GenView<'a> {
        gan: &'a mut Hcgan,
        lcvae_dec: bool,
    }
    impl Params for GenView<'_> {
        fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
            let g = &self.gan.hcvae.gvae;
            g.dec_h0.visit("gvae.dec_h0", f);
            g.dec_c0.visit("gvae.dec_c0", f);
            g.dec.visit("gvae.dec", f);
            g.out.visit("gvae.out", f);
            if self.lcvae_dec {
                let l = &self.gan.hcvae.lcvae;
                l.dec_h0.visit("dec_h0", f);
                l.dec_c0.visit("dec_c0", f);
                l.dec.visit("dec", f);
                l.out.visit("out", f);
                l.class_mean.visit("class_mean", f);
            }
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
            let g = &mut self.gan.hcvae.gvae;
            g.dec_h0.visit_mut("gvae.dec_h0", f);
            g.dec_c0.visit_mut("gvae.dec_c0", f);
            g.dec.visit_mut("gvae.dec", f);
            g.out.visit_mut("gvae.out", f);
            if self.lcvae_dec {
                let l = &mut self.gan.hcvae.lcvae;
                l.dec_h0.visit_mut("dec_h0", f);
                l.dec_c0.visit_mut("dec_c0", f);
                l.dec.visit_mut("dec", f);
                l.out.visit_mut("out", f);
                l.class_mean.visit_mut("class_mean", f);
            }
        }
    }
    let mut view = GenView {
        gan,
        lcvae_dec: cfg.lcvae_decoder_trainable,
    };
    opt.step(&mut view, grads);
}
