//! Phrase-level conditional VAE.
//!
//! A recurrent encoder reads the 50×128 phrase row by row; mu/log-var heads
//! project the final hidden state to the 32-dim latent. A dense layer with
//! no bias maps one-hot class labels to per-class latent means, and the KL
//! term pulls each phrase latent toward its class mean:
//!
//! `kl = 1/2 Σ_i [(mu_i - cm_i)^2 + var_i - ln var_i - 1]`
//!
//! The decoder mirrors the encoder: initial state learned from `z + cm`,
//! which is also fed as the per-step input, with per-step sigmoid pitch
//! probabilities. Reconstruction is per-cell binary cross-entropy summed
//! over the grid.

use crate::autodiff::{Tape, Var};
use crate::corpus::{Phrase, PHRASE_STEPS, PITCHES};
use crate::error::{shape_err, ModelError};
use crate::fln::ClassLabel;
use crate::nn::{gradient_map, normal_noise, Adam, Binder, Linear, Lstm, Params};
use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LcvaeConfig {
    pub latent_dim: usize,
    pub intermediate_dim: usize,
    pub eps_var: f64,
    pub batch_size: usize,
    pub class_count: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub binarize_threshold: f64,
    pub seed: u64,
}

impl LcvaeConfig {
    pub fn defaults(class_count: usize, seed: u64) -> Self {
        Self {
            latent_dim: 32,
            intermediate_dim: 256,
            eps_var: 0.01,
            batch_size: 32,
            class_count,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 30,
            binarize_threshold: 0.5,
            seed,
        }
    }
}

/// Encoder moments for one phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Array1<f64>,
    pub log_var: Array1<f64>,
}

pub struct Lcvae {
    pub cfg: LcvaeConfig,
    pub enc: Lstm,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub class_mean: Linear,
    pub dec_h0: Linear,
    pub dec_c0: Linear,
    pub dec: Lstm,
    pub out: Linear,
}

pub struct LcvaeVars {
    pub enc: crate::nn::LstmVars,
    pub mu_head: crate::nn::LinearVars,
    pub logvar_head: crate::nn::LinearVars,
    pub class_mean: crate::nn::LinearVars,
    pub dec: LcvaeDecVars,
}

/// The decode-path bindings (separable so the adversarial stage can freeze or
/// train them as a group).
pub struct LcvaeDecVars {
    pub dec_h0: crate::nn::LinearVars,
    pub dec_c0: crate::nn::LinearVars,
    pub dec: crate::nn::LstmVars,
    pub out: crate::nn::LinearVars,
}

/// Per-epoch training statistics (batch-size-weighted means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl Params for Lcvae {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        self.enc.visit("enc", f);
        self.mu_head.visit("mu_head", f);
        self.logvar_head.visit("logvar_head", f);
        self.class_mean.visit("class_mean", f);
        self.dec_h0.visit("dec_h0", f);
        self.dec_c0.visit("dec_c0", f);
        self.dec.visit("dec", f);
        self.out.visit("out", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.enc.visit_mut("enc", f);
        self.mu_head.visit_mut("mu_head", f);
        self.logvar_head.visit_mut("logvar_head", f);
        self.class_mean.visit_mut("class_mean", f);
        self.dec_h0.visit_mut("dec_h0", f);
        self.dec_c0.visit_mut("dec_c0", f);
        self.dec.visit_mut("dec", f);
        self.out.visit_mut("out", f);
    }
}

/// The encoder layers shared with the adversarial critic.
pub struct LcvaeEncoderView<'a>(pub &'a Lstm);

impl Params for LcvaeEncoderView<'_> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        self.0.visit("enc", f);
    }
    fn visit_mut(&mut self, _f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        unreachable!("encoder view is read-only");
    }
}

/// Stack a batch of phrases into 50 per-step input matrices of shape (B, 128).
pub fn phrase_step_inputs(phrases: &[&Phrase]) -> Vec<ArrayD<f64>> {
    let b = phrases.len();
    (0..PHRASE_STEPS)
        .map(|t| {
            let mut m = ArrayD::zeros(IxDyn(&[b, PITCHES]));
            for (i, p) in phrases.iter().enumerate() {
                for j in 0..PITCHES {
                    m[[i, j]] = p.grid()[(t, j)] as f64;
                }
            }
            m
        })
        .collect()
}

/// One-hot matrix (B, class_count) for a label batch.
pub fn labels_one_hot(labels: &[ClassLabel], class_count: usize) -> ArrayD<f64> {
    let mut m = ArrayD::zeros(IxDyn(&[labels.len(), class_count]));
    for (i, l) in labels.iter().enumerate() {
        m[[i, l.0 as usize]] = 1.0;
    }
    m
}

impl Lcvae {
    pub fn new(cfg: LcvaeConfig, rng: &mut impl Rng) -> Self {
        let (l, i, c) = (cfg.latent_dim, cfg.intermediate_dim, cfg.class_count);
        Self {
            enc: Lstm::new(rng, PITCHES, i),
            mu_head: Linear::new(rng, i, l, true),
            logvar_head: Linear::new(rng, i, l, true),
            class_mean: Linear::new(rng, c, l, false),
            dec_h0: Linear::new(rng, l, i, true),
            dec_c0: Linear::new(rng, l, i, true),
            dec: Lstm::new(rng, l, i),
            out: Linear::new(rng, i, PITCHES, true),
            cfg,
        }
    }

    pub fn bind(&self, b: &mut Binder) -> LcvaeVars {
        LcvaeVars {
            enc: self.enc.bind(b, "enc"),
            mu_head: self.mu_head.bind(b, "mu_head"),
            logvar_head: self.logvar_head.bind(b, "logvar_head"),
            class_mean: self.class_mean.bind(b, "class_mean"),
            dec: self.bind_decoder(b),
        }
    }

    /// Bind only the decode path (dec_h0/dec_c0/dec/out).
    pub fn bind_decoder(&self, b: &mut Binder) -> LcvaeDecVars {
        LcvaeDecVars {
            dec_h0: self.dec_h0.bind(b, "dec_h0"),
            dec_c0: self.dec_c0.bind(b, "dec_c0"),
            dec: self.dec.bind(b, "dec"),
            out: self.out.bind(b, "out"),
        }
    }

    /// Encoder graph: per-step inputs to (mu, log_var), each (B, latent).
    pub fn encode_graph(&self, t: &mut Tape, vars: &LcvaeVars, xs: &[Var]) -> (Var, Var) {
        let b = t.shape(xs[0])[0];
        let (h0, c0) = Lstm::zero_state(t, b, self.cfg.intermediate_dim);
        let hs = Lstm::run(t, &vars.enc, xs, h0, c0);
        let last = *hs.last().expect("phrase has 50 steps");
        let mu = Linear::apply(t, &vars.mu_head, last);
        let log_var = Linear::apply(t, &vars.logvar_head, last);
        (mu, log_var)
    }

    /// Decoder graph: latent-plus-class-mean (B, latent) to 50 per-step pitch
    /// logits of shape (B, 128).
    pub fn decode_graph(&self, t: &mut Tape, vars: &LcvaeDecVars, zin: Var) -> Vec<Var> {
        let h0_pre = Linear::apply(t, &vars.dec_h0, zin);
        let h0 = t.tanh(h0_pre);
        let c0_pre = Linear::apply(t, &vars.dec_c0, zin);
        let c0 = t.tanh(c0_pre);
        let xs = vec![zin; PHRASE_STEPS];
        let hs = Lstm::run(t, &vars.dec, &xs, h0, c0);
        hs.into_iter()
            .map(|h| Linear::apply(t, &vars.out, h))
            .collect()
    }

    /// Eq.-4 style KL against class means, summed over dims, mean over batch.
    pub fn kl_graph(&self, t: &mut Tape, mu: Var, log_var: Var, cm: Var) -> Var {
        let diff = t.sub(mu, cm);
        let d2 = t.mul(diff, diff);
        let var = t.exp(log_var);
        let s = t.add(d2, var);
        let s = t.sub(s, log_var);
        let s = t.add_scalar(s, -1.0);
        let half = t.scale(s, 0.5);
        let per_sample = t.sum_axis(half, 1);
        t.mean_all(per_sample)
    }

    /// Per-cell BCE from logits, summed over the 50×128 grid, mean over batch.
    pub fn recon_graph(&self, t: &mut Tape, logits: &[Var], targets: &[Var]) -> Var {
        let b = t.shape(logits[0])[0] as f64;
        let mut acc: Option<Var> = None;
        for (&lg, &y) in logits.iter().zip(targets) {
            let sp = t.softplus(lg);
            let yl = t.mul(y, lg);
            let d = t.sub(sp, yl);
            let s = t.sum_all(d);
            acc = Some(match acc {
                Some(a) => t.add(a, s),
                None => s,
            });
        }
        let total = acc.expect("at least one step");
        t.scale(total, 1.0 / b)
    }

    /// Full training loss for a batch with fixed sampling noise.
    /// Returns (total, recon, kl) vars.
    pub fn loss_graph(
        &self,
        t: &mut Tape,
        vars: &LcvaeVars,
        xs: &[Var],
        one_hot: Var,
        eps: Var,
    ) -> (Var, Var, Var) {
        let (mu, log_var) = self.encode_graph(t, vars, xs);
        let cm = Linear::apply(t, &vars.class_mean, one_hot);
        // z = mu + exp(log_var/2) ⊙ eps
        let half_lv = t.scale(log_var, 0.5);
        let std = t.exp(half_lv);
        let noise = t.mul(std, eps);
        let z = t.add(mu, noise);
        let zin = t.add(z, cm);
        let logits = self.decode_graph(t, &vars.dec, zin);
        let recon = self.recon_graph(t, &logits, xs);
        let kl = self.kl_graph(t, mu, log_var, cm);
        let total = t.add(recon, kl);
        (total, recon, kl)
    }

    // ---- inference ----

    pub fn encode(&self, phrase: &Phrase) -> EncoderOutput {
        self.encode_grid(&phrase.grid().view())
            .expect("Phrase is shape-checked at construction")
    }

    /// Encode a raw grid, guarding the (50, 128) shape.
    pub fn encode_grid(&self, grid: &ArrayView2<u8>) -> Result<EncoderOutput, ModelError> {
        if grid.dim() != (PHRASE_STEPS, PITCHES) {
            return Err(shape_err((PHRASE_STEPS, PITCHES), grid.dim()));
        }
        let (mus, lvs) = self.encode_batch_grids(&[grid.to_owned()]);
        Ok(EncoderOutput {
            mu: mus.row(0).to_owned(),
            log_var: lvs.row(0).to_owned(),
        })
    }

    /// Batched encoder pass; rows of the results follow the input order.
    pub fn encode_batch_grids(&self, grids: &[Array2<u8>]) -> (Array2<f64>, Array2<f64>) {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.bind(&mut b);
        let n = grids.len();
        let xs: Vec<Var> = (0..PHRASE_STEPS)
            .map(|step| {
                let mut m = ArrayD::zeros(IxDyn(&[n, PITCHES]));
                for (i, g) in grids.iter().enumerate() {
                    for j in 0..PITCHES {
                        m[[i, j]] = g[(step, j)] as f64;
                    }
                }
                t.constant(m)
            })
            .collect();
        let (mu, log_var) = self.encode_graph(&mut t, &vars, &xs);
        let to2 = |v: Var, t: &Tape| {
            t.value(v)
                .into_dimensionality::<ndarray::Ix2>()
                .expect("heads produce 2-d output")
        };
        (to2(mu, &t), to2(log_var, &t))
    }

    /// Learned class mean: row `label` of the dense weight (no bias).
    pub fn class_mean(&self, label: ClassLabel) -> Result<Array1<f64>, ModelError> {
        let c = self.cfg.class_count;
        if label.0 as usize >= c {
            return Err(ModelError::Range {
                label: label.0,
                class_count: c,
            });
        }
        let w = self
            .class_mean
            .w
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("class-mean weight is 2-d");
        Ok(w.row(label.0 as usize).to_owned())
    }

    /// Reparameterized draw: `z = mu + exp(log_var/2) ⊙ eps`,
    /// `eps ~ N(0, eps_var I)`.
    pub fn sample(&self, out: &EncoderOutput, eps_var: f64, rng: &mut impl Rng) -> Array1<f64> {
        let eps = normal_noise(rng, &[out.mu.len()], eps_var);
        let eps = eps.into_dimensionality::<ndarray::Ix1>().unwrap();
        sample_with_eps(out, &eps)
    }

    /// Decode a latent (already including the class mean) to cell
    /// probabilities.
    pub fn decode(&self, z_plus_cm: &Array1<f64>) -> Array2<f64> {
        let batch = z_plus_cm.view().insert_axis(Axis(0)).to_owned();
        self.decode_batch(&batch).remove(0)
    }

    /// Decode a batch of latents (B, latent) to B probability grids.
    pub fn decode_batch(&self, zin: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.bind(&mut b);
        let z = t.constant(zin.clone().into_dyn());
        let logits = self.decode_graph(&mut t, &vars.dec, z);
        let n = zin.nrows();
        let mut grids = vec![Array2::zeros((PHRASE_STEPS, PITCHES)); n];
        for (step, lg) in logits.iter().enumerate() {
            let probs = t.sigmoid(*lg);
            let vals = t.value(probs);
            for i in 0..n {
                for j in 0..PITCHES {
                    grids[i][(step, j)] = vals[[i, j]];
                }
            }
        }
        grids
    }

    /// Closed-form Eq.-4 KL for one phrase.
    pub fn kl_loss(&self, out: &EncoderOutput, cm: &Array1<f64>) -> f64 {
        kl_closed_form(&out.mu, &out.log_var, cm)
    }

    /// BCE + KL for one (phrase, label) with fixed sampling noise.
    pub fn total_loss(
        &self,
        phrase: &Phrase,
        label: ClassLabel,
        eps: &Array1<f64>,
    ) -> Result<f64, ModelError> {
        if label.0 as usize >= self.cfg.class_count {
            return Err(ModelError::Range {
                label: label.0,
                class_count: self.cfg.class_count,
            });
        }
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.bind(&mut b);
        let xs: Vec<Var> = phrase_step_inputs(&[phrase])
            .into_iter()
            .map(|m| t.constant(m))
            .collect();
        let one_hot = labels_one_hot(&[label], self.cfg.class_count);
        let oh = t.constant(one_hot);
        let e = t.constant(eps.clone().insert_axis(Axis(0)).into_dyn());
        let (total, _, _) = self.loss_graph(&mut t, &vars, &xs, oh, e);
        Ok(t.scalar_value(total))
    }

    /// Sample a phrase for a class: decode(cm + eps), eps ~ N(0, eps_var I).
    pub fn generate_phrase(
        &self,
        label: ClassLabel,
        rng: &mut impl Rng,
    ) -> Result<Phrase, ModelError> {
        let cm = self.class_mean(label)?;
        let eps = normal_noise(rng, &[self.cfg.latent_dim], self.cfg.eps_var)
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let probs = self.decode(&(&cm + &eps));
        Ok(binarize(&probs, self.cfg.binarize_threshold))
    }

    /// Train on (phrase, label) pairs. `on_epoch` runs after each epoch with
    /// the fresh stats, e.g. to persist a checkpoint.
    pub fn train(
        &mut self,
        phrases: &[Phrase],
        labels: &[ClassLabel],
        rng: &mut impl Rng,
        mut on_epoch: impl FnMut(&Self, &EpochStats),
    ) -> Result<Vec<EpochStats>, ModelError> {
        assert_eq!(phrases.len(), labels.len());
        let mut opt = Adam::new(self.cfg.learning_rate, 0.9, 0.999, Some(self.cfg.grad_clip));
        let mut log = Vec::with_capacity(self.cfg.epochs);
        let mut step: u64 = 0;
        for epoch in 0..self.cfg.epochs {
            let mut order: Vec<usize> = (0..phrases.len()).collect();
            shuffle(&mut order, rng);
            let mut sums = (0.0, 0.0, 0.0);
            for chunk in order.chunks(self.cfg.batch_size) {
                step += 1;
                let batch: Vec<&Phrase> = chunk.iter().map(|&i| &phrases[i]).collect();
                let blabels: Vec<ClassLabel> = chunk.iter().map(|&i| labels[i]).collect();
                let eps = normal_noise(
                    rng,
                    &[batch.len(), self.cfg.latent_dim],
                    self.cfg.eps_var,
                );
                let (total, recon, kl, grads) = {
                    let mut t = Tape::new();
                    let mut b = Binder::new(&mut t, true);
                    let vars = self.bind(&mut b);
                    let bound = b.into_bound();
                    let xs: Vec<Var> = phrase_step_inputs(&batch)
                        .into_iter()
                        .map(|m| t.constant(m))
                        .collect();
                    let oh = t.constant(labels_one_hot(&blabels, self.cfg.class_count));
                    let e = t.constant(eps);
                    let (total, recon, kl) = self.loss_graph(&mut t, &vars, &xs, oh, e);
                    let grads = gradient_map(&mut t, total, &bound);
                    (
                        t.scalar_value(total),
                        t.scalar_value(recon),
                        t.scalar_value(kl),
                        grads,
                    )
                };
                if !total.is_finite() {
                    return Err(ModelError::Divergence { step });
                }
                opt.step(self, &grads);
                let w = chunk.len() as f64;
                sums.0 += recon * w;
                sums.1 += kl * w;
                sums.2 += total * w;
            }
            let n = phrases.len() as f64;
            let stats = EpochStats {
                epoch,
                recon: sums.0 / n,
                kl: sums.1 / n,
                total: sums.2 / n,
            };
            on_epoch(self, &stats);
            log.push(stats);
        }
        Ok(log)
    }
}

/// `z = mu + exp(log_var/2) ⊙ eps` with the noise passed in.
pub fn sample_with_eps(out: &EncoderOutput, eps: &Array1<f64>) -> Array1<f64> {
    &out.mu + &(out.log_var.mapv(|lv| (lv * 0.5).exp()) * eps)
}

/// Closed form of `KL(N(mu, diag var) || N(cm, I))`.
pub fn kl_closed_form(mu: &Array1<f64>, log_var: &Array1<f64>, cm: &Array1<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..mu.len() {
        let d = mu[i] - cm[i];
        s += d * d + log_var[i].exp() - log_var[i] - 1.0;
    }
    0.5 * s
}

pub fn binarize(probs: &Array2<f64>, threshold: f64) -> Phrase {
    let grid = probs.mapv(|p| u8::from(p >= threshold));
    Phrase::new(grid).expect("probability grid has phrase shape")
}

/// Fisher-Yates with the training RNG; `rand`'s slice shuffle is avoided so
/// the draw sequence stays pinned to this implementation.
pub fn shuffle(xs: &mut [usize], rng: &mut impl Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}
