//! Hierarchical model: a global VAE over the per-phrase latent sequence.
//!
//! The phrase encoder's mu vectors, with class means subtracted, form a
//! 17×32 sequence per song. The G-VAE encodes, samples, and decodes that
//! sequence; the phrase decoder (frozen) turns it back into a song. Sampling
//! happens only after each decoder's input is formed: the phrase-level draw
//! sits after G-VAE decoding, never between the two encoders, and the
//! decoded latent is treated as the mean of a fixed-variance Gaussian.
//!
//! Also hosts the small label-sequence VAE used to propose FLN sequences at
//! generation time.

use crate::autodiff::{Tape, Var};
use crate::corpus::{SongTensor, PHRASE_STEPS, PITCHES, SONG_PHRASES};
use crate::error::{shape_err, ModelError};
use crate::fln::ClassLabel;
use crate::lcvae::{binarize, labels_one_hot, Lcvae};
use crate::nn::{gradient_map, normal_noise, Adam, Binder, Linear, Lstm, Params};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReconTarget {
    /// End-to-end BCE on the reconstructed song through the frozen decoder.
    Song,
    /// MSE on the reconstructed latent sequence.
    Latent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GvaeConfig {
    pub latent_dim: usize,
    pub intermediate_dim: usize,
    pub eps_var: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub recon_target: ReconTarget,
    pub seed: u64,
}

impl GvaeConfig {
    pub fn defaults(seed: u64) -> Self {
        Self {
            latent_dim: 256,
            intermediate_dim: 256,
            eps_var: 0.1,
            batch_size: 32,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 30,
            recon_target: ReconTarget::Song,
            seed,
        }
    }
}

/// Per-song sequence of cm-subtracted phrase latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub vecs: Array2<f64>,
    pub labels: Vec<ClassLabel>,
}

pub struct Gvae {
    pub cfg: GvaeConfig,
    pub enc: Lstm,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub dec_h0: Linear,
    pub dec_c0: Linear,
    pub dec: Lstm,
    pub out: Linear,
    phrase_latent: usize,
}

pub struct GvaeVars {
    pub enc: crate::nn::LstmVars,
    pub mu_head: crate::nn::LinearVars,
    pub logvar_head: crate::nn::LinearVars,
    pub dec: GvaeDecVars,
}

pub struct GvaeDecVars {
    pub dec_h0: crate::nn::LinearVars,
    pub dec_c0: crate::nn::LinearVars,
    pub dec: crate::nn::LstmVars,
    pub out: crate::nn::LinearVars,
}

impl Params for Gvae {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        self.enc.visit("gvae.enc", f);
        self.mu_head.visit("gvae.mu_head", f);
        self.logvar_head.visit("gvae.logvar_head", f);
        self.dec_h0.visit("gvae.dec_h0", f);
        self.dec_c0.visit("gvae.dec_c0", f);
        self.dec.visit("gvae.dec", f);
        self.out.visit("gvae.out", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.enc.visit_mut("gvae.enc", f);
        self.mu_head.visit_mut("gvae.mu_head", f);
        self.logvar_head.visit_mut("gvae.logvar_head", f);
        self.dec_h0.visit_mut("gvae.dec_h0", f);
        self.dec_c0.visit_mut("gvae.dec_c0", f);
        self.dec.visit_mut("gvae.dec", f);
        self.out.visit_mut("gvae.out", f);
    }
}

impl Gvae {
    pub fn new(cfg: GvaeConfig, phrase_latent: usize, rng: &mut impl Rng) -> Self {
        let (l, i) = (cfg.latent_dim, cfg.intermediate_dim);
        Self {
            enc: Lstm::new(rng, phrase_latent, i),
            mu_head: Linear::new(rng, i, l, true),
            logvar_head: Linear::new(rng, i, l, true),
            dec_h0: Linear::new(rng, l, i, true),
            dec_c0: Linear::new(rng, l, i, true),
            dec: Lstm::new(rng, l, i),
            out: Linear::new(rng, i, phrase_latent, true),
            cfg,
            phrase_latent,
        }
    }

    pub fn phrase_latent(&self) -> usize {
        self.phrase_latent
    }

    pub fn bind(&self, b: &mut Binder) -> GvaeVars {
        GvaeVars {
            enc: self.enc.bind(b, "gvae.enc"),
            mu_head: self.mu_head.bind(b, "gvae.mu_head"),
            logvar_head: self.logvar_head.bind(b, "gvae.logvar_head"),
            dec: self.bind_decoder(b),
        }
    }

    /// Bind only the decode path (the adversarial generator's trainable part).
    pub fn bind_decoder(&self, b: &mut Binder) -> GvaeDecVars {
        GvaeDecVars {
            dec_h0: self.dec_h0.bind(b, "gvae.dec_h0"),
            dec_c0: self.dec_c0.bind(b, "gvae.dec_c0"),
            dec: self.dec.bind(b, "gvae.dec"),
            out: self.out.bind(b, "gvae.out"),
        }
    }

    /// Encoder graph: 17 per-step (B, 32) inputs to (Mu, LogVar), (B, 256).
    pub fn encode_graph(&self, t: &mut Tape, vars: &GvaeVars, xs: &[Var]) -> (Var, Var) {
        let b = t.shape(xs[0])[0];
        let (h0, c0) = Lstm::zero_state(t, b, self.cfg.intermediate_dim);
        let hs = Lstm::run(t, &vars.enc, xs, h0, c0);
        let last = *hs.last().expect("sequence is non-empty");
        (
            Linear::apply(t, &vars.mu_head, last),
            Linear::apply(t, &vars.logvar_head, last),
        )
    }

    /// Decoder graph: (B, 256) to 17 per-step (B, 32) latent reconstructions.
    pub fn decode_graph(&self, t: &mut Tape, vars: &GvaeDecVars, z: Var) -> Vec<Var> {
        let h0_pre = Linear::apply(t, &vars.dec_h0, z);
        let h0 = t.tanh(h0_pre);
        let c0_pre = Linear::apply(t, &vars.dec_c0, z);
        let c0 = t.tanh(c0_pre);
        let xs = vec![z; SONG_PHRASES];
        let hs = Lstm::run(t, &vars.dec, &xs, h0, c0);
        hs.into_iter()
            .map(|h| Linear::apply(t, &vars.out, h))
            .collect()
    }

    /// Standard-normal-prior KL, summed over dims, mean over batch.
    pub fn kl_graph(&self, t: &mut Tape, mu: Var, log_var: Var) -> Var {
        let m2 = t.mul(mu, mu);
        let var = t.exp(log_var);
        let s = t.add(m2, var);
        let s = t.sub(s, log_var);
        let s = t.add_scalar(s, -1.0);
        let half = t.scale(s, 0.5);
        let per_sample = t.sum_axis(half, 1);
        t.mean_all(per_sample)
    }
}

/// The hierarchical pair: a frozen phrase VAE plus the global VAE, with the
/// auxiliary label-sequence model attached after Task 2.
pub struct Hcvae {
    pub lcvae: Lcvae,
    pub gvae: Gvae,
    pub flnseq: Option<FlnSeqVae>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GvaeEpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl Hcvae {
    /// Per-phrase `encode(..).mu - cm(label)` for a song; deterministic, no
    /// sampling noise on the path into the G-VAE encoder.
    pub fn encode_song(&self, song: &SongTensor) -> Result<LatentSequence, ModelError> {
        if song.phrases.len() != SONG_PHRASES {
            return Err(shape_err(SONG_PHRASES, song.phrases.len()));
        }
        let grids: Vec<Array2<u8>> = song.phrases.iter().map(|p| p.grid().clone()).collect();
        let (mus, _) = self.lcvae.encode_batch_grids(&grids);
        let mut vecs = mus;
        for (i, label) in song.labels.iter().enumerate() {
            let cm = self.lcvae.class_mean(*label)?;
            for j in 0..vecs.ncols() {
                vecs[(i, j)] -= cm[j];
            }
        }
        Ok(LatentSequence {
            vecs,
            labels: song.labels.clone(),
        })
    }

    pub fn gvae_encode(&self, seq: &LatentSequence) -> (Array1<f64>, Array1<f64>) {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.gvae.bind(&mut b);
        let xs: Vec<Var> = (0..SONG_PHRASES)
            .map(|i| {
                let row = seq.vecs.row(i).insert_axis(ndarray::Axis(0)).to_owned();
                t.constant(row.into_dyn())
            })
            .collect();
        let (mu, lv) = self.gvae.encode_graph(&mut t, &vars, &xs);
        let flat = |v: Var, t: &Tape| {
            Array1::from_vec(t.value(v).into_raw_vec_and_offset().0)
        };
        (flat(mu, &t), flat(lv, &t))
    }

    /// `Mu + exp(LogVar/2) ⊙ eps`, `eps ~ N(0, eps_var I)`.
    pub fn gvae_sample(
        &self,
        mu: &Array1<f64>,
        log_var: &Array1<f64>,
        eps_var: f64,
        rng: &mut impl Rng,
    ) -> Array1<f64> {
        let eps = normal_noise(rng, &[mu.len()], eps_var)
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        mu + &(log_var.mapv(|lv| (lv * 0.5).exp()) * &eps)
    }

    /// Decode a global latent to the 17×32 latent sequence.
    pub fn gvae_decode(&self, z: &Array1<f64>) -> Array2<f64> {
        let mut t = Tape::new();
        let mut b = Binder::new(&mut t, false);
        let vars = self.gvae.bind(&mut b);
        let zv = t.constant(z.view().insert_axis(ndarray::Axis(0)).to_owned().into_dyn());
        let outs = self.gvae.decode_graph(&mut t, &vars.dec, zv);
        let mut m = Array2::zeros((SONG_PHRASES, self.gvae.phrase_latent));
        for (i, o) in outs.iter().enumerate() {
            let v = t.value(*o);
            for j in 0..self.gvae.phrase_latent {
                m[(i, j)] = v[[0, j]];
            }
        }
        m
    }

    /// Full reconstruction pipeline with explicit noise, so the zero-noise
    /// path is exactly deterministic. Output is (850, 128) probabilities.
    pub fn forward_with_eps(
        &self,
        song: &SongTensor,
        eps_g: &Array1<f64>,
        eps_l: &Array2<f64>,
    ) -> Result<Array2<f64>, ModelError> {
        let seq = self.encode_song(song)?;
        let (mu, lv) = self.gvae_encode(&seq);
        let z = &mu + &(lv.mapv(|x| (x * 0.5).exp()) * eps_g);
        let decoded = self.gvae_decode(&z);
        let mut zin = Array2::zeros((SONG_PHRASES, self.gvae.phrase_latent));
        for i in 0..SONG_PHRASES {
            let cm = self.lcvae.class_mean(song.labels[i])?;
            for j in 0..self.gvae.phrase_latent {
                zin[(i, j)] = decoded[(i, j)] + cm[j] + eps_l[(i, j)];
            }
        }
        let grids = self.lcvae.decode_batch(&zin);
        let mut out = Array2::zeros((SONG_PHRASES * PHRASE_STEPS, PITCHES));
        for (i, g) in grids.iter().enumerate() {
            out.slice_mut(ndarray::s![i * PHRASE_STEPS..(i + 1) * PHRASE_STEPS, ..])
                .assign(g);
        }
        Ok(out)
    }

    /// Reconstruction with noise drawn at the two mandated points: after the
    /// G-VAE encoder (variance 0.1) and after its decoder (variance 0.01).
    pub fn forward(&self, song: &SongTensor, rng: &mut impl Rng) -> Result<Array2<f64>, ModelError> {
        let eps_g = normal_noise(rng, &[self.gvae.cfg.latent_dim], self.gvae.cfg.eps_var)
            .into_dimensionality()
            .unwrap();
        let eps_l = normal_noise(
            rng,
            &[SONG_PHRASES, self.gvae.phrase_latent],
            self.lcvae.cfg.eps_var,
        )
        .into_dimensionality()
        .unwrap();
        self.forward_with_eps(song, &eps_g, &eps_l)
    }

    /// Sample a song for a 17-label FLN sequence: prior draw in the global
    /// latent, decode, add class means, phrase-level draw, decode, binarize.
    pub fn generate_song(
        &self,
        labels: &[ClassLabel],
        rng: &mut impl Rng,
    ) -> Result<SongTensor, ModelError> {
        self.generate_song_probs(labels, rng).map(|(song, _)| song)
    }

    /// As [`Self::generate_song`] but also returning pre-binarization
    /// probabilities (the adversarial stage consumes these).
    pub fn generate_song_probs(
        &self,
        labels: &[ClassLabel],
        rng: &mut impl Rng,
    ) -> Result<(SongTensor, Array2<f64>), ModelError> {
        if labels.len() != SONG_PHRASES {
            return Err(shape_err(SONG_PHRASES, labels.len()));
        }
        let class_count = self.lcvae.cfg.class_count;
        for l in labels {
            if l.0 as usize >= class_count {
                return Err(ModelError::Range {
                    label: l.0,
                    class_count,
                });
            }
        }
        let z = normal_noise(rng, &[self.gvae.cfg.latent_dim], 1.0)
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let decoded = self.gvae_decode(&z);
        let mut zin = Array2::zeros((SONG_PHRASES, self.gvae.phrase_latent));
        let eps = normal_noise(
            rng,
            &[SONG_PHRASES, self.gvae.phrase_latent],
            self.lcvae.cfg.eps_var,
        );
        for i in 0..SONG_PHRASES {
            let cm = self.lcvae.class_mean(labels[i])?;
            for j in 0..self.gvae.phrase_latent {
                zin[(i, j)] = decoded[(i, j)] + cm[j] + eps[[i, j]];
            }
        }
        let grids = self.lcvae.decode_batch(&zin);
        let mut probs = Array2::zeros((SONG_PHRASES * PHRASE_STEPS, PITCHES));
        let mut phrases = Vec::with_capacity(SONG_PHRASES);
        for (i, g) in grids.iter().enumerate() {
            probs
                .slice_mut(ndarray::s![i * PHRASE_STEPS..(i + 1) * PHRASE_STEPS, ..])
                .assign(g);
            phrases.push(binarize(g, self.lcvae.cfg.binarize_threshold));
        }
        Ok((
            SongTensor {
                phrases,
                labels: labels.to_vec(),
            },
            probs,
        ))
    }

    /// Task 2: train the G-VAE with the phrase model frozen. Only G-VAE
    /// parameters receive gradients; the phrase weights are bound as
    /// constants and are bit-identical afterwards.
    pub fn train_gvae(
        &mut self,
        songs: &[SongTensor],
        rng: &mut impl Rng,
        mut on_epoch: impl FnMut(&Self, &GvaeEpochStats),
    ) -> Result<Vec<GvaeEpochStats>, ModelError> {
        let cfg = self.gvae.cfg.clone();
        let pl = self.gvae.phrase_latent;
        // frozen phrase encoder: latent sequences are constants for training
        let mut seqs = Vec::with_capacity(songs.len());
        let mut cms = Vec::with_capacity(songs.len());
        for s in songs {
            seqs.push(self.encode_song(s)?);
            let mut cm = Array2::zeros((SONG_PHRASES, pl));
            for (i, label) in s.labels.iter().enumerate() {
                let v = self.lcvae.class_mean(*label)?;
                for j in 0..pl {
                    cm[(i, j)] = v[j];
                }
            }
            cms.push(cm);
        }

        let mut opt = Adam::new(cfg.learning_rate, 0.9, 0.999, Some(cfg.grad_clip));
        let mut log = Vec::with_capacity(cfg.epochs);
        let mut step: u64 = 0;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..songs.len()).collect();
            crate::lcvae::shuffle(&mut order, rng);
            let mut sums = (0.0, 0.0, 0.0);
            for chunk in order.chunks(cfg.batch_size) {
                step += 1;
                let bsz = chunk.len();
                let eps_g = normal_noise(rng, &[bsz, cfg.latent_dim], cfg.eps_var);
                let eps_l = normal_noise(
                    rng,
                    &[SONG_PHRASES * bsz, pl],
                    self.lcvae.cfg.eps_var,
                );
                let (total, recon, kl, grads) = {
                    let mut t = Tape::new();
                    let mut binder = Binder::new(&mut t, true);
                    let gvars = self.gvae.bind(&mut binder);
                    let bound = binder.into_bound();
                    let mut frozen = Binder::new(&mut t, false);
                    let lvars = self.lcvae.bind(&mut frozen);

                    let xs: Vec<Var> = (0..SONG_PHRASES)
                        .map(|i| {
                            let mut m = ArrayD::zeros(IxDyn(&[bsz, pl]));
                            for (bi, &si) in chunk.iter().enumerate() {
                                for j in 0..pl {
                                    m[[bi, j]] = seqs[si].vecs[(i, j)];
                                }
                            }
                            t.constant(m)
                        })
                        .collect();
                    let (mu, lv) = self.gvae.encode_graph(&mut t, &gvars, &xs);
                    let e = t.constant(eps_g);
                    let half = t.scale(lv, 0.5);
                    let std = t.exp(half);
                    let noise = t.mul(std, e);
                    let z = t.add(mu, noise);
                    let outs = self.gvae.decode_graph(&mut t, &gvars.dec, z);

                    let recon = match cfg.recon_target {
                        ReconTarget::Song => {
                            // fold phrases into the batch: rows are
                            // [phrase*bsz + song]
                            let zin_parts: Vec<Var> = outs
                                .iter()
                                .enumerate()
                                .map(|(i, &o)| {
                                    let mut cm = ArrayD::zeros(IxDyn(&[bsz, pl]));
                                    for (bi, &si) in chunk.iter().enumerate() {
                                        for j in 0..pl {
                                            cm[[bi, j]] = cms[si][(i, j)];
                                        }
                                    }
                                    let cmv = t.constant(cm);
                                    t.add(o, cmv)
                                })
                                .collect();
                            let zin = t.concat(&zin_parts, 0);
                            let el = t.constant(eps_l);
                            let zin = t.add(zin, el);
                            let logits = self.lcvae.decode_graph(&mut t, &lvars.dec, zin);
                            let targets: Vec<Var> = (0..PHRASE_STEPS)
                                .map(|s| {
                                    let mut m =
                                        ArrayD::zeros(IxDyn(&[SONG_PHRASES * bsz, PITCHES]));
                                    for i in 0..SONG_PHRASES {
                                        for (bi, &si) in chunk.iter().enumerate() {
                                            let g = songs[si].phrases[i].grid();
                                            for j in 0..PITCHES {
                                                m[[i * bsz + bi, j]] = g[(s, j)] as f64;
                                            }
                                        }
                                    }
                                    t.constant(m)
                                })
                                .collect();
                            // recon_graph averages over rows' batch dim =
                            // 17*bsz; rescale to per-song
                            let r = self.lcvae.recon_graph(&mut t, &logits, &targets);
                            t.scale(r, SONG_PHRASES as f64)
                        }
                        ReconTarget::Latent => {
                            let mut acc: Option<Var> = None;
                            for (i, &o) in outs.iter().enumerate() {
                                let mut target = ArrayD::zeros(IxDyn(&[bsz, pl]));
                                for (bi, &si) in chunk.iter().enumerate() {
                                    for j in 0..pl {
                                        target[[bi, j]] = seqs[si].vecs[(i, j)];
                                    }
                                }
                                let tv = t.constant(target);
                                let d = t.sub(o, tv);
                                let d2 = t.mul(d, d);
                                let s = t.sum_all(d2);
                                acc = Some(match acc {
                                    Some(a) => t.add(a, s),
                                    None => s,
                                });
                            }
                            let s = acc.expect("non-empty sequence");
                            t.scale(s, 1.0 / bsz as f64)
                        }
                    };
                    let kl = self.gvae.kl_graph(&mut t, mu, lv);
                    let total = t.add(recon, kl);
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
                opt.step(&mut self.gvae, &grads);
                let w = bsz as f64;
                sums.0 += recon * w;
                sums.1 += kl * w;
                sums.2 += total * w;
            }
            let n = songs.len() as f64;
            let stats = GvaeEpochStats {
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

// ---- label-sequence VAE ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlnSeqConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub class_count: usize,
    pub seed: u64,
}

impl FlnSeqConfig {
    pub fn defaults(class_count: usize, seed: u64) -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 64,
            latent_dim: 32,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 60,
            class_count,
            seed,
        }
    }
}

/// Ordinary VAE over length-17 label sequences (embedded one-hots in, per-step
/// class logits out; argmax decoding keeps every label in range).
pub struct FlnSeqVae {
    pub cfg: FlnSeqConfig,
    pub emb: Linear,
    pub enc: Lstm,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub dec_h0: Linear,
    pub dec_c0: Linear,
    pub dec: Lstm,
    pub out: Linear,
}

impl Params for FlnSeqVae {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        self.emb.visit("flnseq.emb", f);
        self.enc.visit("flnseq.enc", f);
        self.mu_head.visit("flnseq.mu_head", f);
        self.logvar_head.visit("flnseq.logvar_head", f);
        self.dec_h0.visit("flnseq.dec_h0", f);
        self.dec_c0.visit("flnseq.dec_c0", f);
        self.dec.visit("flnseq.dec", f);
        self.out.visit("flnseq.out", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.emb.visit_mut("flnseq.emb", f);
        self.enc.visit_mut("flnseq.enc", f);
        self.mu_head.visit_mut("flnseq.mu_head", f);
        self.logvar_head.visit_mut("flnseq.logvar_head", f);
        self.dec_h0.visit_mut("flnseq.dec_h0", f);
        self.dec_c0.visit_mut("flnseq.dec_c0", f);
        self.dec.visit_mut("flnseq.dec", f);
        self.out.visit_mut("flnseq.out", f);
    }
}

struct FlnSeqVars {
    emb: crate::nn::LinearVars,
    enc: crate::nn::LstmVars,
    mu_head: crate::nn::LinearVars,
    logvar_head: crate::nn::LinearVars,
    dec_h0: crate::nn::LinearVars,
    dec_c0: crate::nn::LinearVars,
    dec: crate::nn::LstmVars,
    out: crate::nn::LinearVars,
}

impl FlnSeqVae {
    pub fn new(cfg: FlnSeqConfig, rng: &mut impl Rng) -> Self {
        let (c, e, h, l) = (cfg.class_count, cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim);
        Self {
            emb: Linear::new(rng, c, e, false),
            enc: Lstm::new(rng, e, h),
            mu_head: Linear::new(rng, h, l, true),
            logvar_head: Linear::new(rng, h, l, true),
            dec_h0: Linear::new(rng, l, h, true),
            dec_c0: Linear::new(rng, l, h, true),
            dec: Lstm::new(rng, l, h),
            out: Linear::new(rng, h, c, true),
            cfg,
        }
    }

    fn bind(&self, b: &mut Binder) -> FlnSeqVars {
        FlnSeqVars {
            emb: self.emb.bind(b, "flnseq.emb"),
            enc: self.enc.bind(b, "flnseq.enc"),
            mu_head: self.mu_head.bind(b, "flnseq.mu_head"),
            logvar_head: self.logvar_head.bind(b, "flnseq.logvar_head"),
            dec_h0: self.dec_h0.bind(b, "flnseq.dec_h0"),
            dec_c0: self.dec_c0.bind(b, "flnseq.dec_c0"),
            dec: self.dec.bind(b, "flnseq.dec"),
            out: self.out.bind(b, "flnseq.out"),
        }
    }

    fn decode_logits(&self, t: &mut Tape, vars: &FlnSeqVars, z: Var) -> Vec<Var> {
        let h0_pre = Linear::apply(t, &vars.dec_h0, z);
        let h0 = t.tanh(h0_pre);
        let c0_pre = Linear::apply(t, &vars.dec_c0, z);
        let c0 = t.tanh(c0_pre);
        let xs = vec![z; SONG_PHRASES];
        let hs = Lstm::run(t, &vars.dec, &xs, h0, c0);
        hs.into_iter()
            .map(|h| Linear::apply(t, &vars.out, h))
            .collect()
    }

    /// Train on label sequences (softmax cross-entropy + standard KL).
    pub fn train(
        &mut self,
        sequences: &[Vec<ClassLabel>],
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>, ModelError> {
        let cfg = self.cfg.clone();
        let mut opt = Adam::new(cfg.learning_rate, 0.9, 0.999, Some(5.0));
        let mut losses = Vec::with_capacity(cfg.epochs);
        let mut step = 0u64;
        for _epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..sequences.len()).collect();
            crate::lcvae::shuffle(&mut order, rng);
            let mut sum = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                step += 1;
                let bsz = chunk.len();
                let eps = normal_noise(rng, &[bsz, cfg.latent_dim], 1.0);
                let (loss, grads) = {
                    let mut t = Tape::new();
                    let mut binder = Binder::new(&mut t, true);
                    let vars = self.bind(&mut binder);
                    let bound = binder.into_bound();
                    let one_hots: Vec<ArrayD<f64>> = (0..SONG_PHRASES)
                        .map(|i| {
                            let labels: Vec<ClassLabel> =
                                chunk.iter().map(|&si| sequences[si][i]).collect();
                            labels_one_hot(&labels, cfg.class_count)
                        })
                        .collect();
                    let xs: Vec<Var> = one_hots
                        .iter()
                        .map(|oh| {
                            let c = t.constant(oh.clone());
                            Linear::apply(&mut t, &vars.emb, c)
                        })
                        .collect();
                    let b0 = t.shape(xs[0])[0];
                    let (h0, c0) = Lstm::zero_state(&mut t, b0, cfg.hidden_dim);
                    let hs = Lstm::run(&mut t, &vars.enc, &xs, h0, c0);
                    let last = *hs.last().unwrap();
                    let mu = Linear::apply(&mut t, &vars.mu_head, last);
                    let lv = Linear::apply(&mut t, &vars.logvar_head, last);
                    let e = t.constant(eps);
                    let half = t.scale(lv, 0.5);
                    let std = t.exp(half);
                    let noise = t.mul(std, e);
                    let z = t.add(mu, noise);
                    let logits = self.decode_logits(&mut t, &vars, z);
                    let mut ce_acc: Option<Var> = None;
                    for (lg, oh) in logits.iter().zip(&one_hots) {
                        let y = t.constant(oh.clone());
                        let ce = cross_entropy_graph(&mut t, *lg, y);
                        ce_acc = Some(match ce_acc {
                            Some(a) => t.add(a, ce),
                            None => ce,
                        });
                    }
                    let ce = ce_acc.unwrap();
                    let ce = t.scale(ce, 1.0 / bsz as f64);
                    // standard-normal KL
                    let m2 = t.mul(mu, mu);
                    let var = t.exp(lv);
                    let s = t.add(m2, var);
                    let s = t.sub(s, lv);
                    let s = t.add_scalar(s, -1.0);
                    let halfk = t.scale(s, 0.5);
                    let per = t.sum_axis(halfk, 1);
                    let kl = t.mean_all(per);
                    let total = t.add(ce, kl);
                    let grads = gradient_map(&mut t, total, &bound);
                    (t.scalar_value(total), grads)
                };
                if !loss.is_finite() {
                    return Err(ModelError::Divergence { step });
                }
                opt.step(self, &grads);
                sum += loss * bsz as f64;
            }
            losses.push(sum / sequences.len() as f64);
        }
        Ok(losses)
    }

    /// Draw a label sequence from the prior; argmax decoding clamps every
    /// label into `0..class_count`.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<ClassLabel> {
        let z = normal_noise(rng, &[1, self.cfg.latent_dim], 1.0);
        let mut t = Tape::new();
        let mut binder = Binder::new(&mut t, false);
        let vars = self.bind(&mut binder);
        let zv = t.constant(z);
        let logits = self.decode_logits(&mut t, &vars, zv);
        logits
            .iter()
            .map(|&lg| {
                let v = t.value(lg);
                let mut best = 0usize;
                for c in 1..self.cfg.class_count {
                    if v[[0, c]] > v[[0, best]] {
                        best = c;
                    }
                }
                ClassLabel(best as u32)
            })
            .collect()
    }
}

/// Softmax cross-entropy summed over the batch for one step: rows of `y` are
/// one-hot. Uses a detached row-max shift for stability.
pub fn cross_entropy_graph(t: &mut Tape, logits: Var, y: Var) -> Var {
    let vals = t.value(logits);
    let (b, _c) = (vals.shape()[0], vals.shape()[1]);
    let mut rowmax = ArrayD::zeros(IxDyn(&[b, 1]));
    for i in 0..b {
        let mut m = f64::NEG_INFINITY;
        for v in vals.index_axis(ndarray::Axis(0), i).iter() {
            m = m.max(*v);
        }
        rowmax[[i, 0]] = m;
    }
    let shape = t.shape(logits);
    let mx = t.constant(rowmax);
    let mxb = t.broadcast_to(mx, &shape);
    let sh = t.sub(logits, mxb);
    let e = t.exp(sh);
    let se = t.sum_axis(e, 1);
    let l = t.ln(se);
    let mxflat = t.reshape(mx, &[b]);
    let lse = t.add(l, mxflat);
    let yl = t.mul(y, logits);
    let ys = t.sum_axis(yl, 1);
    let ce = t.sub(lse, ys);
    t.sum_all(ce)
}
