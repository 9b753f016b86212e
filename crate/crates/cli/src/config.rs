//! Flat key-value run configuration.
//!
//! A config file holds `key = value` lines (`#` comments allowed); command
//! line `--set key=value` pairs override file values. Unknown keys are
//! rejected. The seed has no default: training and generation refuse to run
//! without one.

use anyhow::{anyhow, bail, Result};
use flngen_core::hcgan::GanConfig;
use flngen_core::hcvae::{FlnSeqConfig, GvaeConfig, ReconTarget};
use flngen_core::lcvae::LcvaeConfig;
use flngen_core::metrics::MetricsConfig;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: Option<u64>,
    // lcvae
    pub lcvae_latent_dim: usize,
    pub lcvae_intermediate_dim: usize,
    pub lcvae_eps_var: f64,
    pub lcvae_batch_size: usize,
    pub lcvae_learning_rate: f64,
    pub lcvae_grad_clip: f64,
    pub lcvae_epochs: usize,
    pub lcvae_binarize_threshold: f64,
    // gvae
    pub gvae_latent_dim: usize,
    pub gvae_intermediate_dim: usize,
    pub gvae_eps_var: f64,
    pub gvae_batch_size: usize,
    pub gvae_learning_rate: f64,
    pub gvae_grad_clip: f64,
    pub gvae_epochs: usize,
    pub gvae_recon_target: ReconTarget,
    // flnseq
    pub flnseq_embed_dim: usize,
    pub flnseq_hidden_dim: usize,
    pub flnseq_latent_dim: usize,
    pub flnseq_batch_size: usize,
    pub flnseq_learning_rate: f64,
    pub flnseq_epochs: usize,
    // gan
    pub gan_gp_weight: f64,
    pub gan_critic_steps_per_gen: usize,
    pub gan_learning_rate: f64,
    pub gan_beta1: f64,
    pub gan_beta2: f64,
    pub gan_batch_size: usize,
    pub gan_steps: usize,
    pub gan_conv_channels: (usize, usize),
    pub gan_shared_encoder_trainable: bool,
    pub gan_lcvae_decoder_trainable: bool,
    // metrics
    pub metrics_bar_steps: usize,
    pub metrics_qn_min_steps: usize,
    pub metrics_upc_includes_empty_bars: bool,
    // preprocess
    pub preprocess_min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            lcvae_latent_dim: 32,
            lcvae_intermediate_dim: 256,
            lcvae_eps_var: 0.01,
            lcvae_batch_size: 32,
            lcvae_learning_rate: 1e-3,
            lcvae_grad_clip: 5.0,
            lcvae_epochs: 30,
            lcvae_binarize_threshold: 0.5,
            gvae_latent_dim: 256,
            gvae_intermediate_dim: 256,
            gvae_eps_var: 0.1,
            gvae_batch_size: 32,
            gvae_learning_rate: 1e-3,
            gvae_grad_clip: 5.0,
            gvae_epochs: 30,
            gvae_recon_target: ReconTarget::Song,
            flnseq_embed_dim: 16,
            flnseq_hidden_dim: 64,
            flnseq_latent_dim: 32,
            flnseq_batch_size: 32,
            flnseq_learning_rate: 1e-3,
            flnseq_epochs: 60,
            gan_gp_weight: 1.0,
            gan_critic_steps_per_gen: 5,
            gan_learning_rate: 1e-4,
            gan_beta1: 0.5,
            gan_beta2: 0.9,
            gan_batch_size: 8,
            gan_steps: 1000,
            gan_conv_channels: (64, 32),
            gan_shared_encoder_trainable: true,
            gan_lcvae_decoder_trainable: false,
            metrics_bar_steps: 25,
            metrics_qn_min_steps: 2,
            metrics_upc_includes_empty_bars: true,
            preprocess_min_count: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| anyhow!("line {}: {e}", lineno + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| anyhow!("bad value {v:?} for {key}"))
        }
        match key {
            "seed" => self.seed = Some(p(key, value)?),
            "lcvae.latent_dim" => self.lcvae_latent_dim = p(key, value)?,
            "lcvae.intermediate_dim" => self.lcvae_intermediate_dim = p(key, value)?,
            "lcvae.eps_var" => self.lcvae_eps_var = p(key, value)?,
            "lcvae.batch_size" => self.lcvae_batch_size = p(key, value)?,
            "lcvae.learning_rate" => self.lcvae_learning_rate = p(key, value)?,
            "lcvae.grad_clip" => self.lcvae_grad_clip = p(key, value)?,
            "lcvae.epochs" => self.lcvae_epochs = p(key, value)?,
            "lcvae.binarize_threshold" => self.lcvae_binarize_threshold = p(key, value)?,
            "gvae.latent_dim" => self.gvae_latent_dim = p(key, value)?,
            "gvae.intermediate_dim" => self.gvae_intermediate_dim = p(key, value)?,
            "gvae.eps_var" => self.gvae_eps_var = p(key, value)?,
            "gvae.batch_size" => self.gvae_batch_size = p(key, value)?,
            "gvae.learning_rate" => self.gvae_learning_rate = p(key, value)?,
            "gvae.grad_clip" => self.gvae_grad_clip = p(key, value)?,
            "gvae.epochs" => self.gvae_epochs = p(key, value)?,
            "gvae.recon_target" => {
                self.gvae_recon_target = match value {
                    "song" => ReconTarget::Song,
                    "latent" => ReconTarget::Latent,
                    other => bail!("gvae.recon_target must be song or latent, got {other:?}"),
                }
            }
            "flnseq.embed_dim" => self.flnseq_embed_dim = p(key, value)?,
            "flnseq.hidden_dim" => self.flnseq_hidden_dim = p(key, value)?,
            "flnseq.latent_dim" => self.flnseq_latent_dim = p(key, value)?,
            "flnseq.batch_size" => self.flnseq_batch_size = p(key, value)?,
            "flnseq.learning_rate" => self.flnseq_learning_rate = p(key, value)?,
            "flnseq.epochs" => self.flnseq_epochs = p(key, value)?,
            "gan.gp_weight" => self.gan_gp_weight = p(key, value)?,
            "gan.critic_steps_per_gen" => self.gan_critic_steps_per_gen = p(key, value)?,
            "gan.learning_rate" => self.gan_learning_rate = p(key, value)?,
            "gan.beta1" => self.gan_beta1 = p(key, value)?,
            "gan.beta2" => self.gan_beta2 = p(key, value)?,
            "gan.batch_size" => self.gan_batch_size = p(key, value)?,
            "gan.steps" => self.gan_steps = p(key, value)?,
            "gan.conv_channels" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| anyhow!("gan.conv_channels must be C1,C2"))?;
                self.gan_conv_channels = (p(key, a.trim())?, p(key, b.trim())?);
            }
            "gan.shared_encoder_trainable" => self.gan_shared_encoder_trainable = p(key, value)?,
            "gan.lcvae_decoder_trainable" => self.gan_lcvae_decoder_trainable = p(key, value)?,
            "metrics.bar_steps" => self.metrics_bar_steps = p(key, value)?,
            "metrics.qn_min_steps" => self.metrics_qn_min_steps = p(key, value)?,
            "metrics.upc_includes_empty_bars" => {
                self.metrics_upc_includes_empty_bars = p(key, value)?
            }
            "preprocess.min_count" => self.preprocess_min_count = p(key, value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| anyhow!("a seed is required (set `seed` in the config or pass --seed)"))
    }

    pub fn lcvae(&self, class_count: usize, seed: u64) -> LcvaeConfig {
        LcvaeConfig {
            latent_dim: self.lcvae_latent_dim,
            intermediate_dim: self.lcvae_intermediate_dim,
            eps_var: self.lcvae_eps_var,
            batch_size: self.lcvae_batch_size,
            class_count,
            learning_rate: self.lcvae_learning_rate,
            grad_clip: self.lcvae_grad_clip,
            epochs: self.lcvae_epochs,
            binarize_threshold: self.lcvae_binarize_threshold,
            seed,
        }
    }

    pub fn gvae(&self, seed: u64) -> GvaeConfig {
        GvaeConfig {
            latent_dim: self.gvae_latent_dim,
            intermediate_dim: self.gvae_intermediate_dim,
            eps_var: self.gvae_eps_var,
            batch_size: self.gvae_batch_size,
            learning_rate: self.gvae_learning_rate,
            grad_clip: self.gvae_grad_clip,
            epochs: self.gvae_epochs,
            recon_target: self.gvae_recon_target,
            seed,
        }
    }

    pub fn flnseq(&self, class_count: usize, seed: u64) -> FlnSeqConfig {
        FlnSeqConfig {
            embed_dim: self.flnseq_embed_dim,
            hidden_dim: self.flnseq_hidden_dim,
            latent_dim: self.flnseq_latent_dim,
            batch_size: self.flnseq_batch_size,
            learning_rate: self.flnseq_learning_rate,
            epochs: self.flnseq_epochs,
            class_count,
            seed,
        }
    }

    pub fn gan(&self, seed: u64) -> GanConfig {
        GanConfig {
            gp_weight: self.gan_gp_weight,
            critic_steps_per_gen: self.gan_critic_steps_per_gen,
            learning_rate: self.gan_learning_rate,
            beta1: self.gan_beta1,
            beta2: self.gan_beta2,
            batch_size: self.gan_batch_size,
            steps: self.gan_steps,
            conv_channels: self.gan_conv_channels,
            shared_encoder_trainable: self.gan_shared_encoder_trainable,
            lcvae_decoder_trainable: self.gan_lcvae_decoder_trainable,
            seed,
        }
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            bar_steps: self.metrics_bar_steps,
            qn_min_steps: self.metrics_qn_min_steps,
            upc_includes_empty_bars: self.metrics_upc_includes_empty_bars,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("lcvae.latent_dim = 16").is_ok());
        assert_eq!(cfg.lcvae_latent_dim, 16);
        assert!(cfg.apply_text("nonsense.key = 3").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ok() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\n\nseed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, Some(9));
    }

    #[test]
    fn seed_has_no_default() {
        let cfg = RunConfig::default();
        assert!(cfg.require_seed().is_err());
    }
}
