//! Hierarchical FLN-conditioned VAE-GAN for single-track symbolic music.
//!
//! Pipeline: MIDI corpus preprocessing ([`corpus`]), first-and-last-notes
//! conditioning ([`fln`]), a phrase-level conditional VAE ([`lcvae`]), a
//! global VAE over phrase latents ([`hcvae`]), a WGAN-GP refinement stage
//! ([`hcgan`]), and objective evaluation ([`metrics`]).

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod fln;
pub mod hcgan;
pub mod hcvae;
pub mod lcvae;
pub mod metrics;
pub mod midi;
pub mod nn;
pub mod store;
pub mod synthetic;

pub use corpus::{NoteEvent, Phrase, PianoRoll, SongTensor};
pub use error::ModelError;
pub use fln::{ClassLabel, FlnClassDictionary, FlnPair};
pub use hcgan::{Critic, GanConfig, Hcgan};
pub use hcvae::{Gvae, GvaeConfig, Hcvae, LatentSequence};
pub use lcvae::{EncoderOutput, Lcvae, LcvaeConfig};
pub use metrics::{MetricsConfig, MetricsReport};
