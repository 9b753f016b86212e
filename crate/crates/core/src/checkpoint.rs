//! Model checkpoints: self-describing binary containers with config JSON,
//! named weight tensors, the dictionary (or its hash), and provenance hashes
//! that pin the task order (Task 2 requires Task 1's output, Task 3 requires
//! Task 2's).
//!
//! Layout, little-endian: magic `MSCK`, version u32, kind u8, then
//! length-prefixed sections (config, strings) and a tensor table.

use crate::error::ModelError;
use crate::fln::FlnClassDictionary;
use crate::hcgan::{Critic, GanConfig, Hcgan};
use crate::hcvae::{FlnSeqConfig, FlnSeqVae, Gvae, GvaeConfig, Hcvae};
use crate::lcvae::{Lcvae, LcvaeConfig};
use crate::nn::{weight_hash, Params};
use ndarray::{ArrayD, IxDyn};
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint is a {found} checkpoint, expected {expected}")]
    WrongKind { expected: String, found: String },
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Model(String),
}

impl From<ModelError> for CheckpointError {
    fn from(e: ModelError) -> Self {
        CheckpointError::Model(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Lcvae = 1,
    Hcvae = 2,
    Hcgan = 3,
}

impl Kind {
    fn from_u8(v: u8) -> Result<Self, CheckpointError> {
        match v {
            1 => Ok(Kind::Lcvae),
            2 => Ok(Kind::Hcvae),
            3 => Ok(Kind::Hcgan),
            other => Err(CheckpointError::Format(format!("unknown kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Lcvae => "lcvae",
            Kind::Hcvae => "hcvae",
            Kind::Hcgan => "hcgan",
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: Kind) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(kind as u8);
        Self { buf }
    }

    fn string(&mut self, s: &str) {
        self.buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn tensors(&mut self, params: &dyn Params) {
        let named = params.named_tensors();
        self.buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            self.string(&name);
            self.buf.push(t.ndim() as u8);
            for &d in t.shape() {
                self.buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.iter() {
                self.buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Format("non-utf8 string".into()))
    }

    fn tensors(&mut self) -> Result<Vec<(String, ArrayD<f64>)>, CheckpointError> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name = self.string()?;
            let ndim = self.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
                shape.push(d as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(self.take(8)?.try_into().unwrap()));
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| CheckpointError::Format(e.to_string()))?;
            out.push((name, arr));
        }
        Ok(out)
    }
}

fn open_reader<'a>(bytes: &'a [u8], expected: Kind) -> Result<Reader<'a>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let kind = Kind::from_u8(r.take(1)?[0])?;
    if kind != expected {
        return Err(CheckpointError::WrongKind {
            expected: expected.name().into(),
            found: kind.name().into(),
        });
    }
    Ok(r)
}

/// Peek at the kind tag without loading weights.
pub fn peek_kind(path: &Path) -> Result<Kind, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let _ = r.u32()?;
    Kind::from_u8(r.take(1)?[0])
}

fn load_into(params: &mut dyn Params, loaded: Vec<(String, ArrayD<f64>)>) -> Result<(), CheckpointError> {
    let map: std::collections::HashMap<String, ArrayD<f64>> = loaded.into_iter().collect();
    let mut missing = Vec::new();
    params.visit_mut(&mut |name, t| match map.get(name) {
        Some(v) if v.shape() == t.shape() => *t = v.clone(),
        Some(v) => missing.push(format!("{name}: shape {:?} vs {:?}", v.shape(), t.shape())),
        None => missing.push(format!("{name}: missing")),
    });
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CheckpointError::Format(format!(
            "weight table mismatch: {}",
            missing.join("; ")
        )))
    }
}

// ---- task 1 ----

pub fn save_lcvae(path: &Path, model: &Lcvae, dict: &FlnClassDictionary) -> Result<(), CheckpointError> {
    let mut w = Writer::new(Kind::Lcvae);
    let cfg = serde_json::to_string(&model.cfg).expect("config serializes");
    w.string(&cfg);
    w.string(&dict.to_text());
    w.tensors(model);
    fs::write(path, w.buf)?;
    Ok(())
}

pub fn load_lcvae(path: &Path) -> Result<(Lcvae, FlnClassDictionary), CheckpointError> {
    let bytes = fs::read(path)?;
    let mut r = open_reader(&bytes, Kind::Lcvae)?;
    let cfg: LcvaeConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| CheckpointError::Format(format!("bad config json: {e}")))?;
    let dict = FlnClassDictionary::from_text(&r.string()?)
        .map_err(|e| CheckpointError::Format(format!("bad dictionary: {e}")))?;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut model = Lcvae::new(cfg, &mut rng);
    load_into(&mut model, r.tensors()?)?;
    Ok((model, dict))
}

// ---- task 2 ----

pub fn save_hcvae(path: &Path, hcvae: &Hcvae, dict: &FlnClassDictionary) -> Result<(), CheckpointError> {
    let mut w = Writer::new(Kind::Hcvae);
    let cfg = serde_json::to_string(&hcvae.gvae.cfg).expect("config serializes");
    w.string(&cfg);
    w.string(&dict.hash());
    w.string(&weight_hash(&hcvae.lcvae));
    w.tensors(&hcvae.gvae);
    match &hcvae.flnseq {
        Some(f) => {
            w.string(&serde_json::to_string(&f.cfg).expect("config serializes"));
            w.tensors(f);
        }
        None => w.string(""),
    }
    fs::write(path, w.buf)?;
    Ok(())
}

/// Load a Task-2 checkpoint on top of its Task-1 checkpoint, verifying the
/// provenance hashes (phrase-model weights and dictionary).
pub fn load_hcvae(path: &Path, lcvae_path: &Path) -> Result<(Hcvae, FlnClassDictionary), CheckpointError> {
    let (lcvae, dict) = load_lcvae(lcvae_path)?;
    let bytes = fs::read(path)?;
    let mut r = open_reader(&bytes, Kind::Hcvae)?;
    let cfg: GvaeConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| CheckpointError::Format(format!("bad config json: {e}")))?;
    let dict_hash = r.string()?;
    if dict_hash != dict.hash() {
        return Err(CheckpointError::Provenance(
            "dictionary hash does not match the phrase checkpoint".into(),
        ));
    }
    let lcvae_hash = r.string()?;
    if lcvae_hash != weight_hash(&lcvae) {
        return Err(CheckpointError::Provenance(
            "phrase-model weights do not match the hash this model was trained against".into(),
        ));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
    let mut gvae = Gvae::new(cfg, lcvae.cfg.latent_dim, &mut rng);
    load_into(&mut gvae, r.tensors()?)?;
    let fln_cfg_json = r.string()?;
    let flnseq = if fln_cfg_json.is_empty() {
        None
    } else {
        let fcfg: FlnSeqConfig = serde_json::from_str(&fln_cfg_json)
            .map_err(|e| CheckpointError::Format(format!("bad flnseq config: {e}")))?;
        let mut f = FlnSeqVae::new(fcfg, &mut rng);
        load_into(&mut f, r.tensors()?)?;
        Some(f)
    };
    Ok((Hcvae { lcvae, gvae, flnseq }, dict))
}

// ---- task 3 ----

pub fn save_hcgan(
    path: &Path,
    gan: &Hcgan,
    dict: &FlnClassDictionary,
    warm_start_hash: &str,
) -> Result<(), CheckpointError> {
    let mut w = Writer::new(Kind::Hcgan);
    let cfg = serde_json::to_string(&gan.cfg).expect("config serializes");
    w.string(&cfg);
    w.string(&dict.hash());
    w.string(&weight_hash(&gan.hcvae.lcvae));
    w.string(warm_start_hash);
    w.string(&serde_json::to_string(&gan.hcvae.gvae.cfg).expect("config serializes"));
    w.tensors(&gan.hcvae.gvae);
    w.tensors(&gan.critic);
    // the phrase decoder may have been trainable; persist the whole phrase
    // model so generation does not depend on the Task-1 file's weights
    w.tensors(&gan.hcvae.lcvae);
    w.string(&serde_json::to_string(&gan.hcvae.lcvae.cfg).expect("config serializes"));
    fs::write(path, w.buf)?;
    Ok(())
}

pub fn load_hcgan(path: &Path, lcvae_path: &Path) -> Result<(Hcgan, FlnClassDictionary), CheckpointError> {
    let (_, dict) = load_lcvae(lcvae_path)?;
    let bytes = fs::read(path)?;
    let mut r = open_reader(&bytes, Kind::Hcgan)?;
    let cfg: GanConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| CheckpointError::Format(format!("bad config json: {e}")))?;
    let dict_hash = r.string()?;
    if dict_hash != dict.hash() {
        return Err(CheckpointError::Provenance(
            "dictionary hash does not match the phrase checkpoint".into(),
        ));
    }
    let _lcvae_hash_at_save = r.string()?;
    let _warm_start = r.string()?;
    let gcfg: GvaeConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| CheckpointError::Format(format!("bad gvae config: {e}")))?;
    let gvae_tensors = r.tensors()?;
    let critic_tensors = r.tensors()?;
    let lcvae_tensors = r.tensors()?;
    let lcfg: LcvaeConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| CheckpointError::Format(format!("bad lcvae config: {e}")))?;

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
    let mut lcvae = Lcvae::new(lcfg, &mut rng);
    load_into(&mut lcvae, lcvae_tensors)?;
    let mut gvae = Gvae::new(gcfg, lcvae.cfg.latent_dim, &mut rng);
    load_into(&mut gvae, gvae_tensors)?;
    let mut critic = Critic::from_shared_encoder(&lcvae.enc, cfg.conv_channels, &mut rng);
    load_into(&mut critic, critic_tensors)?;
    let hcvae = Hcvae { lcvae, gvae, flnseq: None };
    Ok((Hcgan { hcvae, critic, cfg }, dict))
}
