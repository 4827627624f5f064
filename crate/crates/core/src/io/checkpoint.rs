use crate::dataset::hex;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RadioNet};
use crate::nn::ParamStore;
use crate::tensor::{RngState, Tensor};
use crate::train::{Adam, TrainConfig, Trainer};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RNCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// SHA-256 of the canonical model config.
pub fn config_digest(cfg: &ModelConfig) -> [u8; 32] {
    Sha256::digest(cfg.canonical().as_bytes()).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Raw contents of a checkpoint file.
///
/// Layout, little-endian: magic `RNCK`, `u32` version, `u32`-prefixed variant
/// name, 32-byte config digest, `u32`-prefixed canonical config text, `u64`
/// iteration, `u32` entry count, then per entry a `u32`-prefixed name, `u32`
/// rank, `u32` dims and `f32` data. Model parameters come first in store
/// order, followed by optional `adam.m.*` and `adam.v.*` moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: String,
    pub digest: [u8; 32],
    pub config_text: String,
    pub iteration: u64,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_model(model: &RadioNet, iteration: u64) -> Self {
        let entries = model
            .params
            .iter()
            .map(|(name, t)| CheckpointEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            variant: model.cfg.variant.name().to_string(),
            digest: config_digest(&model.cfg),
            config_text: model.cfg.canonical(),
            iteration,
            entries,
        }
    }

    /// Model parameters plus optimizer moments.
    pub fn from_trainer(t: &Trainer) -> Self {
        let mut ck = Self::from_model(&t.model, t.iteration as u64);
        for (prefix, moments) in [(ADAM_M, &t.adam.m), (ADAM_V, &t.adam.v)] {
            for ((name, _), m) in t.model.params.iter().zip(moments) {
                ck.entries.push(CheckpointEntry {
                    name: format!("{prefix}{name}"),
                    shape: m.shape().to_vec(),
                    data: m.data().to_vec(),
                });
            }
        }
        ck
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest)
    }

    /// Stored model config, after checking it against the stored digest and,
    /// when given, against `expected`.
    pub fn model_config(&self, expected: Option<&ModelConfig>) -> Result<ModelConfig> {
        let text_digest: [u8; 32] = Sha256::digest(self.config_text.as_bytes()).into();
        if text_digest != self.digest {
            return Err(Error::Format("checkpoint config does not match its digest".into()));
        }
        if let Some(e) = expected {
            if config_digest(e) != self.digest {
                return Err(Error::Config(format!(
                    "checkpoint was written for a different model config (digest {}, expected {})",
                    self.digest_hex(),
                    hex(&config_digest(e))
                )));
            }
        }
        let cfg = ModelConfig::from_canonical(&self.config_text)?;
        if cfg.variant.name() != self.variant {
            return Err(Error::Format(format!(
                "checkpoint variant {} disagrees with its config",
                self.variant
            )));
        }
        Ok(cfg)
    }

    fn store_with_prefix(&self, prefix: &str, names: &[String]) -> Result<Option<ParamStore>> {
        let mut store = ParamStore::new();
        for name in names {
            let full = format!("{prefix}{name}");
            let Some(e) = self.entries.iter().find(|e| e.name == full) else {
                if prefix.is_empty() || store.len() > 0 {
                    return Err(Error::Format(format!("checkpoint lacks entry {full}")));
                }
                return Ok(None);
            };
            store.add(name, Tensor::new(&e.shape, e.data.clone())?);
        }
        Ok(Some(store))
    }

    /// Rebuild the model. Refuses when the digest does not match `expected`.
    pub fn restore_model(&self, expected: Option<&ModelConfig>) -> Result<RadioNet> {
        let cfg = self.model_config(expected)?;
        let mut model = RadioNet::new(cfg, &mut RngState::new(0))?;
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        let known = names.len() * 3;
        if self.entries.len() != names.len() && self.entries.len() != known {
            return Err(Error::Format(format!(
                "checkpoint has {} entries, model has {} parameters",
                self.entries.len(),
                names.len()
            )));
        }
        let store = self.store_with_prefix("", &names)?.expect("model entries");
        model.params.load_from(&store)?;
        Ok(model)
    }

    /// Rebuild a trainer positioned at the stored iteration. Optimizer
    /// moments are restored when present, otherwise they start at zero.
    pub fn restore_trainer(
        &self,
        expected: Option<&ModelConfig>,
        cfg: TrainConfig,
        train_indices: Vec<usize>,
    ) -> Result<Trainer> {
        let model = self.restore_model(expected)?;
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        let mut t = Trainer::new(model, cfg, train_indices)?;
        t.iteration = self.iteration as usize;
        let m = self.store_with_prefix(ADAM_M, &names)?;
        let v = self.store_with_prefix(ADAM_V, &names)?;
        if let (Some(m), Some(v)) = (m, v) {
            t.adam = Adam {
                step: self.iteration,
                m: m.iter().map(|(_, x)| x.clone()).collect(),
                v: v.iter().map(|(_, x)| x.clone()).collect(),
                ..Adam::new(&t.model.params)
            };
        }
        Ok(t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.variant)?;
        w.write_all(&self.digest)?;
        write_str(&mut w, &self.config_text)?;
        w.write_all(&self.iteration.to_le_bytes())?;
        write_u32(&mut w, self.entries.len())?;
        for e in &self.entries {
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(Error::Contract(format!("entry {} has inconsistent shape", e.name)));
            }
            write_str(&mut w, &e.name)?;
            write_u32(&mut w, e.shape.len())?;
            for &d in &e.shape {
                write_u32(&mut w, d)?;
            }
            let mut buf = Vec::with_capacity(4 * e.data.len());
            for v in &e.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an RNCK checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let variant = read_str(&mut r)?;
        let mut digest = [0u8; 32];
        read_exact(&mut r, &mut digest)?;
        let config_text = read_str(&mut r)?;
        let mut it = [0u8; 8];
        read_exact(&mut r, &mut it)?;
        let n = read_u32(&mut r)?;
        let mut entries = Vec::new();
        for _ in 0..n {
            let name = read_str(&mut r)?;
            let rank = read_u32(&mut r)?;
            let shape = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l <= 1 << 28)
                .ok_or_else(|| Error::Format(format!("entry {name} has an implausible shape {shape:?}")))?;
            let mut bytes = vec![0u8; 4 * len];
            read_exact(&mut r, &mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(CheckpointEntry { name, shape, data });
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint entries".into()));
        }
        Ok(Self {
            variant,
            digest,
            config_text,
            iteration: u64::from_le_bytes(it),
            entries,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("checkpoint truncated".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)?;
    if n > 1 << 20 {
        return Err(Error::Format(format!("string of {n} bytes in checkpoint")));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
}
