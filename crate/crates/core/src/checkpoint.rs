//! Single-file model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PGTX"  u32 version  u8 kind
//! u32 len  metadata JSON
//! tensor table
//! u8 has_optimizer  [u32 len  optimizer JSON  tensor table]
//! ```
//!
//! A tensor table is `u32 count` followed by, per tensor, `u16 name length`,
//! the UTF-8 name, `u8 rank`, `u32` dims and the `f32` data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeStats;
use crate::error::{Error, Result};
use crate::graph::ParamSet;
use crate::optim::{Moments, OptimizerKind, OptimizerState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PGTX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Perceptual,
    Generator,
    Discriminator,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Perceptual => 0,
            ModelKind::Generator => 1,
            ModelKind::Discriminator => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => ModelKind::Perceptual,
            1 => ModelKind::Generator,
            2 => ModelKind::Discriminator,
            other => return Err(Error::Format(format!("unknown model kind tag {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    pub crate_version: String,
    pub iteration: Option<u64>,
    /// Architecture or training configuration, as written by the owner.
    pub config: serde_json::Value,
    pub stats: Option<AttributeStats>,
}

impl CheckpointMeta {
    pub fn now(config: serde_json::Value, stats: Option<AttributeStats>, iteration: Option<u64>) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        CheckpointMeta {
            created_unix,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            iteration,
            config,
            stats,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub meta: CheckpointMeta,
    pub tensors: ParamSet<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    step: u64,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, len: usize, what: &str) -> Result<()> {
    let v = u32::try_from(len).map_err(|_| Error::Format(format!("{what} too large ({len})")))?;
    put_u32(out, v);
    Ok(())
}

fn put_json(out: &mut Vec<u8>, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec(value)?;
    put_len(out, bytes.len(), "metadata")?;
    out.extend_from_slice(&bytes);
    Ok(())
}

fn put_table(out: &mut Vec<u8>, tensors: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    put_len(out, tensors.len(), "tensor count")?;
    for (name, t) in tensors {
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Format(format!("rank too high for {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            put_len(out, d, "dimension")?;
        }
        out.reserve(t.numel() * 4);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        Ok(serde_json::from_slice(self.take(len)?)?)
    }

    fn table(&mut self) -> Result<BTreeMap<String, Tensor<f32>>> {
        let count = self.u32()?;
        let mut out = BTreeMap::new();
        for _ in 0..count {
            let name_len = self.u16()? as usize;
            let name = std::str::from_utf8(self.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = self.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            let data = self
                .take(numel)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn new(kind: ModelKind, meta: CheckpointMeta, tensors: ParamSet<f32>) -> Self {
        Checkpoint {
            kind,
            meta,
            tensors,
            optimizer: None,
        }
    }

    pub fn with_optimizer(mut self, optimizer: OptimizerState<f32>) -> Self {
        self.optimizer = Some(optimizer);
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.push(self.kind.tag());
        put_json(&mut out, &self.meta)?;
        put_table(&mut out, &self.tensors)?;
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                put_json(
                    &mut out,
                    &OptimizerHeader {
                        kind: opt.kind,
                        step: opt.step,
                    },
                )?;
                let mut table = BTreeMap::new();
                for (name, m) in &opt.moments {
                    table.insert(format!("{name}#first"), m.first.clone());
                    table.insert(format!("{name}#second"), m.second.clone());
                }
                put_table(&mut out, &table)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let kind = ModelKind::from_tag(c.u8()?)?;
        let meta: CheckpointMeta = c.json()?;
        let tensors = c.table()?;
        let optimizer = match c.u8()? {
            0 => None,
            1 => {
                let header: OptimizerHeader = c.json()?;
                let mut table = c.table()?;
                let mut moments = BTreeMap::new();
                let names: Vec<String> = table
                    .keys()
                    .filter_map(|k| k.strip_suffix("#first").map(str::to_string))
                    .collect();
                for name in names {
                    let first = table.remove(&format!("{name}#first")).expect("listed above");
                    let second = table
                        .remove(&format!("{name}#second"))
                        .ok_or_else(|| Error::Format(format!("optimizer moments for `{name}` are incomplete")))?;
                    moments.insert(name, Moments { first, second });
                }
                if let Some(stray) = table.keys().next() {
                    return Err(Error::Format(format!("stray optimizer tensor `{stray}`")));
                }
                Some(OptimizerState {
                    kind: header.kind,
                    step: header.step,
                    moments,
                })
            }
            other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
        };
        if c.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        Ok(Checkpoint {
            kind,
            meta,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Fail unless this checkpoint holds a model of `kind`.
    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// The config snapshot decoded as `T`.
    pub fn config<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.config.clone())?)
    }

    pub fn stats(&self) -> Result<&AttributeStats> {
        self.meta
            .stats
            .as_ref()
            .ok_or_else(|| Error::Format("checkpoint carries no attribute statistics".into()))
    }
}
