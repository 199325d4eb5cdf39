//! `PNRV` checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PNRV" | u32 version | u64 len, config text | u32 count, params | u8 has_mask, mask bits | sha256
//! param: u32 len, path | u8 kind | u32 ndim, u64 dims | f64 values
//! ```
//!
//! The config text is the run configuration with all video dimensions set.
//! Mask bits are packed LSB first, one byte-aligned run per parameter.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{PatchLayout, RunConfig};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{Param, ParamKind, ParamStore};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"PNRV";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
}

impl Checkpoint {
    pub fn run_config(&self) -> RunConfig {
        let cfg = &self.model.config;
        RunConfig {
            patch: PatchLayout::from(&cfg.patch),
            embed: cfg.embed.clone(),
            decoder: cfg.decoder.clone(),
            train: self.train.clone(),
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = ck.run_config().to_text();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());

    let params = ck.model.params.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.path.len() as u32).to_le_bytes());
        out.extend_from_slice(p.path.as_bytes());
        out.push(p.kind.tag());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &ck.model.mask {
        None => out.push(0),
        Some(mask) => {
            out.push(1);
            for m in mask {
                for chunk in m.chunks(8) {
                    let byte = chunk.iter().enumerate().fold(0u8, |b, (i, &keep)| b | ((keep as u8) << i));
                    out.push(byte);
                }
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.array()?)).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a PNRV checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let text_len = c.len()?;
    let run = RunConfig::parse(&c.string(text_len)?)?;
    let spec = run.patch.spec()?;

    let count = c.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let path_len = c.u32()? as usize;
        let path = c.string(path_len)?;
        let kind = ParamKind::from_tag(c.u8()?).ok_or_else(|| Error::Checkpoint(format!("bad kind for `{path}`")))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(Param {
            path,
            shape,
            kind,
            data,
        });
    }
    let store = ParamStore::from_params(params)?;
    let mask = match c.u8()? {
        0 => None,
        1 => Some(
            store
                .params()
                .iter()
                .map(|p| {
                    let bytes = c.take(p.data.len().div_ceil(8))?;
                    Ok((0..p.data.len()).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
                })
                .collect::<Result<Vec<Vec<bool>>>>()?,
        ),
        _ => return Err(Error::Checkpoint("bad mask flag".into())),
    };
    if c.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }

    let config = run.model_config(spec);
    // the stored table must have exactly the layout this configuration builds
    let fresh = Model::new(config.clone(), 0)?;
    let layout = |s: &ParamStore| -> Vec<(String, Vec<usize>, ParamKind)> {
        s.params().iter().map(|p| (p.path.clone(), p.shape.clone(), p.kind)).collect()
    };
    if layout(&fresh.params) != layout(&store) {
        return Err(Error::Checkpoint("parameter table does not match the stored configuration".into()));
    }
    Ok(Checkpoint {
        model: Model::from_parts(config, store, mask)?,
        train: run.train,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
