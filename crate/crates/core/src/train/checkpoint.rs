//! Binary model checkpoints.
//!
//! ```text
//! "TKCK"  u16 version
//! u32 header length, header text (key = value lines, config keys prefixed "config.")
//! u32 tensor count, then per tensor:
//!     u32 name length, name, u8 kind (0 trainable, 1 buffer),
//!     u32 rank, u32 extents…, f64 values
//! u32 CRC-32 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::config::TrainConfig;
use super::model::GaitModel;
use crate::error::{Error, Result};
use crate::numerics::{ParamKind, Parameterized};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TKCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    /// Training subject id of each class index.
    pub labels: Vec<u32>,
    pub epoch: usize,
}

fn header_text(meta: &CheckpointMeta) -> String {
    let labels: Vec<String> = meta.labels.iter().map(u32::to_string).collect();
    let mut s = format!(
        "epoch = {}\nclasses = {}\nlabels = {}\nconfig_hash = {}\n",
        meta.epoch,
        meta.labels.len(),
        labels.join(","),
        meta.config.architecture_hash()
    );
    for (k, v) in meta.config.entries() {
        s.push_str(&format!("config.{k} = {v}\n"));
    }
    s
}

pub fn encode_checkpoint(model: &GaitModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if model.classes() != meta.labels.len() {
        return Err(Error::contract(format!(
            "model has {} classes but {} labels were given",
            model.classes(),
            meta.labels.len()
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = header_text(meta);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let params = model.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(match p.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &e in p.tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn parse_header(text: &str) -> Result<(CheckpointMeta, String)> {
    let mut config = TrainConfig::default();
    let (mut epoch, mut classes, mut labels, mut hash) = (None, None, None, None);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Format { offset: 0, msg: format!("bad header line '{line}'") })?;
        let bad = |what: &str| Error::Format { offset: 0, msg: format!("bad header {what} '{v}'") };
        match k {
            "epoch" => epoch = Some(v.parse::<usize>().map_err(|_| bad("epoch"))?),
            "classes" => classes = Some(v.parse::<usize>().map_err(|_| bad("class count"))?),
            "labels" => {
                labels = Some(if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| s.parse::<u32>().map_err(|_| bad("labels"))).collect::<Result<Vec<_>>>()?
                })
            }
            "config_hash" => hash = Some(v.to_string()),
            _ => match k.strip_prefix("config.") {
                Some(ck) => config.set(ck, v).map_err(|e| Error::Format { offset: 0, msg: e.to_string() })?,
                None => return Err(Error::Format { offset: 0, msg: format!("unknown header key '{k}'") }),
            },
        }
    }
    let missing = |k: &str| Error::Format { offset: 0, msg: format!("header lacks '{k}'") };
    let labels = labels.ok_or_else(|| missing("labels"))?;
    if classes.ok_or_else(|| missing("classes"))? != labels.len() {
        return Err(Error::Format { offset: 0, msg: "class count disagrees with label list".into() });
    }
    let meta = CheckpointMeta { config, labels, epoch: epoch.ok_or_else(|| missing("epoch"))? };
    Ok((meta, hash.ok_or_else(|| missing("config_hash"))?))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, GaitModel)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic".into() });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    if bytes.len() < 10 {
        return Err(r.fail("truncated"));
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body]) != stored {
        return Err(Error::Format { offset: body as u64, msg: "checksum mismatch".into() });
    }
    let r = &mut Reader { bytes: &bytes[..body], pos: 6 };
    let hlen = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(hlen)?).map_err(|_| r.fail("header is not UTF-8"))?;
    let (meta, hash) = parse_header(header)?;
    if hash != meta.config.architecture_hash() {
        return Err(Error::Mismatch("config hash does not match the recorded configuration".into()));
    }
    let mut model = GaitModel::new(&meta.config, meta.labels.len())
        .map_err(|e| Error::Format { offset: 10, msg: format!("cannot rebuild model: {e}") })?;
    let count = r.u32()? as usize;
    let mut params = model.named_params_mut();
    if count != params.len() {
        return Err(Error::Mismatch(format!("checkpoint has {count} tensors, model has {}", params.len())));
    }
    for p in params.iter_mut() {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| r.fail("tensor name is not UTF-8"))?;
        if name != p.name {
            return Err(Error::Mismatch(format!("expected tensor '{}', found '{name}'", p.name)));
        }
        r.take(1)?;
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        if shape != p.tensor.shape() {
            return Err(Error::Mismatch(format!("tensor '{name}' is {shape:?}, model expects {:?}", p.tensor.shape())));
        }
        for slot in p.tensor.data_mut() {
            *slot = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    drop(params);
    if r.pos != body {
        return Err(r.fail("trailing bytes before checksum"));
    }
    Ok((meta, model))
}

/// Refuses checkpoints whose architecture differs from `expected`, listing
/// every differing field.
pub fn check_architecture(found: &TrainConfig, expected: &TrainConfig) -> Result<()> {
    let diffs: Vec<String> = found
        .architecture()
        .into_iter()
        .zip(expected.architecture())
        .filter(|(a, b)| a.1 != b.1)
        .map(|((k, a), (_, b))| format!("  {k}: checkpoint {a}, expected {b}"))
        .collect();
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Mismatch(format!("architecture differs:\n{}", diffs.join("\n"))))
    }
}

pub fn save_checkpoint(path: &Path, model: &GaitModel, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, GaitModel)> {
    decode_checkpoint(&std::fs::read(path)?)
}
