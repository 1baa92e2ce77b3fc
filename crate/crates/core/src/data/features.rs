//! Binary feature-sequence files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TKFT"
//! 4       2     version (= 1)
//! 6       1     byte order of every later field: 0 little, 1 big
//! 7       4     T
//! 11      4     d
//! 15      4·T·d payload, f32 row-major
//! …       4     CRC-32 of the payload bytes
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"TKFT";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn flag(self) -> u8 {
        match self {
            ByteOrder::Little => 0,
            ByteOrder::Big => 1,
        }
    }

    fn u16(self, v: u16) -> [u8; 2] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn u32(self, v: u32) -> [u8; 4] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn read_u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self {
            ByteOrder::Little => u16::from_le_bytes(a),
            ByteOrder::Big => u16::from_be_bytes(a),
        }
    }

    fn read_u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            ByteOrder::Little => u32::from_le_bytes(a),
            ByteOrder::Big => u32::from_be_bytes(a),
        }
    }
}

/// Serializes a `T × d` feature sequence. Values are stored as f32.
pub fn encode_features(features: &Tensor, order: ByteOrder) -> Result<Vec<u8>> {
    if features.shape().len() != 2 {
        return Err(Error::shape("encode_features", format!("expected T×d, got {:?}", features.shape())));
    }
    let (t, d) = (features.rows() as u32, features.cols() as u32);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.len() + 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&order.u16(FEATURE_VERSION));
    out.push(order.flag());
    out.extend_from_slice(&order.u32(t));
    out.extend_from_slice(&order.u32(d));
    for &v in features.data() {
        out.extend_from_slice(&order.u32((v as f32).to_bits()));
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&order.u32(crc));
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Tensor> {
    let fail = |offset: usize, msg: &str| Error::Format { offset: offset as u64, msg: msg.to_string() };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(fail(0, "bad magic"));
    }
    let order = match bytes[6] {
        0 => ByteOrder::Little,
        1 => ByteOrder::Big,
        other => return Err(fail(6, &format!("unknown byte-order flag {other}"))),
    };
    let version = order.read_u16(&bytes[4..6]);
    if version != FEATURE_VERSION {
        return Err(fail(4, &format!("unsupported version {version}")));
    }
    let t = order.read_u32(&bytes[7..11]) as usize;
    let d = order.read_u32(&bytes[11..15]) as usize;
    if t == 0 || d == 0 {
        return Err(fail(7, &format!("empty shape {t}×{d}")));
    }
    let payload_len = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(7, "shape overflows"))?;
    let end = HEADER_LEN + payload_len;
    if bytes.len() < end + 4 {
        return Err(fail(bytes.len(), &format!("truncated: {t}×{d} needs {} bytes", end + 4)));
    }
    if bytes.len() > end + 4 {
        return Err(fail(end + 4, "trailing bytes"));
    }
    let payload = &bytes[HEADER_LEN..end];
    if crc32fast::hash(payload) != order.read_u32(&bytes[end..end + 4]) {
        return Err(fail(end, "checksum mismatch"));
    }
    let mut data = Vec::with_capacity(t * d);
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_bits(order.read_u32(c));
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 4 * i, "non-finite value"));
        }
        data.push(v as f64);
    }
    Tensor::from_vec(&[t, d], data)
}

pub fn write_features(path: &Path, features: &Tensor, order: ByteOrder) -> Result<()> {
    std::fs::write(path, encode_features(features, order)?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    decode_features(&std::fs::read(path)?)
}
