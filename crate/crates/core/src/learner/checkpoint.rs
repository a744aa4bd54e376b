//! Versioned flat-binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "VRNKCKPT"
//! version    u32      1
//! kind       u8       0 mlp, 1 conv-gap, 2 conv-gap-linear
//! mode       u8       0 vector, 1 image
//! reserved   u16      0
//! input      u32 u32  (dim, 1) or (height, width)
//! backbone   u32 n, then n × u32 widths / channels
//! head       u32      hidden units, 0 for a single linear unit
//! seed       u64
//! blocks     u32 count, then per block: u32 len, len × f32
//! ```
//!
//! Each parametrized layer contributes a weight block then a bias block.

use std::fs;
use std::path::Path;

use super::arch::{ArchKind, Architecture};
use super::net::ScoringModel;
use crate::dataset::FrameShape;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VRNKCKPT";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &ScoringModel) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(64 + model.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(arch.kind().code());
    let (mode, a, b) = match arch.input() {
        FrameShape::Vector { dim } => (0u8, dim, 1),
        FrameShape::Image { height, width } => (1u8, height, width),
    };
    out.push(mode);
    out.extend_from_slice(&0u16.to_le_bytes());
    put_u32(&mut out, a);
    put_u32(&mut out, b);
    put_u32(&mut out, arch.backbone().len());
    for &w in arch.backbone() {
        put_u32(&mut out, w);
    }
    put_u32(&mut out, arch.head_hidden().unwrap_or(0));
    out.extend_from_slice(&model.seed().to_le_bytes());
    let blocks = model.blocks();
    put_u32(&mut out, blocks.len() * 2);
    for (w, bias) in blocks {
        for block in [w, bias] {
            put_u32(&mut out, block.len());
            for &v in block {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ScoringModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = ArchKind::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown architecture".into()))?;
    let mode = r.u8()?;
    let _reserved = r.u16()?;
    let (a, b) = (r.u32()?, r.u32()?);
    let input = match mode {
        0 => FrameShape::Vector { dim: a },
        1 => FrameShape::Image { height: a, width: b },
        m => return Err(Error::Checkpoint(format!("unknown input mode {m}"))),
    };
    let n = r.u32()?;
    if n > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let backbone = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let head = r.u32()?;
    let seed = r.u64()?;
    let arch = Architecture::new(kind, input, backbone, (head > 0).then_some(head))
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    let expected = arch.param_count();
    let blocks = r.u32()?;
    let mut params = Vec::with_capacity(expected);
    for _ in 0..blocks {
        let len = r.u32()?;
        if params.len() + len > expected {
            return Err(Error::Checkpoint("parameter blocks exceed architecture".into()));
        }
        for _ in 0..len {
            params.push(f64::from(r.f32()?));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    ScoringModel::from_params(arch, params, seed).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ScoringModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ScoringModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::net_init;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), kind in 0u8..3, dim in 1usize..12) {
            let kind = ArchKind::from_code(kind).unwrap();
            let input = if kind.is_conv() {
                FrameShape::Image { height: 4 + dim, width: 3 + dim }
            } else {
                FrameShape::Vector { dim }
            };
            let m = net_init(&Architecture::standard(kind, input).unwrap(), seed);
            let bytes = encode_checkpoint(&m);
            let back = decode_checkpoint(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = net_init(&Architecture::standard(ArchKind::Mlp, FrameShape::Vector { dim: 3 }).unwrap(), 1);
        let bytes = encode_checkpoint(&m);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
