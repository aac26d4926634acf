//! Binary checkpoint: `"DHRD"`, u32 version, u32-length-prefixed UTF-8 model
//! config record, then named tensors (u32 name length, name, u32 rank,
//! u32 dims, little-endian f32 payload). All integers are little-endian.

use std::path::Path;

use dhrd_core::model::{DualHeadModel, ModelConfig};
use dhrd_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DHRD";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{} does not fit in u32", v)))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &DualHeadModel<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(model.parameter_count() * 4 + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let record = model.config().to_record();
    put_u32(&mut out, record.len())?;
    out.extend_from_slice(record.as_bytes());
    for p in model.params() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.tensor.shape().len())?;
        for &d in p.tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {} at byte {} ({} total)", what, self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", what)))
    }
}

pub fn decode(bytes: &[u8]) -> Result<DualHeadModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {}", version)));
    }
    let config = ModelConfig::from_record(&r.string("config record")?)?;
    let mut named = Vec::new();
    while r.pos < bytes.len() {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Checkpoint(format!("{}: shape overflows", name)))?;
        let payload = r.take(numel.saturating_mul(4), &name)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    Ok(DualHeadModel::from_named(config, named)?)
}

pub fn save(model: &DualHeadModel<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DualHeadModel<f32>> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DualHeadModel<f32> {
        let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_len: 16, mlp_hidden: 8, ..ModelConfig::default() };
        DualHeadModel::new(cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = tiny();
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.checksum(), m.checksum());
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&tiny()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
