//! Binary parameter checkpoints.
//!
//! Layout, little-endian:
//! `"CCKPT1"`, u32 config length, config text (UTF-8), u32 parameter count,
//! then per parameter: u32 name length, name, u8 group, u8 rank, u32 per
//! dimension, f32 payload. A CRC32 of everything before it closes the file.

use std::path::Path;

use super::{Group, NumericsError, ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 6] = b"CCKPT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("checkpoint CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("malformed checkpoint at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub fn to_bytes<T: Scalar>(store: &ParamStore<T>, config_text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.group.to_byte());
        out.push(p.tensor.rank() as u8);
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated { offset: self.pos, what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn text(&mut self, n: usize, what: &'static str) -> Result<String, CheckpointError> {
        let offset = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|e| CheckpointError::Malformed { offset, detail: format!("{what} is not UTF-8: {e}") })
    }
}

/// Parses a checkpoint into its config text and parameters (all trainable).
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(String, ParamStore<T>), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(CheckpointError::Truncated { offset: bytes.len(), what: "CRC" });
    }
    let body = &bytes[..bytes.len() - 4];
    let tail = &bytes[bytes.len() - 4..];
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let cfg_len = r.u32("config length")? as usize;
    let config = r.text(cfg_len, "config text")?;
    let count = r.u32("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = r.text(name_len, "parameter name")?;
        let offset = r.pos;
        let group = Group::from_byte(r.u8("group")?)
            .ok_or_else(|| CheckpointError::Malformed { offset, detail: format!("unknown group byte for `{name}`") })?;
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, "payload")?;
        let data = raw.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        store.add(name, group, Tensor::new(shape, data)?)?;
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed { offset: r.pos, detail: format!("{} trailing bytes before CRC", body.len() - r.pos) });
    }
    Ok((config, store))
}

pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>, config_text: &str) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(store, config_text))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<(String, ParamStore<T>), CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("enc.w", Group::Enc, Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap()).unwrap();
        s.add("pz.e0", Group::Pz, Tensor::filled(vec![3], 0.125)).unwrap();
        s
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = to_bytes(&sample(), "stages = 2\n");
        let (cfg, back) = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(cfg, "stages = 2\n");
        assert_eq!(to_bytes(&back, &cfg), bytes);
        assert_eq!(back.get(back.id("pz.e0").unwrap()).group, Group::Pz);
    }

    #[test]
    fn any_flipped_byte_is_rejected() {
        let bytes = to_bytes(&sample(), "x = 1\n");
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(from_bytes::<f32>(&b).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = to_bytes(&sample(), "");
        assert!(from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(matches!(from_bytes::<f32>(b"NOPE"), Err(CheckpointError::BadMagic)));
    }
}
