//! Binary parameter files.
//!
//! Layout: the magic bytes `THSP1`, then per parameter a little-endian `u32`
//! name length, the UTF-8 name, a `u32` rank, `rank` `u32` dimensions and the
//! `f32` values in little-endian order; finally the CRC-32 (IEEE) of all
//! preceding bytes as a little-endian `u32`.

use std::io;
use std::path::Path;

use super::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 5] = b"THSP1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("parameter name is not UTF-8")]
    BadName,
    #[error("parameter '{0}' missing from checkpoint")]
    Missing(String),
    #[error("parameter '{name}' has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Named tensors in file order.
pub type Entries = Vec<(String, Tensor)>;

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
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

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Entries, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let mut out = Vec::new();
    while r.pos < body.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(CheckpointError::Truncated);
        }
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(&shape, data)));
    }
    Ok(out)
}

/// Borrowed (name, value) pairs of every parameter in `set`.
pub fn entries_of<'a>(set: &'a ParamSet) -> impl Iterator<Item = (&'a str, &'a Tensor)> {
    set.iter().map(|(_, p)| (p.name.as_str(), &p.value))
}

/// Overwrites every parameter of `set` from `entries` by name.
pub fn load_into(set: &mut ParamSet, entries: &Entries) -> Result<(), CheckpointError> {
    let ids: Vec<_> = set.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let Some((_, t)) = entries.iter().find(|(n, _)| *n == name) else {
            return Err(CheckpointError::Missing(name));
        };
        let expected = set.value(id).shape().to_vec();
        if t.shape() != expected.as_slice() {
            return Err(CheckpointError::Shape {
                name,
                found: t.shape().to_vec(),
                expected,
            });
        }
        *set.value_mut(id) = t.clone();
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Entries, CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Entries {
        vec![
            ("core/embed".into(), Tensor::matrix(2, 3, &[1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0])),
            ("prompt/thief".into(), Tensor::vector(&[0.5, -0.125])),
        ]
    }

    #[test]
    fn layout_is_stable() {
        let e = vec![("a".to_string(), Tensor::scalar(1.0))];
        let bytes = encode(e.iter().map(|(n, t)| (n.as_str(), t)));
        let mut expected = b"THSP1".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, b'a', 1, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        let crc = crc32fast::hash(&expected);
        expected.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corruption_is_detected() {
        let e = sample();
        let mut bytes = encode(e.iter().map(|(n, t)| (n.as_str(), t)));
        bytes[12] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(CheckpointError::Checksum { .. })));
        assert!(matches!(decode(b"NOPE!...."), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(b"THSP1"), Err(CheckpointError::Truncated)));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<u32>(), 1..40), rows in 1usize..4) {
            let data: Vec<f32> = values.iter().map(|b| f32::from_bits(*b)).collect();
            let n = data.len();
            let shape = if n % rows == 0 { vec![rows, n / rows] } else { vec![n] };
            let e = vec![("w/x".to_string(), Tensor::new(&shape, data))];
            let bytes = encode(e.iter().map(|(n, t)| (n.as_str(), t)));
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(back[0].1.shape(), e[0].1.shape());
            let a: Vec<u32> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, values);
            prop_assert_eq!(encode(back.iter().map(|(n, t)| (n.as_str(), t))), bytes);
        }
    }
}
