//! Named-parameter weight files.
//!
//! Layout (little-endian): `"PGWT"`, u16 version, u32 entry count, then per
//! entry: u32 name length, UTF-8 name, u32 rank, u64 per dimension, and the
//! f64 values row-major.

use super::Tensor;
use crate::binio::{Reader, Writer};
use crate::error::Result;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PGWT";
pub const VERSION: u16 = 1;

pub fn encode(params: &[(String, Tensor)]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(params.len() as u32);
    for (name, t) in params {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.pos;
    let version = r.u16("version")?;
    if version != VERSION {
        return r.fail(at, format!("unsupported version {version}"));
    }
    let count = r.u32("entry count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = match std::str::from_utf8(r.take(len, "name")?) {
            Ok(s) => s.to_string(),
            Err(_) => return r.fail(at + 4, "parameter name is not UTF-8"),
        };
        let at = r.pos;
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return r.fail(at, format!("implausible rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = match n {
            Some(n) if n.saturating_mul(8) <= r.remaining() => n,
            _ => return r.fail(at, format!("shape {shape:?} exceeds the remaining {} bytes", r.remaining())),
        };
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64("weight")?);
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    r.expect_end()?;
    Ok(out)
}

pub fn save(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("conv1.w".into(), Tensor::from_fn(&[2, 1, 3, 3], |i| i as f64 * 0.1 - 0.5)),
            ("head.b".into(), Tensor::new(&[1], vec![f64::MIN_POSITIVE]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let back = decode(&encode(&p)).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in p.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corruption_reports_offset() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::CorruptFile { offset: 0, .. })));
        let bytes = encode(&sample());
        let cut = bytes.len() - 3;
        match decode(&bytes[..cut]) {
            Err(Error::CorruptFile { offset, .. }) => assert!(offset as usize <= cut),
            other => panic!("{other:?}"),
        }
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::CorruptFile { offset: 4, .. })));
    }
}
