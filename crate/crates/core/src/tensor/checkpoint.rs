//! Little-endian named-tensor container.
//!
//! Layout: magic `SMTK`, `u32` version, `u32` tensor count, then for each
//! tensor a `u16` name length, the UTF-8 name, a `u8` rank, `rank` x `u64`
//! dimensions and the `f64` payload.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMTK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[(String, Tensor)]) -> Result<()> {
    let io = |e| Error::Io { path: None, source: e };
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Format("too many tensors".into()))?;
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Format(format!("rank too large for {name}")))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[rank]).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format(format!("truncated file while reading {what}"))
            } else {
                Error::Io { path: None, source: e }
            }
        })
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { inner: r };
    let magic: [u8; 4] = r.bytes("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"SMTK\"")));
    }
    let version = u32::from_le_bytes(r.bytes("version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = u32::from_le_bytes(r.bytes("tensor count")?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = u16::from_le_bytes(r.bytes("name length")?) as usize;
        let mut name = vec![0u8; len];
        r.fill(&mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?;
        let [rank] = r.bytes::<1>("rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = u64::from_le_bytes(r.bytes("dimension")?);
            shape.push(
                usize::try_from(d).map_err(|_| Error::Format(format!("{name}: dimension {d}")))?,
            );
        }
        let volume = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{name}: shape overflows")))?;
        let mut raw = vec![0u8; volume.checked_mul(8).ok_or_else(|| Error::Format(format!("{name}: too large")))?];
        r.fill(&mut raw, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("a".into(), Tensor::from_rows(&[&[1.0, -0.0], &[f64::MIN_POSITIVE, 3.5]])),
            ("enc0.block0.q.weight".into(), Tensor::scalar(0.1)),
            ("empty".into(), Tensor::zeros(&[0, 4])),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        for ((n1, t1), (n2, t2)) in sample().iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("x".into(), Tensor::scalar(2.0))]).unwrap();
        assert_eq!(&buf[..4], b"SMTK");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..14], &1u16.to_le_bytes());
        assert_eq!(buf[14], b'x');
        assert_eq!(buf[15], 0);
        assert_eq!(&buf[16..24], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 24);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(m)) if m.contains("magic")));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(m)) if m.contains("version")));

        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(cut), Err(Error::Format(m)) if m.contains("truncated")));
    }
}
