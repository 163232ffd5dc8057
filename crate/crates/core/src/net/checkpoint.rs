//! Binary parameter checkpoints.
//!
//! All integers are little-endian `u32`, all values little-endian IEEE-754 `f32`:
//!
//! ```text
//! "OPFW"                      magic, 4 bytes
//! version                     currently 1
//! header_count                number of dimension entries
//! header_count × {
//!     key_len, key            UTF-8 key, e.g. "dim", "heads"
//!     value
//! }
//! tensor_count
//! tensor_count × {
//!     name_len, name          UTF-8 parameter name, e.g. "enc.0.attn.wq"
//!     rank                    0, 1 or 2
//!     rank × dim
//!     product(dims) × f32     row-major data
//! }
//! ```
//!
//! Entries are written in sorted key/name order, so equal contents give equal bytes. Rank-1
//! tensors load as `1 × n`, rank-0 as `1 × 1`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};

use super::NetError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OPFW";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_NAME: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: BTreeMap<String, u32>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn dim(&self, key: &str) -> Result<usize, NetError> {
        self.header
            .get(key)
            .map(|&v| v as usize)
            .ok_or_else(|| NetError::Checkpoint(format!("header has no entry {key:?}")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NetError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<(), NetError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_u32(w, ckpt.header.len() as u32)?;
    for (k, &v) in &ckpt.header {
        put_str(w, k)?;
        put_u32(w, v)?;
    }
    put_u32(w, ckpt.params.len() as u32)?;
    for (name, t) in ckpt.params.iter() {
        put_str(w, name)?;
        put_u32(w, 2)?;
        put_u32(w, t.rows as u32)?;
        put_u32(w, t.cols as u32)?;
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<'a, R> {
    r: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, NetError> {
        let mut buf = Vec::new();
        self.r.take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(NetError::Checkpoint(format!("truncated while reading {what}")));
        }
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NetError> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, NetError> {
        let n = self.u32(what)?;
        if n > MAX_NAME {
            return Err(NetError::Checkpoint(format!("{what} length {n} is implausible")));
        }
        String::from_utf8(self.bytes(n as usize, what)?).map_err(|_| NetError::Checkpoint(format!("{what} is not UTF-8")))
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, NetError> {
    let mut rd = Reader { r };
    if rd.bytes(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = rd.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut header = BTreeMap::new();
    for _ in 0..rd.u32("header count")? {
        let k = rd.string("header key")?;
        let v = rd.u32("header value")?;
        header.insert(k, v);
    }
    let mut params = ParamStore::new();
    for _ in 0..rd.u32("tensor count")? {
        let name = rd.string("tensor name")?;
        let rank = rd.u32("rank")?;
        let (rows, cols) = match rank {
            0 => (1, 1),
            1 => (1, rd.u32("dims")? as usize),
            2 => (rd.u32("dims")? as usize, rd.u32("dims")? as usize),
            _ => return Err(NetError::Checkpoint(format!("tensor {name} has rank {rank}"))),
        };
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| NetError::Checkpoint(format!("tensor {name} is implausibly large")))?;
        let raw = rd.bytes(n * 4, &format!("tensor {name}"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if params.contains(&name) {
            return Err(NetError::Checkpoint(format!("duplicate tensor {name}")));
        }
        params.insert(name, Tensor::from_vec(rows, cols, data));
    }
    let mut rest = [0u8; 1];
    if rd.r.read(&mut rest)? != 0 {
        return Err(NetError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(Checkpoint { header, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::default();
        c.header.insert("dim".into(), 24);
        c.header.insert("heads".into(), 2);
        c.params.insert("b", Tensor::from_vec(1, 3, vec![1.0, -2.5, f32::MIN_POSITIVE]));
        c.params.insert("a.w", Tensor::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
        c
    }

    #[test]
    fn round_trip_and_stable_bytes() {
        let c = sample();
        let mut a = Vec::new();
        write_checkpoint(&mut a, &c).unwrap();
        let back = read_checkpoint(&mut a.as_slice()).unwrap();
        assert_eq!(back, c);
        let mut b = Vec::new();
        write_checkpoint(&mut b, &back).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..4], b"OPFW");
        assert_eq!(back.dim("dim").unwrap(), 24);
        assert!(back.dim("nope").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.opfw");
        save_checkpoint(&p, &sample()).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), sample());
    }

    #[test]
    fn lower_ranks_load_as_rows() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"OPFW");
        for v in [1u32, 0, 2] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(b"s");
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&7.0f32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(b"v");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&1.0f32.to_le_bytes());
        buf.extend_from_slice(&2.0f32.to_le_bytes());
        let c = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(c.params.get("s").unwrap().shape(), (1, 1));
        assert_eq!(c.params.get("v").unwrap().data, vec![1.0, 2.0]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        for cut in [3, 10, buf.len() - 1] {
            assert!(matches!(read_checkpoint(&mut &buf[..cut]), Err(NetError::Checkpoint(_))));
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        let mut extra = buf;
        extra.push(1);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }
}
