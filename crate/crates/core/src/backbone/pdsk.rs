use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BackboneError, DescriptorStack};

pub const PDSK_MAGIC: &[u8; 4] = b"PDSK";
pub const PDSK_VERSION: u32 = 1;

pub fn write_stack(path: impl AsRef<Path>, stack: &DescriptorStack) -> Result<(), BackboneError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stack_to(&mut w, stack)?;
    w.flush()?;
    Ok(())
}

pub fn write_stack_to(w: &mut impl Write, stack: &DescriptorStack) -> Result<(), BackboneError> {
    w.write_all(PDSK_MAGIC)?;
    for v in [PDSK_VERSION, stack.layers as u32, stack.rows as u32, stack.cols as u32, stack.channels as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(stack.data.len() * 4);
    for v in &stack.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<DescriptorStack, BackboneError> {
    read_stack_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_stack_from(r: &mut impl Read) -> Result<DescriptorStack, BackboneError> {
    let short = |e: std::io::Error| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => BackboneError::Format("file is truncated".into()),
        _ => BackboneError::Io(e),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != PDSK_MAGIC {
        return Err(BackboneError::Format(format!("bad magic {magic:?}")));
    }
    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(short)?;
    let field = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
    let version = field(0);
    if version != PDSK_VERSION {
        return Err(BackboneError::Format(format!("unsupported version {version}")));
    }
    let (layers, rows, cols, channels) = (field(1) as usize, field(2) as usize, field(3) as usize, field(4) as usize);
    if layers == 0 || rows == 0 || cols == 0 || channels == 0 {
        return Err(BackboneError::Format(format!(
            "zero dimension in header {layers}x{rows}x{cols}x{channels}"
        )));
    }
    let count = layers
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= (1 << 34) / 4)
        .ok_or_else(|| BackboneError::Format("header dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.take(count as u64 * 4 + 1).read_to_end(&mut bytes)?;
    if bytes.len() < count * 4 {
        return Err(BackboneError::Format(format!(
            "file is truncated: {} of {} data bytes",
            bytes.len(),
            count * 4
        )));
    }
    if bytes.len() > count * 4 {
        return Err(BackboneError::Format("trailing bytes after data".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    DescriptorStack::new(layers, rows, cols, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(l: usize, r: usize, c: usize, ch: usize) -> DescriptorStack {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = (0..l * r * c * ch).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        DescriptorStack::new(l, r, c, ch, data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = random_stack(3, 4, 5, 6);
        s.data[0] = f32::MIN_POSITIVE / 2.0;
        s.data[1] = -0.0;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pdsk");
        write_stack(&p, &s).unwrap();
        let back = read_stack(&p).unwrap();
        assert_eq!(back.data.len(), s.data.len());
        for (a, b) in back.data.iter().zip(&s.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 24 + 4 * 3 * 4 * 5 * 6);
    }

    #[test]
    fn header_layout() {
        let s = random_stack(2, 1, 1, 1);
        let mut buf = Vec::new();
        write_stack_to(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"PDSK");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[24..28], &s.data[0].to_le_bytes());
    }

    #[test]
    fn vit_large_header_is_accepted() {
        let s = DescriptorStack::new(24, 30, 30, 1024, vec![0.5; 24 * 30 * 30 * 1024]).unwrap();
        let mut buf = Vec::new();
        write_stack_to(&mut buf, &s).unwrap();
        let back = read_stack_from(&mut buf.as_slice()).unwrap();
        assert_eq!((back.layers, back.rows, back.cols, back.channels), (24, 30, 30, 1024));
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let s = random_stack(1, 2, 2, 3);
        let mut buf = Vec::new();
        write_stack_to(&mut buf, &s).unwrap();

        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(read_stack_from(&mut &truncated[..]), Err(BackboneError::Format(_))));
        assert!(matches!(read_stack_from(&mut &buf[..10]), Err(BackboneError::Format(_))));

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_stack_from(&mut bad_magic.as_slice()), Err(BackboneError::Format(_))));

        let mut bad_version = buf.clone();
        bad_version[4] = 2;
        assert!(matches!(read_stack_from(&mut bad_version.as_slice()), Err(BackboneError::Format(_))));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(read_stack_from(&mut trailing.as_slice()), Err(BackboneError::Format(_))));

        let mut zero_dim = buf;
        zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read_stack_from(&mut zero_dim.as_slice()), Err(BackboneError::Format(_))));
    }
}
