//! Bit-exact tensor file format.
//!
//! Layout: ASCII magic `"STCM1\n"` (6 bytes), `u32` little-endian rank `r`,
//! `r` x `u32` little-endian extents, then product-of-extents `f32`
//! little-endian values in row-major order. No padding, no checksum.
//! Values are narrowed from the in-memory `f64` on write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 6] = b"STCM1\n";

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &extent in t.shape() {
        w.write_all(&(extent as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut offset: u64 = 0;

    let mut magic = [0u8; 6];
    read_exact_at(&mut r, &mut magic, &mut offset, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }

    let rank = read_u32_at(&mut r, &mut offset, "rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format {
            offset: 6,
            message: format!("rank {rank} outside 1..={MAX_RANK}"),
        });
    }

    let mut shape = Vec::with_capacity(rank);
    for axis in 0..rank {
        let field_offset = offset;
        let extent = read_u32_at(&mut r, &mut offset, "extent")? as usize;
        if extent == 0 {
            return Err(Error::Format {
                offset: field_offset,
                message: format!("axis {axis} has zero extent"),
            });
        }
        shape.push(extent);
    }

    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 4];
    for _ in 0..count {
        read_exact_at(&mut r, &mut buf, &mut offset, "value")?;
        data.push(f32::from_le_bytes(buf) as f64);
    }

    // Trailing bytes mean the payload does not match the header.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format {
            offset,
            message: "trailing bytes after payload".into(),
        });
    }

    Tensor::from_vec(&shape, data)
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => {
            *offset += buf.len() as u64;
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Format {
            offset: *offset,
            message: format!("truncated while reading {what}"),
        }),
        Err(e) => Err(e.into()),
    }
}

fn read_u32_at(r: &mut impl Read, offset: &mut u64, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_at(r, &mut buf, offset, what)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("stcm-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_exact_values() {
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let path = tmp("exact.stcm");
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn round_trip_32bit_rounding_bound() {
        // f32 has a 24-bit significand, so |round(v) - v| <= 2^-24 * |v|
        // for normal values; the asserted bound 2^-20 * max|v| is comfortably
        // above the worst case observed by direct casting.
        let mut rng = Rng::seed_from(99);
        let t = rng.uniform_tensor(-10.0, 10.0, &[1000]).unwrap();
        let path = tmp("rounding.stcm");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        let bound = t.max_abs() * 2f64.powi(-20);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= bound);
            // The read value must equal the direct f32 cast bit-for-bit.
            assert_eq!(*b, (*a as f32) as f64);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let path = tmp("badmagic.stcm");
        std::fs::write(&path, b"NOPE!\n\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        match read_tensor(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_rank_rejected() {
        let path = tmp("rank.stcm");
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let path = tmp("trunc.stcm");
        write_tensor(&path, &t).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        match read_tensor(&path) {
            Err(Error::Format { offset, message }) => {
                assert!(offset >= 6 + 4 + 4, "offset {offset} in header?");
                assert!(message.contains("truncated"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let t = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let path = tmp("trailing.stcm");
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format { .. })));
    }
}
