//! `FLT1` raw tensor files: the 8-byte magic `FACETFL1`, a little-endian
//! `u32` rank, one `u32` per extent, then the elements as little-endian
//! IEEE-754 `f32` in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

pub const FLT1_MAGIC: &[u8; 8] = b"FACETFL1";

const MAX_RANK: u32 = 8;

pub fn write_flt1<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * (t.rank() + t.len()));
    buf.extend_from_slice(FLT1_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(Error::Format(format!(
                    "truncated FLT1 {what}: expected {} bytes, found {got} ({} missing)",
                    buf.len(),
                    buf.len() - got
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_flt1<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 8];
    read_exact_or(r, &mut magic, "magic")?;
    if &magic != FLT1_MAGIC {
        return Err(Error::Format(format!("bad FLT1 magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let mut word = [0u8; 4];
    read_exact_or(r, &mut word, "rank")?;
    let rank = u32::from_le_bytes(word);
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("FLT1 rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        read_exact_or(r, &mut word, "extent")?;
        let d = u32::from_le_bytes(word) as usize;
        if d == 0 {
            return Err(Error::Format("FLT1 extent of zero".into()));
        }
        dims.push(d);
    }
    let n: usize = dims.iter().product();
    let mut payload = vec![0u8; 4 * n];
    read_exact_or(r, &mut payload, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    Tensor::from_vec(&dims, data)
}

pub fn write_flt1_file<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_flt1(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_flt1_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    read_flt1(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let t = Tensor::<f32>::from_fn(&dims, |_| rng.random_range(-1e3f32..1e3));
            let mut buf = Vec::new();
            write_flt1(&mut buf, &t).unwrap();
            prop_assert_eq!(buf.len(), 12 + 4 * dims.len() + 4 * t.len());
            let back: Tensor<f32> = read_flt1(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_flt1(&mut buf, &t).unwrap();
        assert_eq!(&buf[..8], b"FACETFL1");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[20..24], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_names_missing_bytes() {
        let t = Tensor::<f32>::zeros(&[3, 3]);
        let mut buf = Vec::new();
        write_flt1(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 6);
        let err = read_flt1::<f32, _>(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("6 missing"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTFLT10\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(matches!(read_flt1::<f32, _>(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
