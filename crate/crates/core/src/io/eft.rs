//! `EFT1` tensor container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "EFT1" | dtype: u8 (1 = f32) | rank: u8 | rank x u32 dims | payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"EFT1";
pub const DTYPE_F32: u8 = 1;

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} too large", t.rank())));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing EFT1 magic".into()));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype tag {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            payload.len(),
            4 * n
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let t = Tensor::new(&[2, 1], vec![1.0f32, -2.0]).unwrap();
        let b = encode(&t).unwrap();
        let mut want = b"EFT1".to_vec();
        want.extend_from_slice(&[1, 2]);
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"EFT2\x01\x00").is_err());
        let mut b = encode(&Tensor::zeros(&[3])).unwrap();
        b.pop();
        assert!(decode(&b).is_err());
        let mut b = encode(&Tensor::zeros(&[3])).unwrap();
        b[4] = 2;
        assert!(decode(&b).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let t = Tensor::from_fn(&shape, |i| (i as f32 + seed as f32).sin());
            let back = decode(&encode(&t).unwrap()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
