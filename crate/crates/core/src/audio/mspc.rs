//! Flat binary matrix files.
//!
//! Layout (little-endian): magic `MSPC`, version `u32`, rows `u32`,
//! cols `u32`, then `rows * cols` row-major `f32` values.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MSPC_MAGIC: &[u8; 4] = b"MSPC";
pub const MSPC_VERSION: u32 = 1;

pub fn encode_mspc(m: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols) = m.dims2()?;
    let mut out = Vec::with_capacity(16 + 4 * m.len());
    out.extend_from_slice(MSPC_MAGIC);
    out.extend_from_slice(&MSPC_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_mspc(bytes: &[u8], origin: &str) -> Result<Tensor> {
    let bad = |field: &'static str, detail: String| Error::Format {
        path: origin.to_string(),
        field,
        detail,
    };
    if bytes.len() < 16 || &bytes[0..4] != MSPC_MAGIC {
        return Err(bad("magic", "expected MSPC".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MSPC_VERSION {
        return Err(Error::Version {
            expected: MSPC_VERSION,
            found: version,
        });
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| bad("dims", format!("{rows}x{cols} overflows")))?;
    if rows == 0 || cols == 0 || bytes.len() != 16 + 4 * n {
        return Err(bad(
            "length",
            format!(
                "{rows}x{cols} needs {} bytes, file has {}",
                16 + 4 * n,
                bytes.len()
            ),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(&[rows, cols], data)
}

pub fn write_mspc(path: impl AsRef<Path>, m: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mspc(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_mspc(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mspc(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = encode_mspc(&m).unwrap();
        assert_eq!(&b[..4], b"MSPC");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &3u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 16 + 24);
        assert_eq!(decode_mspc(&b, "mem").unwrap(), m);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let m = Tensor::zeros(&[2, 2]);
        let b = encode_mspc(&m).unwrap();
        assert!(decode_mspc(&b[..b.len() - 1], "t").is_err());
        let mut c = b.clone();
        c[0] = b'X';
        assert!(matches!(
            decode_mspc(&c, "t"),
            Err(Error::Format { field: "magic", .. })
        ));
        let mut v = b;
        v[4] = 9;
        assert!(matches!(decode_mspc(&v, "t"), Err(Error::Version { .. })));
    }
}
