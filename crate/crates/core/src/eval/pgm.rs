//! Binary greyscale (`P5`) images of alignment matrices.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Maps `a` (`[rows × cols]`) to 8-bit pixels, `round(255·a/max(a))`.
///
/// Rows are emitted top to bottom in reverse, so row 0 (the first character)
/// sits at the bottom of the image and time runs left to right. An all-zero
/// matrix renders black.
pub fn render_pgm(a: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols) = a.dims2()?;
    if rows == 0 || cols == 0 {
        return Err(Error::Input("cannot render an empty matrix".into()));
    }
    if !a.is_finite() || a.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Input(
            "alignment values must be finite and non-negative".into(),
        ));
    }
    let max = a.max();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        for &v in a.row_slice(r) {
            let px = if max > 0.0 {
                (255.0 * v / max).round()
            } else {
                0.0
            };
            out.push(px as u8);
        }
    }
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, a: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_pgm(a)?).map_err(|e| Error::io(path, e))
}

/// Parses a `P5` image back to `(width, height, pixels)`, top row first.
pub fn decode_pgm(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |detail: &str| Error::Format {
        path: origin.to_string(),
        field: "pgm",
        detail: detail.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a P5 image"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 || bytes.len() != pos + w * h {
        return Err(bad("unexpected pixel data"));
    }
    Ok((w, h, bytes[pos..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::guided_mask;

    #[test]
    fn constant_field_is_white_and_diagonal_is_white_on_black() {
        let (w, h, px) =
            decode_pgm(&render_pgm(&Tensor::full(&[3, 4], 0.25)).unwrap(), "t").unwrap();
        assert_eq!((w, h), (4, 3));
        assert!(px.iter().all(|&p| p == 255));

        let (_, _, px) = decode_pgm(&render_pgm(&Tensor::eye(4)).unwrap(), "t").unwrap();
        for (i, &p) in px.iter().enumerate() {
            let (y, x) = (i / 4, i % 4);
            // bottom-left to top-right
            assert_eq!(p, if x + y == 3 { 255 } else { 0 });
        }
    }

    #[test]
    fn guided_mask_renders_dark_band_and_bright_corners() {
        let w = guided_mask(100, 100, 0.2);
        let (_, _, px) = decode_pgm(&render_pgm(&w).unwrap(), "t").unwrap();
        let at = |n: usize, t: usize| px[(99 - n) * 100 + t];
        for k in 0..100 {
            assert_eq!(at(k, k), 0);
        }
        assert_eq!(at(0, 99), 255);
        assert_eq!(at(99, 0), 255);
        let max = w.max();
        assert_eq!(at(10, 30) as f64, (255.0 * w.get2(10, 30) / max).round());
    }

    #[test]
    fn brighter_never_darker() {
        let a = Tensor::row(&[0.0, 0.1, 0.1000001, 0.5, 0.7, 0.7, 1.3]);
        let (_, _, px) = decode_pgm(&render_pgm(&a).unwrap(), "t").unwrap();
        assert!(px.windows(2).all(|w| w[0] <= w[1]));
        assert!(render_pgm(&Tensor::row(&[0.1, f64::NAN])).is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n\x00", "t").is_err());
    }
}
