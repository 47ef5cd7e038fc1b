//! Binary PPM (P6) dumps of image grids.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GAP: usize = 2;

fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Encode `[3, H, W]` images laid out as rows of equal-sized cells, values in
/// [-1, 1], separated by white gaps.
pub fn encode_grid(rows: &[Vec<Tensor>]) -> Result<Vec<u8>> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let first = rows.iter().flatten().next().ok_or_else(|| Error::Shape("empty image grid".into()))?;
    let (h, w) = match first.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("expected [3, H, W] cells, got {s:?}"))),
    };
    let width = cols * w + (cols.saturating_sub(1)) * GAP;
    let height = rows.len() * h + (rows.len().saturating_sub(1)) * GAP;
    let mut px = vec![255u8; width * height * 3];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.shape() != first.shape() {
                return Err(Error::Shape(format!("cell {:?} vs {:?}", img.shape(), first.shape())));
            }
            let (oy, ox) = (r * (h + GAP), c * (w + GAP));
            for y in 0..h {
                for x in 0..w {
                    let at = ((oy + y) * width + ox + x) * 3;
                    for ch in 0..3 {
                        px[at + ch] = to_byte(img.data()[(ch * h + y) * w + x]);
                    }
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(px);
    Ok(out)
}

pub fn write_grid(path: impl AsRef<Path>, rows: &[Vec<Tensor>]) -> Result<()> {
    fs::write(path, encode_grid(rows)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_pixels() {
        let a = Tensor::full(&[3, 2, 2], -1.0);
        let b = Tensor::full(&[3, 2, 2], 1.0);
        let bytes = encode_grid(&[vec![a, b]]).unwrap();
        let header = b"P6\n6 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 6 * 2 * 3);
        assert_eq!(&body[..3], &[0, 0, 0]);
        assert_eq!(&body[6..9], &[255, 255, 255]);
        assert_eq!(&body[15..18], &[255, 255, 255]);
    }

    #[test]
    fn rejects_mixed_sizes() {
        let a = Tensor::zeros(&[3, 2, 2]);
        let b = Tensor::zeros(&[3, 3, 3]);
        assert!(encode_grid(&[vec![a], vec![b]]).is_err());
    }
}
