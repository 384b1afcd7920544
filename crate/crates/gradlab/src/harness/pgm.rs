//! Minimal 8-bit binary PGM (P5) reader/writer for exchanging grayscale
//! images with external tools.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Writes an `[H, W]` image with values in `[0, 1]` as a P5 PGM file.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    if image.ndim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "PGM writer expects [H, W], got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a P5 PGM file into an `[H, W]` tensor scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: &str| Error::InvalidArgument(format!("{}: {reason}", path.display()));
    let mut pos = 0usize;

    let mut token = |pos: &mut usize| -> Result<String> {
        // Skip whitespace and '#' comment lines between header fields.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::InvalidArgument("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    if token(&mut pos)? != "P5" {
        return Err(bad("not a binary (P5) PGM file"));
    }
    let w: usize = token(&mut pos)?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token(&mut pos)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&mut pos)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    pos += 1; // single whitespace byte after maxval
    let payload = bytes
        .get(pos..pos + h * w)
        .ok_or_else(|| bad("truncated pixel payload"))?;
    let data: Vec<f64> = payload
        .iter()
        .map(|&b| f64::from(b) / maxval as f64)
        .collect();
    Tensor::from_vec(&[h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(3, 0);
        let img = rng.uniform(&[9, 7], 0.0, 1.0).unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), &[9, 7]);
        let max_err = img
            .data()
            .iter()
            .zip(back.data().iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn pgm_rejects_other_formats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P2\n2 2\n255\n0 1 2 3\n").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}
