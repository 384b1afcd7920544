//! Generated datasets: a large-class-count stand-in with smooth per-class
//! images, and a sparse handwritten-digit stand-in that can be written out
//! in IDX format.

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

/// Builds a dataset with `num_classes` classes and `per_class` samples per
/// class. Each image is a sum of four random low-frequency cosine modes
/// shared by its class, a small sample-specific mode, and a per-class
/// offset, min-max scaled into `[0, 1]`.
///
/// Stands in for a face-recognition corpus whose only property used here
/// is a class count far above the batch size, with distinct per-class
/// inputs.
pub fn make_synthetic(
    num_classes: usize,
    per_class: usize,
    height: usize,
    width: usize,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if per_class < 1 {
        return Err(Error::InvalidArgument("need at least 1 sample per class".into()));
    }
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * height * width);
    let mut labels = Vec::with_capacity(n);

    for class in 0..num_classes {
        let modes: Vec<CosineMode> = (0..4).map(|_| CosineMode::draw(rng, 0.5, 1.0)).collect();
        let offset = rng.next_f64() - 0.5;
        for _ in 0..per_class {
            let extra = CosineMode::draw(rng, 0.05, 0.15);
            let mut img = vec![0.0f64; height * width];
            for (idx, px) in img.iter_mut().enumerate() {
                let (i, j) = (idx / width, idx % width);
                let mut v = offset + extra.eval(i, j, height, width);
                for m in &modes {
                    v += m.eval(i, j, height, width);
                }
                *px = v;
            }
            min_max_scale(&mut img);
            data.extend_from_slice(&img);
            labels.push(class);
        }
    }

    Dataset::new(
        "synthetic",
        Tensor::from_vec(&[n, height, width], data)?,
        labels,
        num_classes,
    )
}

struct CosineMode {
    amplitude: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

impl CosineMode {
    fn draw(rng: &mut SeededRng, amp_lo: f64, amp_hi: f64) -> CosineMode {
        // Frequencies in 0..=3 cycles per axis, never both zero, so the
        // mode is non-constant and min-max scaling is well defined.
        let (fx, fy) = loop {
            let fx = rng.index(4);
            let fy = rng.index(4);
            if fx + fy > 0 {
                break (fx as f64, fy as f64);
            }
        };
        CosineMode {
            amplitude: amp_lo + (amp_hi - amp_lo) * rng.next_f64(),
            fx,
            fy,
            phase: std::f64::consts::TAU * rng.next_f64(),
        }
    }

    fn eval(&self, i: usize, j: usize, h: usize, w: usize) -> f64 {
        let arg = std::f64::consts::TAU
            * (self.fx * i as f64 / h as f64 + self.fy * j as f64 / w as f64)
            + self.phase;
        self.amplitude * arg.cos()
    }
}

fn min_max_scale(img: &mut [f64]) {
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        for v in img.iter_mut() {
            *v = (*v - lo) / span;
        }
    } else {
        for v in img.iter_mut() {
            *v = 0.0;
        }
    }
}

/// 5x7 glyph masks for the digits 0-9.
const GLYPHS: [[&str; 7]; 10] = [
    [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    [" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "],
    ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    [" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "],
    ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    [" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "],
];

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const UPSCALE: usize = 3;
const DIGIT_SIDE: usize = 28;

/// Renders `count` digit images (28x28, 10 classes): an upscaled glyph at
/// a jittered position, intensity-varied, box-blurred once. Background
/// pixels stay exactly zero, matching the sparse-ink character of scanned
/// digits. Deterministic per generator state.
pub fn make_digits(count: usize, rng: &mut SeededRng) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let side = DIGIT_SIDE;
    let mut data = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let digit = rng.index(10);
        labels.push(digit);
        data.extend_from_slice(&render_digit(digit, rng));
    }
    Dataset::new(
        "digits",
        Tensor::from_vec(&[count, side, side], data)?,
        labels,
        10,
    )
}

fn render_digit(digit: usize, rng: &mut SeededRng) -> Vec<f64> {
    let side = DIGIT_SIDE;
    let glyph_h = GLYPH_H * UPSCALE;
    let glyph_w = GLYPH_W * UPSCALE;
    // Centered placement with +-2 pixel jitter.
    let base_r = (side - glyph_h) / 2;
    let base_c = (side - glyph_w) / 2;
    let jr = rng.index(5) as isize - 2;
    let jc = rng.index(5) as isize - 2;
    let row0 = (base_r as isize + jr).clamp(0, (side - glyph_h) as isize) as usize;
    let col0 = (base_c as isize + jc).clamp(0, (side - glyph_w) as isize) as usize;
    let ink = 0.75 + 0.25 * rng.next_f64();

    let mut canvas = vec![0.0f64; side * side];
    for gr in 0..GLYPH_H {
        let row_mask = GLYPHS[digit][gr].as_bytes();
        for gc in 0..GLYPH_W {
            if row_mask[gc] == b'#' {
                let jitter = 0.9 + 0.1 * rng.next_f64();
                for ur in 0..UPSCALE {
                    for uc in 0..UPSCALE {
                        let r = row0 + gr * UPSCALE + ur;
                        let c = col0 + gc * UPSCALE + uc;
                        canvas[r * side + c] = (ink * jitter).min(1.0);
                    }
                }
            }
        }
    }
    box_blur(&canvas, side, side)
}

fn box_blur(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut sum = 0.0;
            let mut count = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (r, c) = (i as i64 + di, j as i64 + dj);
                    if r >= 0 && r < h as i64 && c >= 0 && c < w as i64 {
                        sum += img[(r as usize) * w + c as usize];
                        count += 1.0;
                    }
                }
            }
            out[i * w + j] = sum / count;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let mut a = SeededRng::new(5, 0);
        let mut b = SeededRng::new(5, 0);
        let da = make_synthetic(2, 1, 8, 8, &mut a).unwrap();
        let db = make_synthetic(2, 1, 8, 8, &mut b).unwrap();
        assert_eq!(da.images, db.images);
        assert!(da.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn synthetic_counts() {
        let mut rng = SeededRng::new(1, 0);
        let ds = make_synthetic(12, 3, 8, 8, &mut rng).unwrap();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds.num_classes, 12);
        assert!(make_synthetic(1, 1, 8, 8, &mut rng).is_err());
        assert!(make_synthetic(2, 0, 8, 8, &mut rng).is_err());
    }

    #[test]
    fn digits_are_sparse_and_in_range() {
        let mut rng = SeededRng::new(3, 0);
        let ds = make_digits(20, &mut rng).unwrap();
        assert_eq!(ds.images.shape(), &[20, 28, 28]);
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(ds.labels.iter().all(|&l| l < 10));
        // Ink should cover a minority of the canvas.
        let ink_fraction = ds.images.data().iter().filter(|&&v| v > 0.05).count() as f64
            / ds.images.len() as f64;
        assert!(ink_fraction > 0.05 && ink_fraction < 0.5, "{ink_fraction}");
    }
}
