//! Reader and writer for the big-endian IDX container used by the MNIST
//! distribution: magic 0x00000803 + (N, H, W) for images, 0x00000801 + N
//! for labels, unsigned-byte payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::BadIdx {
            path: path.display().to_string(),
            reason: format!("truncated header at byte {offset}"),
        })?;
    Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

/// Loads an image/label file pair into a dataset with pixels scaled to
/// `[0, 1]` by `byte / 255`. The class count is fixed at 10.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lab_bytes = fs::read(labels_path)?;

    let img_magic = read_u32_be(&img_bytes, 0, images_path)?;
    if img_magic != IMAGES_MAGIC {
        return Err(Error::BadIdx {
            path: images_path.display().to_string(),
            reason: format!("bad magic {img_magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let h = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let w = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let payload = &img_bytes[16..];
    if payload.len() != n * h * w {
        return Err(Error::BadIdx {
            path: images_path.display().to_string(),
            reason: format!(
                "payload holds {} bytes, header promises {}",
                payload.len(),
                n * h * w
            ),
        });
    }

    let lab_magic = read_u32_be(&lab_bytes, 0, labels_path)?;
    if lab_magic != LABELS_MAGIC {
        return Err(Error::BadIdx {
            path: labels_path.display().to_string(),
            reason: format!("bad magic {lab_magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = read_u32_be(&lab_bytes, 4, labels_path)? as usize;
    if n_labels != n {
        return Err(Error::BadIdx {
            path: labels_path.display().to_string(),
            reason: format!("{n_labels} labels for {n} images"),
        });
    }
    let label_payload = &lab_bytes[8..];
    if label_payload.len() != n_labels {
        return Err(Error::BadIdx {
            path: labels_path.display().to_string(),
            reason: format!(
                "payload holds {} bytes, header promises {n_labels}",
                label_payload.len()
            ),
        });
    }

    let data: Vec<f64> = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_payload.iter().map(|&b| b as usize).collect();
    let num_classes = 10;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::BadIdx {
            path: labels_path.display().to_string(),
            reason: format!("label {bad} out of range for {num_classes} classes"),
        });
    }

    Dataset::new(
        "mnist-idx",
        Tensor::from_vec(&[n, h, w], data)?,
        labels,
        num_classes,
    )
}

/// Writes images (quantized to bytes) in IDX format.
pub fn write_idx_images(path: &Path, images: &Tensor) -> Result<()> {
    assert_eq!(images.ndim(), 3, "expected [N, H, W] images");
    let (n, h, w) = (images.shape()[0], images.shape()[1], images.shape()[2]);
    let mut out = Vec::with_capacity(16 + n * h * w);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend(
        images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        assert!(l < 256, "label {l} does not fit in a byte");
        out.push(l as u8);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}
