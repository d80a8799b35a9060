//! IDX binary loader (the MNIST family format): big-endian magic and
//! dimension sizes, then raw `u8` payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::DatasetHalf;

/// Magic for a 3-dimensional `u8` image tensor.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic for a 1-dimensional `u8` label vector.
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format(format!("truncated before {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an images/labels file pair into one dataset half. Pixels are
/// scaled from `[0, 255]` to `[0, 1]`; standardization happens later from
/// training statistics.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetHalf> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let image_magic = read_be_u32(&images, 0, "image magic")?;
    if image_magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {image_magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let label_magic = read_be_u32(&labels, 0, "label magic")?;
    if label_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {label_magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }

    let count = read_be_u32(&images, 4, "image count")? as usize;
    let rows = read_be_u32(&images, 8, "image rows")? as usize;
    let cols = read_be_u32(&images, 12, "image cols")? as usize;
    let label_count = read_be_u32(&labels, 4, "label count")? as usize;
    if count != label_count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }

    let pixel_bytes = &images[16.min(images.len())..];
    let expected = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::Format("implausible image dimensions".into()))?;
    if pixel_bytes.len() != expected {
        return Err(Error::Format(format!(
            "image payload has {} bytes, expected {expected}",
            pixel_bytes.len()
        )));
    }
    let label_bytes = &labels[8.min(labels.len())..];
    if label_bytes.len() != count {
        return Err(Error::Format(format!(
            "label payload has {} bytes, expected {count}",
            label_bytes.len()
        )));
    }

    let features: Vec<f64> = pixel_bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(DatasetHalf {
        features: Matrix::from_vec(count, rows * cols, features)?,
        labels: label_bytes.iter().map(|&b| b as usize).collect(),
        image_shape: Some((1, rows, cols)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: u32, cols: u32) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn recovers_exact_pixels_from_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("images.idx");
        let labels_path = dir.path().join("labels.idx");
        let img_a: Vec<u8> = (0..9).collect();
        let img_b: Vec<u8> = (0..9).map(|i| 255 - i).collect();
        write_idx_images(&images_path, &[img_a.clone(), img_b.clone()], 3, 3);
        write_idx_labels(&labels_path, &[7, 2]);

        let half = load_idx(&images_path, &labels_path).unwrap();
        assert_eq!(half.len(), 2);
        assert_eq!(half.labels, vec![7, 2]);
        assert_eq!(half.image_shape, Some((1, 3, 3)));
        for (i, &b) in img_a.iter().enumerate() {
            assert_eq!(half.features.get(0, i), b as f64 / 255.0);
        }
        for (i, &b) in img_b.iter().enumerate() {
            assert_eq!(half.features.get(1, i), b as f64 / 255.0);
        }
    }

    #[test]
    fn rejects_swapped_magics() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("images.idx");
        let labels_path = dir.path().join("labels.idx");
        // labels magic written where images are expected
        write_idx_labels(&images_path, &[0, 1]);
        write_idx_labels(&labels_path, &[0, 1]);
        let err = load_idx(&images_path, &labels_path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn zero_image_file_is_a_valid_empty_half() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("images.idx");
        let labels_path = dir.path().join("labels.idx");
        write_idx_images(&images_path, &[], 3, 3);
        write_idx_labels(&labels_path, &[]);
        let half = load_idx(&images_path, &labels_path).unwrap();
        assert_eq!(half.len(), 0);
    }

    #[test]
    fn rejects_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("images.idx");
        let labels_path = dir.path().join("labels.idx");
        write_idx_images(&images_path, &[vec![1u8; 9]], 3, 3);
        write_idx_labels(&labels_path, &[1, 2]);
        assert!(matches!(
            load_idx(&images_path, &labels_path),
            Err(Error::Format(_))
        ));

        // truncate the image payload
        write_idx_labels(&labels_path, &[1]);
        let bytes = std::fs::read(&images_path).unwrap();
        std::fs::write(&images_path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            load_idx(&images_path, &labels_path),
            Err(Error::Format(_))
        ));
    }
}
