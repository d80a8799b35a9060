//! CIFAR-10/100 binary batch loader. Each record is a label prefix followed
//! by 3072 pixel bytes (three 32x32 channel planes). CIFAR-100 records carry
//! a coarse byte then a fine byte; the fine label is used.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{DatasetHalf, DatasetSplit};

const IMAGE_BYTES: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn from_class_count(classes: u32) -> Result<Self> {
        match classes {
            10 => Ok(Self::Cifar10),
            100 => Ok(Self::Cifar100),
            other => Err(Error::InvalidConfig(format!(
                "CIFAR variant must be 10 or 100, got {other}"
            ))),
        }
    }

    pub fn class_count(self) -> usize {
        match self {
            Self::Cifar10 => 10,
            Self::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            Self::Cifar10 => 1,
            Self::Cifar100 => 2,
        }
    }

    fn record_bytes(self) -> usize {
        self.label_bytes() + IMAGE_BYTES
    }
}

/// Number of records in a batch file of `file_len` bytes; errors unless the
/// length is an exact multiple of the record size. Five standard 10000-record
/// training batches therefore yield a 50000-image split.
pub fn records_in_file(file_len: usize, variant: CifarVariant) -> Result<usize> {
    let record = variant.record_bytes();
    if !file_len.is_multiple_of(record) {
        return Err(Error::Format(format!(
            "file length {file_len} is not a multiple of the {record}-byte record size"
        )));
    }
    Ok(file_len / record)
}

fn load_half(paths: &[PathBuf], variant: CifarVariant) -> Result<DatasetHalf> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path)?;
        let count = records_in_file(bytes.len(), variant).map_err(|e| {
            Error::Format(format!("{}: {e}", path.display()))
        })?;
        let record = variant.record_bytes();
        for i in 0..count {
            let rec = &bytes[i * record..(i + 1) * record];
            // CIFAR-100: byte 0 is the coarse label, byte 1 the fine label
            let label = rec[variant.label_bytes() - 1] as usize;
            if label >= variant.class_count() {
                return Err(Error::Format(format!(
                    "label {label} out of range in {}",
                    path.display()
                )));
            }
            labels.push(label);
            features.extend(rec[variant.label_bytes()..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Ok(DatasetHalf {
        features: Matrix::from_vec(labels.len(), IMAGE_BYTES, features)?,
        labels,
        image_shape: Some((3, 32, 32)),
    })
}

/// Loads training and test batch files and standardizes per channel with
/// training statistics. The caller decides the augmentation policy.
pub fn load_cifar_bin(
    train_paths: &[PathBuf],
    test_paths: &[PathBuf],
    variant: CifarVariant,
) -> Result<DatasetSplit> {
    if train_paths.is_empty() || test_paths.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one train and one test batch file".into(),
        ));
    }
    let train = load_half(train_paths, variant)?;
    let test = load_half(test_paths, variant)?;
    DatasetSplit::from_image_halves(train, test, variant.class_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn write_records(path: &Path, variant: CifarVariant, records: &[(u8, u8, u8)]) {
        // each record gets a constant pixel value; (coarse, fine, pixel)
        let mut bytes = Vec::new();
        for &(coarse, fine, pixel) in records {
            match variant {
                CifarVariant::Cifar10 => bytes.push(fine),
                CifarVariant::Cifar100 => {
                    bytes.push(coarse);
                    bytes.push(fine);
                }
            }
            bytes.extend(std::iter::repeat_n(pixel, IMAGE_BYTES));
        }
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn loads_fixture_records_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train.bin");
        let test = dir.path().join("test.bin");
        write_records(&train, CifarVariant::Cifar10, &[(0, 3, 0), (0, 7, 255)]);
        write_records(&test, CifarVariant::Cifar10, &[(0, 1, 128)]);
        let split = load_cifar_bin(&[train], &[test], CifarVariant::Cifar10).unwrap();
        assert_eq!(split.train.labels, vec![3, 7]);
        assert_eq!(split.test.labels, vec![1]);
        assert_eq!(split.class_count, 10);
        // record 0 is all zeros, record 1 all 255: after per-channel
        // standardization they map to -1 and +1 (mean 0.5, std 0.5)
        assert!((split.train.features.get(0, 0) + 1.0).abs() < 1e-9);
        assert!((split.train.features.get(1, 0) - 1.0).abs() < 1e-9);
        assert!((split.train.features.get(0, IMAGE_BYTES - 1) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn cifar100_uses_the_fine_label_byte() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train.bin");
        let test = dir.path().join("test.bin");
        write_records(&train, CifarVariant::Cifar100, &[(5, 42, 10), (19, 99, 20)]);
        write_records(&test, CifarVariant::Cifar100, &[(1, 0, 30)]);
        let split = load_cifar_bin(&[train], &[test], CifarVariant::Cifar100).unwrap();
        assert_eq!(split.train.labels, vec![42, 99]);
        assert_eq!(split.class_count, 100);
    }

    #[test]
    fn rejects_wrong_record_size() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train.bin");
        std::fs::write(&train, vec![0u8; 3073 + 17]).unwrap();
        let test = dir.path().join("test.bin");
        write_records(&test, CifarVariant::Cifar10, &[(0, 0, 0)]);
        assert!(matches!(
            load_cifar_bin(&[train], &[test], CifarVariant::Cifar10),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn multi_file_counts_add_up() {
        let dir = tempfile::tempdir().unwrap();
        let mut train_paths = Vec::new();
        for k in 0..5 {
            let p = dir.path().join(format!("batch{k}.bin"));
            write_records(
                &p,
                CifarVariant::Cifar10,
                &[(0, k, 0), (0, k, 1), (0, k, 2)],
            );
            train_paths.push(p);
        }
        let test = dir.path().join("test.bin");
        write_records(&test, CifarVariant::Cifar10, &[(0, 0, 0)]);
        let split = load_cifar_bin(&train_paths, &[test], CifarVariant::Cifar10).unwrap();
        assert_eq!(split.train.len(), 15);
    }

    #[test]
    fn standard_batch_arithmetic_reaches_fifty_thousand() {
        // five full training batches of 10000 records each
        let per_file = records_in_file(10_000 * 3073, CifarVariant::Cifar10).unwrap();
        assert_eq!(per_file, 10_000);
        assert_eq!(5 * per_file, 50_000);
        // CIFAR-100 ships one training file with two label bytes per record
        assert_eq!(
            records_in_file(50_000 * 3074, CifarVariant::Cifar100).unwrap(),
            50_000
        );
    }
}
