//! Little-endian container for exported splits: `MRKD-DS` magic, version,
//! class count, feature width, row counts, then features (`f64`) and labels
//! (`u32`) for each half.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{DatasetHalf, DatasetSplit};

/// Magic bytes at the start of a dataset container.
pub const CONTAINER_MAGIC: [u8; 7] = *b"MRKD-DS";
const CONTAINER_VERSION: u32 = 1;

pub fn save_container(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CONTAINER_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(split.class_count as u32).to_le_bytes());
    buf.extend_from_slice(&(split.feature_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(split.train.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(split.test.len() as u64).to_le_bytes());
    for half in [&split.train, &split.test] {
        for v in half.features.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &half.labels {
            buf.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("dataset container truncated".into()))
}

pub fn load_container(path: &Path) -> Result<DatasetSplit> {
    let bytes = std::fs::read(path)?;
    let mut r = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 7];
    read_exact_or_format(&mut r, &mut magic)?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Format(format!(
            "bad container magic {magic:?}, expected {CONTAINER_MAGIC:?}"
        )));
    }
    let mut u32buf = [0u8; 4];
    read_exact_or_format(&mut r, &mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version}"
        )));
    }
    read_exact_or_format(&mut r, &mut u32buf)?;
    let class_count = u32::from_le_bytes(u32buf) as usize;
    read_exact_or_format(&mut r, &mut u32buf)?;
    let dims = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    read_exact_or_format(&mut r, &mut u64buf)?;
    let n_train = u64::from_le_bytes(u64buf) as usize;
    read_exact_or_format(&mut r, &mut u64buf)?;
    let n_test = u64::from_le_bytes(u64buf) as usize;

    // check the declared sizes against the actual payload before allocating
    let per_row = dims
        .checked_mul(8)
        .and_then(|b| b.checked_add(4))
        .ok_or_else(|| Error::Format("implausible feature width".into()))?;
    let expected = n_train
        .checked_add(n_test)
        .and_then(|rows| rows.checked_mul(per_row))
        .ok_or_else(|| Error::Format("implausible row counts".into()))?;
    let remaining = bytes.len() as u64 - r.position();
    if expected as u64 != remaining {
        return Err(Error::Format(format!(
            "container payload has {remaining} bytes, header implies {expected}"
        )));
    }

    let mut read_half = |count: usize| -> Result<DatasetHalf> {
        let mut features = vec![0.0f64; count * dims];
        let mut f64buf = [0u8; 8];
        for v in &mut features {
            read_exact_or_format(&mut r, &mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            read_exact_or_format(&mut r, &mut u32buf)?;
            labels.push(u32::from_le_bytes(u32buf) as usize);
        }
        Ok(DatasetHalf {
            features: Matrix::from_vec(count, dims, features)?,
            labels,
            image_shape: None,
        })
    };
    let train = read_half(n_train)?;
    let test = read_half(n_test)?;
    if r.position() != bytes.len() as u64 {
        return Err(Error::Format("trailing bytes in dataset container".into()));
    }
    DatasetSplit::new(train, test, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_mixture, GaussianMixtureSpec};

    #[test]
    fn container_round_trips_bit_exactly() {
        let split = gen_gaussian_mixture(&GaussianMixtureSpec {
            classes: 3,
            dims: 5,
            train: 30,
            test: 12,
            separation: 4.0,
            seed: 5,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.mrkd-ds");
        save_container(&split, &path).unwrap();
        let loaded = load_container(&path).unwrap();
        assert_eq!(split.train, loaded.train);
        assert_eq!(split.test, loaded.test);
        assert_eq!(split.class_count, loaded.class_count);

        // saving the loaded split reproduces the same bytes
        let path2 = dir.path().join("split2.mrkd-ds");
        save_container(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn container_rejects_corruption() {
        let split = gen_gaussian_mixture(&GaussianMixtureSpec {
            classes: 2,
            dims: 3,
            train: 4,
            test: 2,
            separation: 2.0,
            seed: 1,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.mrkd-ds");
        save_container(&split, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_container(&path), Err(Error::Format(_))));

        let good = {
            bytes[0] = CONTAINER_MAGIC[0];
            bytes
        };
        std::fs::write(&path, &good[..good.len() - 1]).unwrap();
        assert!(matches!(load_container(&path), Err(Error::Format(_))));
    }

    #[test]
    fn container_rejects_implausible_row_counts() {
        // header claims u64::MAX training rows against a tiny payload
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hostile.mrkd-ds");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&CONTAINER_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes()); // version
        bytes.extend_from_slice(&2u32.to_le_bytes()); // classes
        bytes.extend_from_slice(&3u32.to_le_bytes()); // dims
        bytes.extend_from_slice(&u64::MAX.to_le_bytes()); // n_train
        bytes.extend_from_slice(&0u64.to_le_bytes()); // n_test
        bytes.extend_from_slice(&[0u8; 16]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_container(&path), Err(Error::Format(_))));
    }
}
