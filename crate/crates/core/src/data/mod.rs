//! Dataset provisioning: a seeded Gaussian-mixture generator for fast
//! experiments, binary loaders for tiny-image datasets, training-batch
//! augmentation, and a simple container format for exported splits.

mod augment;
mod cifar;
mod container;
mod idx;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use augment::{augment_batch, AugmentPolicy};
pub use cifar::{load_cifar_bin, records_in_file, CifarVariant};
pub use container::{load_container, save_container, CONTAINER_MAGIC};
pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Image layout as channels, height, width.
pub type ImageShape = (usize, usize, usize);

/// One side of a dataset: features are `[N x D]` row-major, labels are class
/// indices in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHalf {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub image_shape: Option<ImageShape>,
}

impl DatasetHalf {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self, class_count: usize) -> Result<()> {
        if self.features.rows() != self.labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                self.features.rows(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidData(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some((c, h, w)) = self.image_shape {
            if self.features.cols() != c * h * w {
                return Err(Error::DimensionMismatch(format!(
                    "feature width {} vs image shape {c}x{h}x{w}",
                    self.features.cols()
                )));
            }
        }
        Ok(())
    }
}

/// A full train/test split with its class count and augmentation policy.
/// The policy applies to training batches only, never to evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: DatasetHalf,
    pub test: DatasetHalf,
    pub class_count: usize,
    pub augment: AugmentPolicy,
}

impl DatasetSplit {
    pub fn new(train: DatasetHalf, test: DatasetHalf, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "class_count must be >= 2, got {class_count}"
            )));
        }
        train.validate(class_count)?;
        test.validate(class_count)?;
        if !train.is_empty() && !test.is_empty() && train.features.cols() != test.features.cols() {
            return Err(Error::DimensionMismatch(
                "train and test feature widths differ".into(),
            ));
        }
        Ok(Self {
            train,
            test,
            class_count,
            augment: AugmentPolicy::off(),
        })
    }

    pub fn with_augment(mut self, policy: AugmentPolicy) -> Self {
        self.augment = policy;
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.train.features.cols()
    }

    /// Assembles an image dataset from loader halves and standardizes both
    /// sides per channel with statistics taken from the training half.
    pub fn from_image_halves(
        mut train: DatasetHalf,
        mut test: DatasetHalf,
        class_count: usize,
    ) -> Result<Self> {
        let shape = train.image_shape.ok_or_else(|| {
            Error::InvalidData("image halves need an image shape".into())
        })?;
        if test.image_shape != Some(shape) {
            return Err(Error::DimensionMismatch(
                "train and test image shapes differ".into(),
            ));
        }
        let stats = channel_stats(&train.features, shape)?;
        standardize(&mut train.features, shape, &stats)?;
        standardize(&mut test.features, shape, &stats)?;
        Self::new(train, test, class_count)
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn channel_stats(features: &Matrix, (c, h, w): ImageShape) -> Result<ChannelStats> {
    let plane = h * w;
    if features.cols() != c * plane {
        return Err(Error::DimensionMismatch(
            "feature width does not match image shape".into(),
        ));
    }
    let mut mean = vec![0.0; c];
    let mut std = vec![1.0; c];
    let n = (features.rows() * plane) as f64;
    if features.rows() == 0 {
        return Ok(ChannelStats { mean, std });
    }
    for ch in 0..c {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for r in 0..features.rows() {
            for &v in &features.row(r)[ch * plane..(ch + 1) * plane] {
                sum += v;
                sum_sq += v * v;
            }
        }
        let mu = sum / n;
        mean[ch] = mu;
        std[ch] = (sum_sq / n - mu * mu).max(0.0).sqrt().max(1e-8);
    }
    Ok(ChannelStats { mean, std })
}

fn standardize(features: &mut Matrix, (c, h, w): ImageShape, stats: &ChannelStats) -> Result<()> {
    let plane = h * w;
    if features.cols() != c * plane {
        return Err(Error::DimensionMismatch(
            "feature width does not match image shape".into(),
        ));
    }
    for r in 0..features.rows() {
        let row = features.row_mut(r);
        for ch in 0..c {
            for v in &mut row[ch * plane..(ch + 1) * plane] {
                *v = (*v - stats.mean[ch]) / stats.std[ch];
            }
        }
    }
    Ok(())
}

/// Parameters of the synthetic Gaussian-mixture task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub classes: usize,
    pub dims: usize,
    pub train: usize,
    pub test: usize,
    pub separation: f64,
    pub seed: u64,
}

/// Generates `classes` unit-covariance Gaussian clusters whose means sit on a
/// scaled orthonormal frame, every pair exactly `separation` apart. Requires
/// `classes <= dims` for that frame to exist. Train and test are drawn from
/// disjoint seeded streams of the same distribution; labels are stratified so
/// every class count differs by at most one.
pub fn gen_gaussian_mixture(spec: &GaussianMixtureSpec) -> Result<DatasetSplit> {
    let GaussianMixtureSpec {
        classes,
        dims,
        train,
        test,
        separation,
        seed,
    } = *spec;
    if classes < 2 {
        return Err(Error::InvalidConfig("need at least 2 classes".into()));
    }
    if dims < 2 {
        return Err(Error::InvalidConfig("need at least 2 dimensions".into()));
    }
    if !separation.is_finite() || separation <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "separation must be > 0, got {separation}"
        )));
    }
    if classes > dims {
        return Err(Error::InvalidConfig(format!(
            "cannot place {classes} equidistant class means in {dims} dimensions; \
             need classes <= dims"
        )));
    }

    // Mean of class k sits at scale * e_k; pair distance scale * sqrt(2).
    let scale = separation / 2f64.sqrt();
    let sample_half = |count: usize, stream_seed: u64| -> Result<DatasetHalf> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let mut features = Vec::with_capacity(count * dims);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            // stratified: cycle classes so histogram stays uniform within 1
            let class = i % classes;
            labels.push(class);
            for d in 0..dims {
                let center = if d == class { scale } else { 0.0 };
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(center + noise);
            }
        }
        // one seeded shuffle so class runs do not line up with batches
        let mut order: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut shuffled_features = Vec::with_capacity(count * dims);
        let mut shuffled_labels = Vec::with_capacity(count);
        for &idx in &order {
            shuffled_features.extend_from_slice(&features[idx * dims..(idx + 1) * dims]);
            shuffled_labels.push(labels[idx]);
        }
        Ok(DatasetHalf {
            features: Matrix::from_vec(count, dims, shuffled_features)?,
            labels: shuffled_labels,
            image_shape: None,
        })
    };

    // distinct substreams keep train and test disjoint by construction
    let train_half = sample_half(train, seed.wrapping_mul(2).wrapping_add(1))?;
    let test_half = sample_half(test, seed.wrapping_mul(2).wrapping_add(2))?;
    DatasetSplit::new(train_half, test_half, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, dims: usize, train: usize, test: usize, sep: f64) -> GaussianMixtureSpec {
        GaussianMixtureSpec {
            classes,
            dims,
            train,
            test,
            separation: sep,
            seed: 11,
        }
    }

    #[test]
    fn mixture_is_deterministic_per_seed() {
        let a = gen_gaussian_mixture(&spec(3, 4, 60, 30, 5.0)).unwrap();
        let b = gen_gaussian_mixture(&spec(3, 4, 60, 30, 5.0)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(3, 4, 60, 30, 5.0);
        other.seed = 12;
        assert_ne!(a, gen_gaussian_mixture(&other).unwrap());
    }

    #[test]
    fn mixture_label_histogram_is_uniform_within_one() {
        let split = gen_gaussian_mixture(&spec(10, 32, 5000, 1000, 4.0)).unwrap();
        for half in [&split.train, &split.test] {
            let mut counts = vec![0usize; 10];
            for &l in &half.labels {
                counts[l] += 1;
            }
            let min = counts.iter().min().unwrap();
            let max = counts.iter().max().unwrap();
            assert!(max - min <= 1, "counts {counts:?}");
        }
    }

    #[test]
    fn mixture_rejects_infeasible_geometry() {
        assert!(matches!(
            gen_gaussian_mixture(&spec(5, 3, 10, 10, 2.0)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(gen_gaussian_mixture(&spec(2, 2, 10, 10, 0.0)).is_err());
    }

    #[test]
    fn wide_separation_is_linearly_separable() {
        // separation 10 puts the optimal boundary 5 sigma from each mean, so
        // the midpoint classifier should make no mistakes on this sample
        let split = gen_gaussian_mixture(&spec(2, 2, 1000, 1000, 10.0)).unwrap();
        let scale = 10.0 / 2f64.sqrt();
        let mut errors = 0;
        for half in [&split.train, &split.test] {
            for (r, &label) in half.labels.iter().enumerate() {
                let row = half.features.row(r);
                // nearest class mean (scale * e_k) decides
                let predicted = if (row[0] - scale).powi(2) + row[1].powi(2)
                    < row[0].powi(2) + (row[1] - scale).powi(2)
                {
                    0
                } else {
                    1
                };
                if predicted != label {
                    errors += 1;
                }
            }
        }
        assert_eq!(errors, 0);
    }

    #[test]
    fn train_and_test_share_the_distribution() {
        let split = gen_gaussian_mixture(&spec(4, 8, 2000, 2000, 3.0)).unwrap();
        let per_dim_mean = |half: &DatasetHalf| -> Vec<f64> {
            let mut mean = vec![0.0; 8];
            for r in 0..half.features.rows() {
                for (m, &v) in mean.iter_mut().zip(half.features.row(r)) {
                    *m += v / half.features.rows() as f64;
                }
            }
            mean
        };
        let tr = per_dim_mean(&split.train);
        let te = per_dim_mean(&split.test);
        let bound = 5.0 * (1.0f64 / 2000.0 + 1.0 / 2000.0).sqrt();
        for (a, b) in tr.iter().zip(&te) {
            assert!((a - b).abs() < bound, "means {a} vs {b} exceed {bound}");
        }
    }

    #[test]
    fn standardization_uses_training_statistics() {
        let train = DatasetHalf {
            features: Matrix::from_vec(2, 4, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5]).unwrap(),
            labels: vec![0, 1],
            image_shape: Some((2, 1, 2)),
        };
        let test = DatasetHalf {
            features: Matrix::from_vec(1, 4, vec![0.25, 0.75, 0.5, 0.5]).unwrap(),
            labels: vec![0],
            image_shape: Some((2, 1, 2)),
        };
        let split = DatasetSplit::from_image_halves(train, test, 2).unwrap();
        // channel 0 had mean 0.5, channel 1 was constant (std floored)
        let row = split.train.features.row(0);
        assert!((row[0] + 1.0).abs() < 1e-12);
        assert!((row[1] - 1.0).abs() < 1e-12);
        assert_eq!(row[2], 0.0);
        assert_eq!(row[3], 0.0);
        // test side transformed with train statistics
        let trow = split.test.features.row(0);
        assert!((trow[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn split_rejects_out_of_range_labels() {
        let half = DatasetHalf {
            features: Matrix::zeros(2, 3),
            labels: vec![0, 5],
            image_shape: None,
        };
        let ok = DatasetHalf {
            features: Matrix::zeros(1, 3),
            labels: vec![0],
            image_shape: None,
        };
        assert!(DatasetSplit::new(half, ok, 3).is_err());
    }
}
