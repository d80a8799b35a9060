//! Training kit for self-distillation on small dense networks.
//!
//! The crate bundles everything needed to study a family of distillation
//! losses at desk scale:
//!
//! - [`nn`]: a dense ReLU network with exact analytic backpropagation and a
//!   versioned binary parameter format.
//! - [`losses`]: cross-entropy, tempered KL divergence, classic
//!   teacher-student distillation, label smoothing and its distillation
//!   form, teacher correction, and memory-replay distillation over snapshot
//!   teachers, all with analytic gradients.
//! - [`snapshots`]: the ring of frozen parameter copies that serves the
//!   memory-replay teachers, shifted every `kappa` steps.
//! - [`trainer`]: mini-batch SGD with momentum, weight decay, and cosine
//!   annealing, plus the multi-run protocol that reports last-epoch test
//!   error as mean and standard deviation.
//! - [`data`]: a seeded Gaussian-mixture generator, IDX and CIFAR binary
//!   loaders, flip/crop augmentation, and a container format for exports.
//! - [`gradcheck`]: finite-difference verification of every loss gradient.
//! - [`experiment`] and [`report`]: JSON experiment specs, a resumable
//!   sweep runner keyed by content hash, and result tables.
//!
//! The `mrkd` binary exposes the batch workflow: `train`, `gradcheck`,
//! `sweep`, and `report`.
//!
//! # Quick start
//!
//! ```
//! use mrkd::data::{gen_gaussian_mixture, GaussianMixtureSpec};
//! use mrkd::losses::{LossConfig, LossMethod};
//! use mrkd::trainer::{train_run, SnapshotSpec, TrainConfig};
//!
//! # fn main() -> mrkd::Result<()> {
//! let data = gen_gaussian_mixture(&GaussianMixtureSpec {
//!     classes: 3,
//!     dims: 8,
//!     train: 120,
//!     test: 60,
//!     separation: 6.0,
//!     seed: 7,
//! })?;
//!
//! let cfg = TrainConfig {
//!     hidden: vec![16],
//!     epochs: 3,
//!     batch_size: 32,
//!     lr_max: 0.1,
//!     lr_min: 0.0001,
//!     momentum: 0.9,
//!     weight_decay: 0.0005,
//!     seed: 1,
//!     loss: LossConfig::defaults_for(LossMethod::MrKd, 3),
//!     snapshot: Some(SnapshotSpec { kappa_epochs: 1.0, n: 2 }),
//!     teacher_checkpoint: None,
//!     checkpoint_interval: 0,
//!     checkpoint_dir: None,
//! };
//! let metrics = train_run(&data, &cfg)?;
//! assert_eq!(metrics.epochs.len(), 3);
//! assert!(metrics.final_test_err <= 100.0);
//! # Ok(())
//! # }
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod report;
pub mod snapshots;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{LossConfig, LossMethod, LossResult, ProbVector};
pub use matrix::Matrix;
pub use nn::{LogitVector, ParamSet};
pub use snapshots::{SnapshotConfig, SnapshotRing};
pub use trainer::{AggregateMetrics, RunMetrics, TrainConfig};
