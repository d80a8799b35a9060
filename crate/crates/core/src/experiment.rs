//! Experiment specs and the batch runner behind the command-line front end.
//!
//! A spec is a versioned JSON document naming a dataset and a training
//! configuration. Each executed spec lands in `runs/<hash>/` under the output
//! root, keyed by a content hash of the spec itself, which makes sweeps
//! resumable: a cell whose `aggregate.json` already exists is skipped. All
//! result files are written to a temporary name and renamed into place.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    gen_gaussian_mixture, load_cifar_bin, load_container, load_idx, AugmentPolicy, CifarVariant,
    DatasetSplit, GaussianMixtureSpec,
};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossMethod};
use crate::trainer::{self, SnapshotSpec, TrainConfig};

/// Environment variable naming the directory that relative dataset paths
/// resolve against.
pub const DATA_DIR_ENV: &str = "MRKD_DATA_DIR";

const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_runs() -> usize {
    4
}

fn default_true() -> bool {
    true
}

/// Dataset descriptor inside an experiment spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum DatasetSpec {
    #[serde(rename = "gaussian_mixture")]
    GaussianMixture(GaussianMixtureSpec),
    #[serde(rename = "idx")]
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: usize,
        #[serde(default)]
        augment: bool,
    },
    #[serde(rename = "cifar")]
    Cifar {
        classes: u32,
        train_files: Vec<PathBuf>,
        test_files: Vec<PathBuf>,
        #[serde(default = "default_true")]
        augment: bool,
    },
    #[serde(rename = "container")]
    Container { path: PathBuf },
}

fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

impl DatasetSpec {
    /// Short task label used in aggregates and reports.
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::GaussianMixture(g) => format!(
                "gm-c{}-d{}-tr{}-te{}-sep{}",
                g.classes, g.dims, g.train, g.test, g.separation
            ),
            DatasetSpec::Idx { classes, .. } => format!("idx-c{classes}"),
            DatasetSpec::Cifar { classes, .. } => format!("cifar{classes}"),
            DatasetSpec::Container { path } => format!(
                "container-{}",
                path.file_stem().map_or_else(
                    || "data".to_string(),
                    |s| s.to_string_lossy().into_owned()
                )
            ),
        }
    }

    /// Materializes the dataset. Relative file paths resolve against
    /// [`DATA_DIR_ENV`] when it is set.
    pub fn build(&self) -> Result<DatasetSplit> {
        match self {
            DatasetSpec::GaussianMixture(g) => gen_gaussian_mixture(g),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
                augment,
            } => {
                let train = load_idx(&resolve(train_images), &resolve(train_labels))?;
                let test = load_idx(&resolve(test_images), &resolve(test_labels))?;
                let split = DatasetSplit::from_image_halves(train, test, *classes)?;
                Ok(if *augment {
                    split.with_augment(AugmentPolicy::flip_and_crop())
                } else {
                    split
                })
            }
            DatasetSpec::Cifar {
                classes,
                train_files,
                test_files,
                augment,
            } => {
                let variant = CifarVariant::from_class_count(*classes)?;
                let train: Vec<PathBuf> = train_files.iter().map(|p| resolve(p)).collect();
                let test: Vec<PathBuf> = test_files.iter().map(|p| resolve(p)).collect();
                let split = load_cifar_bin(&train, &test, variant)?;
                Ok(if *augment {
                    split.with_augment(AugmentPolicy::flip_and_crop())
                } else {
                    split
                })
            }
            DatasetSpec::Container { path } => load_container(&resolve(path)),
        }
    }
}

/// Loss selection with optional overrides; omitted values fall back to the
/// per-method defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub method: LossMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl LossSpec {
    pub fn materialize(&self, class_count: usize) -> LossConfig {
        let mut cfg = LossConfig::defaults_for(self.method, class_count);
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        cfg.gamma = self.gamma;
        cfg
    }
}

/// Training section of an experiment spec; class count comes from the
/// dataset at materialization time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "TrainSpec::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainSpec::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "TrainSpec::default_lr_max")]
    pub lr_max: f64,
    #[serde(default = "TrainSpec::default_lr_min")]
    pub lr_min: f64,
    #[serde(default = "TrainSpec::default_momentum")]
    pub momentum: f64,
    #[serde(default = "TrainSpec::default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<SnapshotSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_interval: usize,
}

impl TrainSpec {
    fn default_epochs() -> usize {
        200
    }
    fn default_batch_size() -> usize {
        128
    }
    fn default_lr_max() -> f64 {
        0.1
    }
    fn default_lr_min() -> f64 {
        0.0001
    }
    fn default_momentum() -> f64 {
        0.9
    }
    fn default_weight_decay() -> f64 {
        0.0005
    }

    pub fn materialize(&self, class_count: usize, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
            loss: self.loss.materialize(class_count),
            snapshot: self.snapshot.clone(),
            teacher_checkpoint: self.teacher_checkpoint.as_deref().map(resolve),
            checkpoint_interval: self.checkpoint_interval,
            checkpoint_dir,
        }
    }
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub train: TrainSpec,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(json)?;
        spec.validate_shallow()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        Self::from_json(&json)
    }

    fn validate_shallow(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.runs < 1 {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        Ok(())
    }

    /// Content hash identifying the work this spec describes (the output
    /// location does not participate).
    pub fn content_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        let json = serde_json::to_vec(&canonical).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The row stored as `aggregate.json` in every cell directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub task: String,
    pub method: String,
    pub config: TrainConfig,
    pub mean: f64,
    /// Absent in records written by other tools; reports flag such rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub runs: usize,
    #[serde(default)]
    pub degenerate: bool,
}

/// Where a finished cell landed and what it produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub cell_dir: PathBuf,
    pub record: AggregateRecord,
    /// True when the cell was already complete and was not re-run.
    pub resumed: bool,
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Executes one spec under `out_root`, or returns the existing result when
/// its cell is already complete.
pub fn run_experiment(spec: &ExperimentSpec, out_root: &Path) -> Result<RunArtifacts> {
    spec.validate_shallow()?;
    let hash = spec.content_hash();
    let cell_dir = out_root.join("runs").join(&hash);
    let aggregate_path = cell_dir.join("aggregate.json");
    if aggregate_path.exists() {
        let record: AggregateRecord =
            serde_json::from_str(&std::fs::read_to_string(&aggregate_path)?)?;
        return Ok(RunArtifacts {
            cell_dir,
            record,
            resumed: true,
        });
    }

    let data = spec.dataset.build()?;
    std::fs::create_dir_all(&cell_dir)?;
    let cfg = spec
        .train
        .materialize(data.class_count, Some(cell_dir.join("checkpoints")));
    cfg.validate()?;

    let result = trainer::train_protocol(&data, &cfg, spec.runs)?;

    for (k, outcome) in result.outcomes.iter().enumerate() {
        let run_id = k + 1;
        atomic_write(
            &cell_dir.join(format!("run{run_id}.csv")),
            outcome.metrics.to_csv().as_bytes(),
        )?;
        let model_path = cell_dir.join(format!("model_run{run_id}.bin"));
        let tmp = model_path.with_extension("tmp");
        outcome.params.save(&tmp)?;
        std::fs::rename(&tmp, &model_path)?;
        if let Some(ring) = &outcome.ring {
            let ring_path = cell_dir.join(format!("ring_run{run_id}.bin"));
            let tmp = ring_path.with_extension("tmp");
            ring.save(&tmp)?;
            std::fs::rename(&tmp, &ring_path)?;
        }
    }

    // wall-clock values live here, never in the CSV bodies
    let meta = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "hash": hash,
        "created_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "wall_seconds": result
            .run_metrics()
            .map(|m| m.wall_seconds)
            .collect::<Vec<_>>(),
    });
    atomic_write(
        &cell_dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )?;

    let record = AggregateRecord {
        schema_version: SCHEMA_VERSION,
        task: spec.dataset.label(),
        method: cfg.loss.method.name().to_string(),
        config: cfg,
        mean: result.aggregate.mean,
        std: Some(result.aggregate.std),
        runs: result.aggregate.runs,
        degenerate: result.aggregate.degenerate,
    };
    atomic_write(
        &aggregate_path,
        serde_json::to_string_pretty(&record)?.as_bytes(),
    )?;

    Ok(RunArtifacts {
        cell_dir,
        record,
        resumed: false,
    })
}

/// How sweep axes combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SweepMode {
    /// One axis varies at a time; the others stay at their base values.
    #[serde(rename = "control_variates")]
    #[default]
    ControlVariates,
    /// Full cartesian product of all axes.
    #[serde(rename = "full_grid")]
    FullGrid,
}

/// A sweep: a base experiment plus named parameter axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub base: ExperimentSpec,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub mode: SweepMode,
}

/// One expanded sweep cell.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub spec: ExperimentSpec,
}

fn apply_axis(spec: &mut ExperimentSpec, axis: &str, value: f64) -> Result<()> {
    match axis {
        "alpha" => spec.train.loss.alpha = Some(value),
        "tau" => spec.train.loss.tau = Some(value),
        "gamma" => spec.train.loss.gamma = Some(value),
        "kappa_epochs" => match spec.train.snapshot.as_mut() {
            Some(s) => s.kappa_epochs = value,
            None => {
                return Err(Error::InvalidConfig(
                    "axis `kappa_epochs` needs a snapshot config in the base spec".into(),
                ))
            }
        },
        "n" => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "axis `n` takes positive integers, got {value}"
                )));
            }
            match spec.train.snapshot.as_mut() {
                Some(s) => s.n = value as usize,
                None => {
                    return Err(Error::InvalidConfig(
                        "axis `n` needs a snapshot config in the base spec".into(),
                    ))
                }
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown sweep axis `{other}` (expected alpha, tau, gamma, kappa_epochs, or n)"
            )))
        }
    }
    Ok(())
}

fn format_axis_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl SweepSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let spec: SweepSpec = serde_json::from_str(&json)?;
        if spec.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                spec.schema_version
            )));
        }
        Ok(spec)
    }

    /// Expands into cells; an empty axis map degenerates to the base spec.
    pub fn expand(&self) -> Result<Vec<SweepCell>> {
        if self.axes.is_empty() {
            return Ok(vec![SweepCell {
                label: "base".to_string(),
                spec: self.base.clone(),
            }]);
        }
        for values in self.axes.values() {
            if values.is_empty() {
                return Err(Error::InvalidConfig("sweep axis has no values".into()));
            }
        }
        let mut cells = Vec::new();
        match self.mode {
            SweepMode::ControlVariates => {
                for (axis, values) in &self.axes {
                    for &v in values {
                        let mut spec = self.base.clone();
                        apply_axis(&mut spec, axis, v)?;
                        cells.push(SweepCell {
                            label: format!("{axis}={}", format_axis_value(v)),
                            spec,
                        });
                    }
                }
            }
            SweepMode::FullGrid => {
                let axes: Vec<(&String, &Vec<f64>)> = self.axes.iter().collect();
                let total: usize = axes.iter().map(|(_, v)| v.len()).product();
                for mut index in 0..total {
                    let mut spec = self.base.clone();
                    let mut parts = Vec::new();
                    for (axis, values) in &axes {
                        let v = values[index % values.len()];
                        index /= values.len();
                        apply_axis(&mut spec, axis, v)?;
                        parts.push(format!("{axis}={}", format_axis_value(v)));
                    }
                    cells.push(SweepCell {
                        label: parts.join(","),
                        spec,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub hash: String,
    pub method: String,
    pub mean: f64,
    pub std: Option<f64>,
    pub runs: usize,
}

/// A finished sweep: rows sorted by mean error, plus the summary location.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

/// Renders the summary CSV body (sorted by ascending mean, label as the tie
/// break).
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("label,hash,method,mean,std,runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label,
            r.hash,
            r.method,
            r.mean,
            r.std.map_or(String::new(), |s| s.to_string()),
            r.runs
        ));
    }
    out
}

type CellResult = Result<(SweepCell, RunArtifacts)>;

/// Runs every cell (resuming completed ones) on a bounded worker pool and
/// writes `summary.csv` under `out_root`.
pub fn run_sweep(spec: &SweepSpec, out_root: &Path, parallel: usize) -> Result<SweepOutcome> {
    let cells = spec.expand()?;
    let workers = parallel.clamp(1, cells.len().max(1));

    let queue: Mutex<Vec<(usize, SweepCell)>> =
        Mutex::new(cells.into_iter().enumerate().rev().collect());
    let results: Mutex<Vec<Option<CellResult>>> = {
        let len = queue.lock().expect("fresh mutex").len();
        Mutex::new((0..len).map(|_| None).collect())
    };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop();
                let Some((idx, cell)) = next else { break };
                let outcome = run_experiment(&cell.spec, out_root).map(|a| (cell, a));
                results.lock().expect("results lock")[idx] = Some(outcome);
            });
        }
    });

    let collected = results.into_inner().expect("scope joined");
    let mut rows = Vec::with_capacity(collected.len());
    for slot in collected {
        let (cell, artifacts) = slot.expect("every cell was processed")?;
        rows.push(SummaryRow {
            label: cell.label,
            hash: cell_hash_from_dir(&artifacts.cell_dir),
            method: artifacts.record.method.clone(),
            mean: artifacts.record.mean,
            std: artifacts.record.std,
            runs: artifacts.record.runs,
        });
    }
    rows.sort_by(|a, b| {
        a.mean
            .partial_cmp(&b.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });

    std::fs::create_dir_all(out_root)?;
    let summary_path = out_root.join("summary.csv");
    atomic_write(&summary_path, summary_csv(&rows).as_bytes())?;
    Ok(SweepOutcome { rows, summary_path })
}

fn cell_hash_from_dir(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}
