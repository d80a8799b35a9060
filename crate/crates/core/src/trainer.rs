//! The training loop: seeded mini-batch SGD with momentum and weight decay,
//! a cosine-annealed learning rate, per-method loss dispatch (including the
//! snapshot-ring teachers), and the multi-run evaluation protocol that
//! reports last-epoch test error as mean and standard deviation.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, DatasetHalf, DatasetSplit};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossMethod};
use crate::matrix::Matrix;
use crate::nn::{self, LogitVector, ParamSet};
use crate::snapshots::{SnapshotConfig, SnapshotRing};

// Distinct seed streams for shuffling and augmentation so neither interferes
// with parameter initialization.
const SHUFFLE_SALT: u64 = 0x53485546;
const AUGMENT_SALT: u64 = 0x4155474d;

/// Snapshot-ring geometry as configured (interval in epochs); the step
/// interval is derived once the dataset fixes the steps per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSpec {
    pub kappa_epochs: f64,
    pub n: usize,
}

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

/// Full training configuration for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; input and output widths come from the dataset.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr_max")]
    pub lr_max: f64,
    #[serde(default = "default_lr_min")]
    pub lr_min: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<SnapshotSpec>,
    /// Frozen teacher parameters, required by the KD method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_checkpoint: Option<PathBuf>,
    /// Save model (and ring) checkpoints every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_interval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let rate_ok = |r: f64| r.is_finite() && r > 0.0;
        if !rate_ok(self.lr_max) || !rate_ok(self.lr_min) {
            return Err(Error::InvalidConfig("learning rates must be > 0".into()));
        }
        if self.lr_min > self.lr_max {
            return Err(Error::InvalidConfig(format!(
                "lr_min {} exceeds lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        self.loss.validate()?;
        match (&self.snapshot, self.loss.method.uses_snapshots()) {
            (None, true) => {
                return Err(Error::InvalidConfig(format!(
                    "{} requires a snapshot config",
                    self.loss.method.name()
                )))
            }
            (Some(_), false) => {
                return Err(Error::InvalidConfig(format!(
                    "{} does not use snapshots",
                    self.loss.method.name()
                )))
            }
            (Some(s), true) => {
                if s.n < 1 {
                    return Err(Error::InvalidConfig("snapshot n must be >= 1".into()));
                }
                if !s.kappa_epochs.is_finite() || s.kappa_epochs <= 0.0 {
                    return Err(Error::InvalidConfig("kappa_epochs must be > 0".into()));
                }
            }
            (None, false) => {}
        }
        match (&self.teacher_checkpoint, self.loss.method) {
            (None, LossMethod::Kd) => {
                return Err(Error::InvalidConfig("KD requires teacher_checkpoint".into()))
            }
            (Some(_), m) if m != LossMethod::Kd => {
                return Err(Error::InvalidConfig(format!(
                    "{} does not take teacher_checkpoint",
                    m.name()
                )))
            }
            _ => {}
        }
        Ok(())
    }
}

/// One epoch's record; error rates are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_err: f64,
    pub test_err: f64,
}

/// Full metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub final_test_err: f64,
    pub wall_seconds: f64,
}

impl RunMetrics {
    /// CSV body with the fixed `epoch,train_loss,train_err,test_err` header.
    /// Floats print in shortest round-trip form, so identical runs produce
    /// byte-identical text. Wall-clock time deliberately stays out.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_err,test_err\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_err, r.test_err
            ));
        }
        out
    }
}

/// Mean and standard deviation of final-epoch test error across runs.
/// `degenerate` flags aggregates computed from fewer than two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub degenerate: bool,
}

impl AggregateMetrics {
    /// Sample standard deviation (n - 1 denominator); a single run reports
    /// a flagged zero.
    pub fn from_final_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidData("no runs to aggregate".into()));
        }
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Ok(Self {
            mean,
            std,
            runs: n,
            degenerate: n < 2,
        })
    }

    /// Table-style `"27.43 (±0.10)"` formatting.
    pub fn formatted(&self) -> String {
        format!("{:.2} (±{:.2})", self.mean, self.std)
    }
}

/// Everything a run produces beyond its metrics.
#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub params: ParamSet,
    pub ring: Option<SnapshotRing>,
}

/// Result of [`train_protocol`]: per-run outcomes plus their aggregate.
#[derive(Debug)]
pub struct ProtocolResult {
    pub outcomes: Vec<TrainOutcome>,
    pub aggregate: AggregateMetrics,
}

impl ProtocolResult {
    pub fn run_metrics(&self) -> impl Iterator<Item = &RunMetrics> {
        self.outcomes.iter().map(|o| &o.metrics)
    }
}

/// Steps per epoch with the last partial batch kept.
pub fn steps_per_epoch(train_size: usize, batch_size: usize) -> usize {
    train_size.div_ceil(batch_size)
}

/// Cosine annealing between `lr_max` and `lr_min`:
/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2`,
/// with both endpoints pinned exactly.
pub fn lr_at(step: u64, total_steps: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > total_steps {
        return Err(Error::InvalidConfig(format!(
            "step {step} beyond total steps {total_steps}"
        )));
    }
    if step == 0 {
        return Ok(cfg.lr_max);
    }
    if step == total_steps {
        return Ok(cfg.lr_min);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// One SGD update: `v <- momentum * v + (grad + weight_decay * theta)`,
/// then `theta <- theta - lr * v`. Weight decay applies to weights and
/// biases alike.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    velocity: &mut ParamSet,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.topology() != grads.topology() || params.topology() != velocity.topology() {
        return Err(Error::DimensionMismatch(
            "params, grads, and velocity must share a topology".into(),
        ));
    }
    let momentum = cfg.momentum;
    let wd = cfg.weight_decay;
    for ((pl, gl), vl) in params
        .layers_mut()
        .iter_mut()
        .zip(grads.layers())
        .zip(velocity.layers_mut())
    {
        for ((p, &g), v) in pl
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(gl.weight.as_slice())
            .zip(vl.weight.as_mut_slice())
        {
            *v = momentum * *v + (g + wd * *p);
            *p -= lr * *v;
        }
        for ((p, &g), v) in pl.bias.iter_mut().zip(&gl.bias).zip(vl.bias.iter_mut()) {
            *v = momentum * *v + (g + wd * *p);
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Classification error in percent: argmax of the logits against the labels.
pub fn classification_error(params: &ParamSet, half: &DatasetHalf) -> Result<f64> {
    if half.is_empty() {
        return Err(Error::InvalidData("cannot evaluate an empty split".into()));
    }
    let (logits, _) = nn::forward(params, &half.features)?;
    let mut wrong = 0usize;
    for (r, &label) in half.labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        if best != label {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / half.len() as f64)
}

struct RunState {
    params: ParamSet,
    velocity: ParamSet,
    ring: Option<SnapshotRing>,
    teacher: Option<ParamSet>,
}

fn prepare(data: &DatasetSplit, cfg: &TrainConfig) -> Result<RunState> {
    cfg.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::InvalidData("dataset must have train and test rows".into()));
    }
    if data.class_count != cfg.loss.class_count {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes but loss config expects {}",
            data.class_count, cfg.loss.class_count
        )));
    }
    let mut topology = vec![data.feature_dim()];
    topology.extend_from_slice(&cfg.hidden);
    topology.push(data.class_count);
    let params = ParamSet::init(&topology, cfg.seed)?;
    let velocity = params.zeros_like();

    let ring = match &cfg.snapshot {
        Some(spec) => {
            let sc = SnapshotConfig {
                kappa_epochs: spec.kappa_epochs,
                n: spec.n,
                steps_per_epoch: steps_per_epoch(data.train.len(), cfg.batch_size),
            };
            Some(SnapshotRing::init(&params, &sc)?)
        }
        None => None,
    };

    let teacher = match &cfg.teacher_checkpoint {
        Some(path) => {
            let teacher = ParamSet::load(path)?;
            if teacher.input_dim() != data.feature_dim()
                || teacher.output_dim() != data.class_count
            {
                return Err(Error::InvalidConfig(format!(
                    "teacher maps {} -> {}, dataset needs {} -> {}",
                    teacher.input_dim(),
                    teacher.output_dim(),
                    data.feature_dim(),
                    data.class_count
                )));
            }
            Some(teacher)
        }
        None => None,
    };

    Ok(RunState {
        params,
        velocity,
        ring,
        teacher,
    })
}

fn gather_batch(half: &DatasetHalf, indices: &[usize]) -> (Matrix, Vec<usize>) {
    let dims = half.features.cols();
    let mut features = Vec::with_capacity(indices.len() * dims);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        features.extend_from_slice(half.features.row(i));
        labels.push(half.labels[i]);
    }
    let batch = Matrix::from_vec(indices.len(), dims, features).expect("gathered rows are valid");
    (batch, labels)
}

fn step_error(step: u64, source: Error) -> Error {
    Error::Step {
        step,
        source: Box::new(source),
    }
}

/// Runs the full loop and returns metrics, final parameters, and the final
/// ring state. Step order within a step `t` (1-based): ring tick, batch
/// gather and augment, student forward, teacher forwards, loss dispatch,
/// backward, SGD update at `lr_at(t - 1)`.
pub fn train_run_full(data: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut state = prepare(data, cfg)?;
    let per_epoch = steps_per_epoch(data.train.len(), cfg.batch_size);
    let total_steps = (cfg.epochs * per_epoch) as u64;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUGMENT_SALT);

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut t: u64 = 0;

    for epoch in 1..=cfg.epochs {
        // fresh seeded shuffle per epoch, partial last batch kept
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for batch_indices in order.chunks(cfg.batch_size) {
            t += 1;
            if let Some(ring) = state.ring.as_mut() {
                ring.tick(&state.params);
            }

            let (mut batch, labels) = gather_batch(&data.train, batch_indices);
            if !data.augment.is_off() {
                let shape = data.train.image_shape.ok_or_else(|| {
                    step_error(
                        t,
                        Error::InvalidConfig("augmentation needs an image shape".into()),
                    )
                })?;
                batch = augment_batch(&batch, &data.augment, shape, &mut augment_rng)
                    .map_err(|e| step_error(t, e))?;
            }

            let (logits, cache) = nn::forward(&state.params, &batch).map_err(|e| step_error(t, e))?;

            let teacher_logits: Vec<Matrix> = if let Some(ring) = &state.ring {
                ring.teacher_logits(&batch).map_err(|e| step_error(t, e))?
            } else if let Some(teacher) = &state.teacher {
                vec![nn::forward(teacher, &batch).map_err(|e| step_error(t, e))?.0]
            } else {
                Vec::new()
            };

            let batch_len = batch_indices.len();
            let mut d_logits = Matrix::zeros(batch_len, data.class_count);
            let mut batch_loss = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                let z = LogitVector::from_row(logits.row(i)).map_err(|e| step_error(t, e))?;
                let teachers: Vec<LogitVector> = teacher_logits
                    .iter()
                    .map(|m| LogitVector::from_row(m.row(i)))
                    .collect::<Result<_>>()
                    .map_err(|e| step_error(t, e))?;
                let result = losses::evaluate(label, &z, &teachers, &cfg.loss)
                    .map_err(|e| step_error(t, e))?;
                batch_loss += result.value / batch_len as f64;
                d_logits.row_mut(i).copy_from_slice(&result.grad_logits);
            }
            if !batch_loss.is_finite() {
                return Err(step_error(
                    t,
                    Error::NonFinite(format!("loss {batch_loss} is not finite")),
                ));
            }
            loss_sum += batch_loss;

            let grads =
                nn::backward(&state.params, &cache, &d_logits).map_err(|e| step_error(t, e))?;
            let lr = lr_at(t - 1, total_steps, cfg).map_err(|e| step_error(t, e))?;
            sgd_step(&mut state.params, &grads, &mut state.velocity, lr, cfg)
                .map_err(|e| step_error(t, e))?;
        }

        let train_err =
            classification_error(&state.params, &data.train).map_err(|e| step_error(t, e))?;
        let test_err =
            classification_error(&state.params, &data.test).map_err(|e| step_error(t, e))?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / per_epoch as f64,
            train_err,
            test_err,
        });

        if cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                state.params.save(&dir.join(format!("model_epoch{epoch}.bin")))?;
                if let Some(ring) = &state.ring {
                    ring.save(&dir.join(format!("ring_epoch{epoch}.bin")))?;
                }
            }
        }
    }

    let final_test_err = records.last().expect("epochs >= 1").test_err;
    Ok(TrainOutcome {
        metrics: RunMetrics {
            epochs: records,
            final_test_err,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        params: state.params,
        ring: state.ring,
    })
}

/// Runs the loop and returns just the metrics.
pub fn train_run(data: &DatasetSplit, cfg: &TrainConfig) -> Result<RunMetrics> {
    train_run_full(data, cfg).map(|o| o.metrics)
}

/// The evaluation protocol: `runs` seeded runs (seed, seed + 1, ..) and the
/// aggregate of their final-epoch test errors.
pub fn train_protocol(data: &DatasetSplit, cfg: &TrainConfig, runs: usize) -> Result<ProtocolResult> {
    if runs < 1 {
        return Err(Error::InvalidConfig("runs must be >= 1".into()));
    }
    let mut outcomes = Vec::with_capacity(runs);
    for k in 0..runs {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(k as u64);
        // periodic checkpoints from different runs must not clobber each other
        if let Some(dir) = &cfg.checkpoint_dir {
            run_cfg.checkpoint_dir = Some(dir.join(format!("run{}", k + 1)));
        }
        let outcome = train_run_full(data, &run_cfg).map_err(|e| Error::Run {
            run: k + 1,
            source: Box::new(e),
        })?;
        outcomes.push(outcome);
    }
    let errors: Vec<f64> = outcomes.iter().map(|o| o.metrics.final_test_err).collect();
    let aggregate = AggregateMetrics::from_final_errors(&errors)?;
    Ok(ProtocolResult { outcomes, aggregate })
}
