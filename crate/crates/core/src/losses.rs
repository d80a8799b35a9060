//! Classification losses and teacher transforms, with analytic gradients.
//!
//! All variants share the same skeleton: a hard cross-entropy term against
//! the one-hot label at temperature 1, plus a weighted KL term against some
//! teacher distribution at temperature `tau`. They differ in where the
//! teacher comes from (a real model, a uniform distribution, a corrected
//! uniform, or snapshot copies) and in the scale applied to the KL term
//! (`tau^2` for KD and MrKD, `tau` for the smoothed variants and MrKD-TC).
//!
//! Gradients are with respect to the student logits only; every teacher
//! distribution is treated as a constant. Per-sample results are combined by
//! the caller (the trainer uses the batch mean).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LogitVector;

/// Probabilities below this are clamped inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Loss variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMethod {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "LSR")]
    Lsr,
    #[serde(rename = "KD")]
    Kd,
    #[serde(rename = "LsrKD")]
    LsrKd,
    #[serde(rename = "LsrKD-TC")]
    LsrKdTc,
    #[serde(rename = "MrKD")]
    MrKd,
    #[serde(rename = "MrKD-TC")]
    MrKdTc,
}

impl LossMethod {
    pub fn name(self) -> &'static str {
        match self {
            LossMethod::Ce => "CE",
            LossMethod::Lsr => "LSR",
            LossMethod::Kd => "KD",
            LossMethod::LsrKd => "LsrKD",
            LossMethod::LsrKdTc => "LsrKD-TC",
            LossMethod::MrKd => "MrKD",
            LossMethod::MrKdTc => "MrKD-TC",
        }
    }

    /// True for the variants whose teacher has its true-class mass pinned.
    pub fn is_tc(self) -> bool {
        matches!(self, LossMethod::LsrKdTc | LossMethod::MrKdTc)
    }

    /// True for the variants fed by snapshot-ring teachers.
    pub fn uses_snapshots(self) -> bool {
        matches!(self, LossMethod::MrKd | LossMethod::MrKdTc)
    }
}

/// Method plus its hyperparameters. `gamma` must be present exactly for the
/// TC variants and must exceed `1 / class_count` so the corrected teacher
/// favors the true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub method: LossMethod,
    pub alpha: f64,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub class_count: usize,
}

impl LossConfig {
    /// Baseline configuration per method: MrKD family defaults to
    /// `alpha 0.25, tau 3`, the smoothed family to `alpha 0.1, tau 3`.
    /// TC variants have no default `gamma`; callers must set it.
    pub fn defaults_for(method: LossMethod, class_count: usize) -> Self {
        let (alpha, tau) = match method {
            LossMethod::Ce => (0.0, 1.0),
            LossMethod::Lsr | LossMethod::LsrKd | LossMethod::LsrKdTc => (0.1, 3.0),
            LossMethod::Kd | LossMethod::MrKd | LossMethod::MrKdTc => (0.25, 3.0),
        };
        let tau = if method == LossMethod::Lsr { 1.0 } else { tau };
        Self {
            method,
            alpha,
            tau,
            gamma: None,
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "class_count must be >= 2, got {}",
                self.class_count
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        match (self.method.is_tc(), self.gamma) {
            (true, None) => {
                return Err(Error::InvalidConfig(format!(
                    "{} requires gamma",
                    self.method.name()
                )))
            }
            (true, Some(g)) => {
                if !(g > 0.0 && g < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "gamma must lie in (0, 1), got {g}"
                    )));
                }
                if g < 1.0 / self.class_count as f64 {
                    return Err(Error::InvalidConfig(format!(
                        "gamma {g} must be at least 1/{} so the teacher favors the true class",
                        self.class_count
                    )));
                }
            }
            (false, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "{} does not take gamma",
                    self.method.name()
                )))
            }
            (false, None) => {}
        }
        Ok(())
    }
}

/// Normalized class distribution: non-negative entries summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::InvalidData(format!(
                "probability vector needs at least 2 classes, got {}",
                q.len()
            )));
        }
        if !q.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidData(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(q))
    }

    pub fn one_hot(class: usize, class_count: usize) -> Result<Self> {
        if class >= class_count {
            return Err(Error::InvalidData(format!(
                "class {class} out of range for {class_count} classes"
            )));
        }
        let mut q = vec![0.0; class_count];
        q[class] = 1.0;
        Self::new(q)
    }

    pub fn uniform(class_count: usize) -> Result<Self> {
        let q = vec![1.0 / class_count as f64; class_count];
        Self::new(q)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest entry (ties go to the lowest index).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-sample loss value and its gradient with respect to the student logits.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grad_logits: Vec<f64>,
}

/// Temperature softmax `q_m = exp(z_m / tau) / sum_i exp(z_i / tau)`,
/// computed with max subtraction for stability.
pub fn softmax_t(z: &LogitVector, tau: f64) -> Result<ProbVector> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    let z = z.as_slice();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = z.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = q.iter().sum();
    for v in &mut q {
        *v /= sum;
    }
    ProbVector::new(q)
}

/// Cross-entropy `-sum_m p_m log q_m`, with `q` clamped at [`PROB_FLOOR`]
/// inside the logarithm.
pub fn cross_entropy(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_len(p, q)?;
    let mut total = 0.0;
    for (&pm, &qm) in p.as_slice().iter().zip(q.as_slice()) {
        if pm > 0.0 {
            total -= pm * qm.max(PROB_FLOOR).ln();
        }
    }
    Ok(total)
}

/// KL divergence `sum_m qhat_m log(qhat_m / q_m)`; zero-probability teacher
/// entries contribute nothing, other logarithm arguments are clamped at
/// [`PROB_FLOOR`].
pub fn kl_div(qhat: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_len(qhat, q)?;
    let mut total = 0.0;
    for (&a, &b) in qhat.as_slice().iter().zip(q.as_slice()) {
        if a > 0.0 {
            total += a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln());
        }
    }
    Ok(total)
}

fn check_same_len(a: &ProbVector, b: &ProbVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_len(cfg: &LossConfig, z: &LogitVector) -> Result<()> {
    if z.len() != cfg.class_count {
        return Err(Error::DimensionMismatch(format!(
            "logits have {} classes, config expects {}",
            z.len(),
            cfg.class_count
        )));
    }
    Ok(())
}

fn expect_method(cfg: &LossConfig, method: LossMethod) -> Result<()> {
    if cfg.method != method {
        return Err(Error::InvalidConfig(format!(
            "expected method {}, config says {}",
            method.name(),
            cfg.method.name()
        )));
    }
    cfg.validate()
}

/// Hard cross-entropy against the one-hot label; gradient `q(1) - p`.
pub fn loss_ce(p: &ProbVector, z: &LogitVector) -> Result<LossResult> {
    let q1 = softmax_t(z, 1.0)?;
    check_same_len(p, &q1)?;
    let value = cross_entropy(p, &q1)?;
    let grad_logits = q1
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(&q, &pm)| q - pm)
        .collect();
    Ok(LossResult { value, grad_logits })
}

/// Distillation from one real teacher:
/// `(1-a) * CE(p, q(1)) + a * tau^2 * KL(qhat(tau), q(tau))`.
pub fn loss_kd(
    p: &ProbVector,
    z: &LogitVector,
    zhat: &LogitVector,
    cfg: &LossConfig,
) -> Result<LossResult> {
    expect_method(cfg, LossMethod::Kd)?;
    check_len(cfg, z)?;
    let teacher = softmax_t(zhat, cfg.tau)?;
    blended(p, z, &[teacher], cfg.alpha, cfg.tau, cfg.tau * cfg.tau)
}

/// Smoothed-label cross-entropy `CE((1-a) p + a u, q(1))`.
pub fn loss_lsr(p: &ProbVector, z: &LogitVector, alpha: f64) -> Result<LossResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let m = p.len();
    let u = 1.0 / m as f64;
    let mixed = ProbVector::new(
        p.as_slice()
            .iter()
            .map(|&pm| (1.0 - alpha) * pm + alpha * u)
            .collect(),
    )?;
    loss_ce(&mixed, z)
}

/// Smoothing as distillation from the uniform teacher at temperature `tau`,
/// with the KL term scaled by `tau` (not `tau^2`):
/// `(1-a) * CE(p, q(1)) + a * tau * KL(u, q(tau))`.
pub fn loss_lsrkd(p: &ProbVector, z: &LogitVector, cfg: &LossConfig) -> Result<LossResult> {
    expect_method(cfg, LossMethod::LsrKd)?;
    check_len(cfg, z)?;
    let u = ProbVector::uniform(cfg.class_count)?;
    blended(p, z, &[u], cfg.alpha, cfg.tau, cfg.tau)
}

/// Exact gradient of `KL(u, q(tau))` with respect to `z`:
/// `(q_m(tau) - u_m) / tau`.
pub fn kl_grad_uniform(z: &LogitVector, tau: f64) -> Result<Vec<f64>> {
    let q = softmax_t(z, tau)?;
    let u = 1.0 / z.len() as f64;
    Ok(q.as_slice().iter().map(|&qm| (qm - u) / tau).collect())
}

/// Uniform teacher with the true class pinned to `gamma`; the remaining mass
/// splits evenly: entry `c` is `gamma`, others `(1-gamma)/(M-1)`.
pub fn teacher_correct_uniform(class: usize, gamma: f64, class_count: usize) -> Result<ProbVector> {
    if class_count < 2 {
        return Err(Error::InvalidConfig(format!(
            "class_count must be >= 2, got {class_count}"
        )));
    }
    if class >= class_count {
        return Err(Error::InvalidData(format!(
            "class {class} out of range for {class_count} classes"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let rest = (1.0 - gamma) / (class_count - 1) as f64;
    let mut q = vec![rest; class_count];
    q[class] = gamma;
    ProbVector::new(q)
}

/// LsrKD with the corrected uniform teacher:
/// `(1-a) * CE(p, q(1)) + a * tau * KL(q', q(tau))`.
pub fn loss_lsrkd_tc(p: &ProbVector, z: &LogitVector, cfg: &LossConfig) -> Result<LossResult> {
    expect_method(cfg, LossMethod::LsrKdTc)?;
    check_len(cfg, z)?;
    let gamma = cfg.gamma.expect("validated");
    let teacher = teacher_correct_uniform(one_hot_class(p)?, gamma, cfg.class_count)?;
    blended(p, z, &[teacher], cfg.alpha, cfg.tau, cfg.tau)
}

/// Pins the true-class probability of a real teacher distribution to `gamma`
/// and rescales the rest proportionally: entry `c` becomes `gamma`, entry
/// `m != c` becomes `(1-gamma) * qhat_m / (1 - qhat_c)`.
///
/// When `qhat_c` is 1 within 1e-12 the proportional split is undefined and
/// the corrected uniform teacher is returned instead.
pub fn teacher_correct_output(qhat: &ProbVector, class: usize, gamma: f64) -> Result<ProbVector> {
    let m = qhat.len();
    if class >= m {
        return Err(Error::InvalidData(format!(
            "class {class} out of range for {m} classes"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let qc = qhat.as_slice()[class];
    // non-target mass, summed directly so the rescaled entries stay
    // normalized even when qc sits just below the degenerate threshold
    let rest: f64 = qhat
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != class)
        .map(|(_, &v)| v)
        .sum();
    if (1.0 - qc).abs() < 1e-12 || rest <= 0.0 {
        return teacher_correct_uniform(class, gamma, m);
    }
    let scale = (1.0 - gamma) / rest;
    let mut q: Vec<f64> = qhat.as_slice().iter().map(|&v| v * scale).collect();
    q[class] = gamma;
    ProbVector::new(q)
}

/// Memory-replay distillation over `n` snapshot teachers, KL term averaged
/// across copies and scaled by `tau^2`:
/// `(1-a) * CE(p, q(1)) + a * tau^2 * (1/n) sum_i KL(qhat_i(tau), q(tau))`.
pub fn loss_mrkd(
    p: &ProbVector,
    z: &LogitVector,
    zhats: &[LogitVector],
    cfg: &LossConfig,
) -> Result<LossResult> {
    expect_method(cfg, LossMethod::MrKd)?;
    check_len(cfg, z)?;
    if zhats.is_empty() {
        return Err(Error::InvalidData("MrKD needs at least one teacher".into()));
    }
    let teachers = zhats
        .iter()
        .map(|zh| softmax_t(zh, cfg.tau))
        .collect::<Result<Vec<_>>>()?;
    blended(p, z, &teachers, cfg.alpha, cfg.tau, cfg.tau * cfg.tau)
}

/// MrKD with every snapshot teacher passed through
/// [`teacher_correct_output`]; the KL scale drops to `tau`:
/// `(1-a) * CE(p, q(1)) + a * tau * (1/n) sum_i KL(qhat_i'(tau), q(tau))`.
pub fn loss_mrkd_tc(
    p: &ProbVector,
    z: &LogitVector,
    zhats: &[LogitVector],
    cfg: &LossConfig,
) -> Result<LossResult> {
    expect_method(cfg, LossMethod::MrKdTc)?;
    check_len(cfg, z)?;
    if zhats.is_empty() {
        return Err(Error::InvalidData("MrKD-TC needs at least one teacher".into()));
    }
    let gamma = cfg.gamma.expect("validated");
    let class = one_hot_class(p)?;
    let teachers = zhats
        .iter()
        .map(|zh| teacher_correct_output(&softmax_t(zh, cfg.tau)?, class, gamma))
        .collect::<Result<Vec<_>>>()?;
    blended(p, z, &teachers, cfg.alpha, cfg.tau, cfg.tau)
}

/// Dispatches on `cfg.method`. `teachers` carries the snapshot or external
/// teacher logits; methods that synthesize their own teacher reject a
/// non-empty list, and KD requires exactly one entry.
pub fn evaluate(
    true_class: usize,
    z: &LogitVector,
    teachers: &[LogitVector],
    cfg: &LossConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    check_len(cfg, z)?;
    let p = ProbVector::one_hot(true_class, cfg.class_count)?;
    match cfg.method {
        LossMethod::Ce | LossMethod::Lsr | LossMethod::LsrKd | LossMethod::LsrKdTc => {
            if !teachers.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "{} does not take teacher logits",
                    cfg.method.name()
                )));
            }
        }
        LossMethod::Kd => {
            if teachers.len() != 1 {
                return Err(Error::InvalidConfig(format!(
                    "KD takes exactly one teacher, got {}",
                    teachers.len()
                )));
            }
        }
        LossMethod::MrKd | LossMethod::MrKdTc => {
            if teachers.is_empty() {
                return Err(Error::InvalidData(format!(
                    "{} needs at least one teacher",
                    cfg.method.name()
                )));
            }
        }
    }
    match cfg.method {
        LossMethod::Ce => loss_ce(&p, z),
        LossMethod::Lsr => loss_lsr(&p, z, cfg.alpha),
        LossMethod::Kd => loss_kd(&p, z, &teachers[0], cfg),
        LossMethod::LsrKd => loss_lsrkd(&p, z, cfg),
        LossMethod::LsrKdTc => loss_lsrkd_tc(&p, z, cfg),
        LossMethod::MrKd => loss_mrkd(&p, z, teachers, cfg),
        LossMethod::MrKdTc => loss_mrkd_tc(&p, z, teachers, cfg),
    }
}

/// Shared core: `(1-alpha) * CE(p, q(1)) + alpha * kl_scale * mean_i
/// KL(teacher_i, q(tau))`, with the exact analytic gradient
/// `(1-alpha) * (q(1) - p) + alpha * kl_scale / tau * (q(tau) - mean_i teacher_i)`.
fn blended(
    p: &ProbVector,
    z: &LogitVector,
    teachers: &[ProbVector],
    alpha: f64,
    tau: f64,
    kl_scale: f64,
) -> Result<LossResult> {
    let q1 = softmax_t(z, 1.0)?;
    check_same_len(p, &q1)?;
    let qt = softmax_t(z, tau)?;
    let n = teachers.len() as f64;

    let ce = cross_entropy(p, &q1)?;
    let mut kl_mean = 0.0;
    for t in teachers {
        kl_mean += kl_div(t, &qt)? / n;
    }
    let value = (1.0 - alpha) * ce + alpha * kl_scale * kl_mean;

    let m = z.len();
    let mut teacher_mean = vec![0.0; m];
    for t in teachers {
        for (acc, &v) in teacher_mean.iter_mut().zip(t.as_slice()) {
            *acc += v / n;
        }
    }
    let grad_scale = alpha * kl_scale / tau;
    let grad_logits = (0..m)
        .map(|i| {
            (1.0 - alpha) * (q1.as_slice()[i] - p.as_slice()[i])
                + grad_scale * (qt.as_slice()[i] - teacher_mean[i])
        })
        .collect();
    Ok(LossResult { value, grad_logits })
}

fn one_hot_class(p: &ProbVector) -> Result<usize> {
    let c = p.argmax();
    if (p.as_slice()[c] - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidData(
            "teacher correction needs a one-hot label".into(),
        ));
    }
    Ok(c)
}
