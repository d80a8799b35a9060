//! Finite-difference verification of every analytic loss gradient.
//!
//! For each loss variant a batch of random cases is drawn, the analytic
//! gradient is compared against central differences of the loss value, and
//! the worst normalized error is reported. The error metric is
//! `max_m |a_m - f_m| / max(1, |a|_inf, |f|_inf)`, which stays meaningful
//! when individual gradient entries pass through zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{self, LossConfig, LossMethod};
use crate::nn::LogitVector;

/// Default step size for central differences on logits.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Default pass threshold on the normalized gradient error.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// The variants covered by a default check run.
pub const CHECKED_METHODS: [LossMethod; 7] = [
    LossMethod::Ce,
    LossMethod::Kd,
    LossMethod::Lsr,
    LossMethod::LsrKd,
    LossMethod::LsrKdTc,
    LossMethod::MrKd,
    LossMethod::MrKdTc,
];

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Random cases per (variant, class count) pair.
    pub cases: usize,
    pub class_counts: Vec<usize>,
    pub tolerance: f64,
    pub step: f64,
    pub seed: u64,
    /// Snapshot teacher count used for the MrKD variants.
    pub teacher_count: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            cases: 100,
            class_counts: vec![2, 10, 100],
            tolerance: DEFAULT_TOLERANCE,
            step: DEFAULT_STEP,
            seed: 42,
            teacher_count: 3,
        }
    }
}

/// Worst error observed for one (variant, class count) cell.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub method: LossMethod,
    pub class_count: usize,
    pub cases: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub results: Vec<VariantResult>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.results
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_err < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&VariantResult> {
        self.results
            .iter()
            .filter(|r| r.max_rel_err >= self.tolerance)
            .collect()
    }

    /// Plain-text table, one row per (variant, class count).
    pub fn table(&self) -> String {
        let mut out = String::from("variant    classes  cases  max_rel_err   status\n");
        for r in &self.results {
            let status = if r.max_rel_err < self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "{:<10} {:>7}  {:>5}  {:.3e}     {status}\n",
                r.method.name(),
                r.class_count,
                r.cases,
                r.max_rel_err
            ));
        }
        out
    }
}

/// Central differences of `f` around `point`: entry `i` is
/// `(f(point + h e_i) - f(point - h e_i)) / 2h`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            probe[i] = point[i] + h;
            let up = f(&probe);
            probe[i] = point[i] - h;
            let down = f(&probe);
            probe[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Normalized worst-entry error between two gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = analytic
        .iter()
        .chain(numeric)
        .fold(1.0f64, |a, &g| a.max(g.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs())
        .fold(0.0, f64::max)
        / norm
}

/// Checks one (value fn, analytic gradient) pair at `point` and returns the
/// normalized error. Also the hook used by the mutation tests: feeding a
/// wrong gradient must produce an error above tolerance.
pub fn check_pair<F: Fn(&[f64]) -> f64>(
    value_fn: F,
    analytic: &[f64],
    point: &[f64],
    step: f64,
) -> f64 {
    let numeric = central_difference(value_fn, point, step);
    relative_error(analytic, &numeric)
}

fn random_logits(rng: &mut ChaCha8Rng, m: usize) -> LogitVector {
    let z: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
    LogitVector::new(z).expect("generated logits are valid")
}

fn random_case(
    rng: &mut ChaCha8Rng,
    method: LossMethod,
    m: usize,
    teacher_count: usize,
) -> (usize, LogitVector, Vec<LogitVector>, LossConfig) {
    let class = rng.random_range(0..m);
    let z = random_logits(rng, m);
    let teachers = match method {
        LossMethod::Kd => vec![random_logits(rng, m)],
        LossMethod::MrKd | LossMethod::MrKdTc => (0..teacher_count)
            .map(|_| random_logits(rng, m))
            .collect(),
        _ => Vec::new(),
    };
    let alpha = rng.random_range(0.05..0.95);
    let tau = rng.random_range(0.5..8.0);
    let gamma = if method.is_tc() {
        // strictly above 1/M so the corrected teacher favors the true class
        let lo = 1.0 / m as f64;
        Some(rng.random_range(lo + 0.01 * (1.0 - lo)..0.95))
    } else {
        None
    };
    let cfg = LossConfig {
        method,
        alpha,
        tau,
        gamma,
        class_count: m,
    };
    (class, z, teachers, cfg)
}

/// Runs the full sweep. Deterministic for a fixed seed.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.cases < 1 {
        return Err(crate::error::Error::InvalidConfig(
            "gradcheck needs at least one case per variant".into(),
        ));
    }
    if opts.class_counts.is_empty() || opts.class_counts.iter().any(|&m| m < 2) {
        return Err(crate::error::Error::InvalidConfig(
            "class counts must all be >= 2".into(),
        ));
    }
    if opts.teacher_count < 1 {
        return Err(crate::error::Error::InvalidConfig(
            "teacher_count must be >= 1".into(),
        ));
    }
    if !opts.step.is_finite() || opts.step <= 0.0 {
        return Err(crate::error::Error::InvalidConfig(
            "finite-difference step must be > 0".into(),
        ));
    }
    let mut results = Vec::new();
    for &method in &CHECKED_METHODS {
        for &m in &opts.class_counts {
            let mut rng =
                ChaCha8Rng::seed_from_u64(opts.seed ^ ((m as u64) << 8) ^ method_salt(method));
            let mut worst = 0.0f64;
            for _ in 0..opts.cases {
                let (class, z, teachers, cfg) = random_case(&mut rng, method, m, opts.teacher_count);
                let analytic = losses::evaluate(class, &z, &teachers, &cfg)?.grad_logits;
                let err = check_pair(
                    |zs| {
                        let zl = LogitVector::new(zs.to_vec()).expect("perturbed logits valid");
                        losses::evaluate(class, &zl, &teachers, &cfg)
                            .expect("loss evaluates")
                            .value
                    },
                    &analytic,
                    z.as_slice(),
                    opts.step,
                );
                worst = worst.max(err);
            }
            results.push(VariantResult {
                method,
                class_count: m,
                cases: opts.cases,
                max_rel_err: worst,
            });
        }
    }
    Ok(GradcheckReport {
        results,
        tolerance: opts.tolerance,
    })
}

fn method_salt(method: LossMethod) -> u64 {
    CHECKED_METHODS
        .iter()
        .position(|&m| m == method)
        .unwrap_or(0) as u64
        * 0x9e37_79b9
}
