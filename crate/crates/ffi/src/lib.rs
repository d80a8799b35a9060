//! C ABI over the mrkd training kit.
//!
//! Conventions:
//! - Every fallible function returns an [`MrkdStatus`]; `MRKD_STATUS_OK` is 0.
//! - Objects are opaque handles created by `_new`/`_init`/`_load` functions
//!   and released by the matching `_free`; `_free` accepts null.
//! - On failure, [`mrkd_last_error`] returns a thread-local message that
//!   stays valid until the next failing call on the same thread.
//! - Buffers are caller-allocated; lengths are element counts, not bytes.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use libc::c_char;

use mrkd::error::Error;
use mrkd::experiment::{run_experiment, ExperimentSpec};
use mrkd::gradcheck::{self, GradcheckOptions};
use mrkd::losses::{self, LossConfig, LossMethod};
use mrkd::matrix::Matrix;
use mrkd::nn::{self, LogitVector, ParamSet};
use mrkd::snapshots::{SnapshotConfig, SnapshotRing};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrkdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A configuration or input value was rejected.
    Invalid = 2,
    /// Incompatible shapes or lengths.
    Dimension = 3,
    Io = 4,
    /// A binary or JSON payload did not parse.
    Format = 5,
    /// A computation left the finite range.
    Numeric = 6,
    /// A verification ran to completion and found violations.
    Tolerance = 7,
    /// A string argument was not valid UTF-8.
    Utf8 = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

/// Loss variant selector for [`mrkd_loss_eval`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrkdMethod {
    Ce = 0,
    Lsr = 1,
    Kd = 2,
    LsrKd = 3,
    LsrKdTc = 4,
    MrKd = 5,
    MrKdTc = 6,
}

impl MrkdMethod {
    fn to_method(self) -> LossMethod {
        match self {
            MrkdMethod::Ce => LossMethod::Ce,
            MrkdMethod::Lsr => LossMethod::Lsr,
            MrkdMethod::Kd => LossMethod::Kd,
            MrkdMethod::LsrKd => LossMethod::LsrKd,
            MrkdMethod::LsrKdTc => LossMethod::LsrKdTc,
            MrkdMethod::MrKd => LossMethod::MrKd,
            MrkdMethod::MrKdTc => LossMethod::MrKdTc,
        }
    }
}

/// Opaque handle to a parameter set.
pub struct MrkdParams {
    inner: ParamSet,
}

/// Opaque handle to a snapshot ring.
pub struct MrkdRing {
    inner: SnapshotRing,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let owned = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn status_of(err: &Error) -> MrkdStatus {
    match err {
        Error::DimensionMismatch(_) => MrkdStatus::Dimension,
        Error::InvalidConfig(_) | Error::InvalidData(_) => MrkdStatus::Invalid,
        Error::NonFinite(_) => MrkdStatus::Numeric,
        Error::Format(_) | Error::Json(_) => MrkdStatus::Format,
        Error::Io(_) => MrkdStatus::Io,
        Error::Step { source, .. } | Error::Run { source, .. } => status_of(source),
    }
}

fn fail(err: &Error) -> MrkdStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn guard(body: impl FnOnce() -> MrkdStatus) -> MrkdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            MrkdStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable elements.
unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        if len == 0 {
            Some(&[])
        } else {
            None
        }
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// # Safety
/// `ptr` must be a valid, nul-terminated C string.
unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, MrkdStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(MrkdStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        MrkdStatus::Utf8
    })
}

fn null_arg(name: &str) -> MrkdStatus {
    set_error(&format!("{name} must not be null"));
    MrkdStatus::NullArgument
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn mrkd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn mrkd_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Seeded He-normal initialization. `topology` lists layer widths
/// `[input, hidden.., output]` and needs at least two entries.
///
/// # Safety
/// `topology` must point to `topology_len` readable values; `out` must be a
/// valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn mrkd_params_init(
    topology: *const usize,
    topology_len: usize,
    seed: u64,
    out: *mut *mut MrkdParams,
) -> MrkdStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let Some(widths) = slice_arg(topology, topology_len) else {
            return null_arg("topology");
        };
        match ParamSet::init(widths, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MrkdParams { inner }));
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Deep copy; the clone shares no storage with the original.
///
/// # Safety
/// `params` must be a live handle from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_params_clone(
    params: *const MrkdParams,
    out: *mut *mut MrkdParams,
) -> MrkdStatus {
    guard(|| {
        if params.is_null() {
            return null_arg("params");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let inner = (*params).inner.clone();
        *out = Box::into_raw(Box::new(MrkdParams { inner }));
        MrkdStatus::Ok
    })
}

/// Releases a handle; accepts null.
///
/// # Safety
/// `params` must be null or a handle produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrkd_params_free(params: *mut MrkdParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// # Safety
/// `params` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_params_input_dim(
    params: *const MrkdParams,
    out: *mut usize,
) -> MrkdStatus {
    guard(|| {
        if params.is_null() {
            return null_arg("params");
        }
        if out.is_null() {
            return null_arg("out");
        }
        *out = (*params).inner.input_dim();
        MrkdStatus::Ok
    })
}

/// # Safety
/// `params` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_params_output_dim(
    params: *const MrkdParams,
    out: *mut usize,
) -> MrkdStatus {
    guard(|| {
        if params.is_null() {
            return null_arg("params");
        }
        if out.is_null() {
            return null_arg("out");
        }
        *out = (*params).inner.output_dim();
        MrkdStatus::Ok
    })
}

/// Writes the versioned binary parameter format.
///
/// # Safety
/// `params` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mrkd_params_save(
    params: *const MrkdParams,
    path: *const c_char,
) -> MrkdStatus {
    guard(|| {
        if params.is_null() {
            return null_arg("params");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match (*params).inner.save(Path::new(path)) {
            Ok(()) => MrkdStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Reads the versioned binary parameter format.
///
/// # Safety
/// `path` must be a valid C string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_params_load(
    path: *const c_char,
    out: *mut *mut MrkdParams,
) -> MrkdStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match ParamSet::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MrkdParams { inner }));
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Forward pass of a row-major `batch x dim` input; writes `batch x M`
/// logits into `out_logits` (`out_len` must equal `batch * M`).
///
/// # Safety
/// Pointers must cover the stated element counts.
#[no_mangle]
pub unsafe extern "C" fn mrkd_forward(
    params: *const MrkdParams,
    inputs: *const f64,
    batch: usize,
    dim: usize,
    out_logits: *mut f64,
    out_len: usize,
) -> MrkdStatus {
    guard(|| {
        if params.is_null() {
            return null_arg("params");
        }
        let Some(data) = slice_arg(inputs, batch * dim) else {
            return null_arg("inputs");
        };
        if out_logits.is_null() {
            return null_arg("out_logits");
        }
        let p = &(*params).inner;
        let expected = batch * p.output_dim();
        if out_len != expected {
            set_error(&format!(
                "out_len {out_len} does not match batch * outputs = {expected}"
            ));
            return MrkdStatus::Dimension;
        }
        let matrix = match Matrix::from_vec(batch, dim, data.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        match nn::forward(p, &matrix) {
            Ok((logits, _)) => {
                std::ptr::copy_nonoverlapping(logits.as_slice().as_ptr(), out_logits, expected);
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Evaluates one per-sample loss. `teacher_logits` is a row-major
/// `teacher_count x class_count` buffer (null when the method takes no
/// teachers); `gamma` is read only by the TC variants. Writes the loss value
/// and its gradient with respect to the student logits (`class_count`
/// entries).
///
/// # Safety
/// Pointers must cover the stated element counts.
#[no_mangle]
pub unsafe extern "C" fn mrkd_loss_eval(
    method: MrkdMethod,
    alpha: f64,
    tau: f64,
    gamma: f64,
    class_count: usize,
    true_class: usize,
    student_logits: *const f64,
    teacher_logits: *const f64,
    teacher_count: usize,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> MrkdStatus {
    guard(|| {
        let Some(student) = slice_arg(student_logits, class_count) else {
            return null_arg("student_logits");
        };
        let Some(teachers_flat) = slice_arg(teacher_logits, teacher_count * class_count) else {
            return null_arg("teacher_logits");
        };
        if out_value.is_null() {
            return null_arg("out_value");
        }
        if out_grad.is_null() {
            return null_arg("out_grad");
        }
        let method = method.to_method();
        let cfg = LossConfig {
            method,
            alpha,
            tau,
            gamma: if method.is_tc() { Some(gamma) } else { None },
            class_count,
        };
        let z = match LogitVector::new(student.to_vec()) {
            Ok(z) => z,
            Err(e) => return fail(&e),
        };
        let teachers: Result<Vec<LogitVector>, Error> = teachers_flat
            .chunks(class_count)
            .map(|chunk| LogitVector::new(chunk.to_vec()))
            .collect();
        let teachers = match teachers {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        match losses::evaluate(true_class, &z, &teachers, &cfg) {
            Ok(result) => {
                *out_value = result.value;
                std::ptr::copy_nonoverlapping(
                    result.grad_logits.as_ptr(),
                    out_grad,
                    class_count,
                );
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Creates a ring of `n` deep copies of `params`, shifted every
/// `kappa_steps` ticks.
///
/// # Safety
/// `params` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_ring_new(
    params: *const MrkdParams,
    n: usize,
    kappa_steps: u64,
    out: *mut *mut MrkdRing,
) -> MrkdStatus {
    guard(|| {
        if params.is_null() {
            return null_arg("params");
        }
        if out.is_null() {
            return null_arg("out");
        }
        if kappa_steps == 0 {
            set_error("kappa_steps must be >= 1");
            return MrkdStatus::Invalid;
        }
        let cfg = SnapshotConfig {
            kappa_epochs: kappa_steps as f64,
            n,
            steps_per_epoch: 1,
        };
        match SnapshotRing::init(&(*params).inner, &cfg) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MrkdRing { inner }));
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Advances the ring by one step; `out_shifted` reports whether the copies
/// shifted. Call once per training step before the parameter update.
///
/// # Safety
/// Handles must be live; `out_shifted` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_ring_tick(
    ring: *mut MrkdRing,
    params: *const MrkdParams,
    out_shifted: *mut bool,
) -> MrkdStatus {
    guard(|| {
        if ring.is_null() {
            return null_arg("ring");
        }
        if params.is_null() {
            return null_arg("params");
        }
        if out_shifted.is_null() {
            return null_arg("out_shifted");
        }
        *out_shifted = (*ring).inner.tick(&(*params).inner);
        MrkdStatus::Ok
    })
}

/// Number of copies in the ring.
///
/// # Safety
/// `ring` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_ring_len(ring: *const MrkdRing, out: *mut usize) -> MrkdStatus {
    guard(|| {
        if ring.is_null() {
            return null_arg("ring");
        }
        if out.is_null() {
            return null_arg("out");
        }
        *out = (*ring).inner.len();
        MrkdStatus::Ok
    })
}

/// Forward passes of the batch through every copy. `out` receives
/// `n * batch * M` values, copy-major (all logits of copy 0 first).
///
/// # Safety
/// Pointers must cover the stated element counts.
#[no_mangle]
pub unsafe extern "C" fn mrkd_ring_teacher_logits(
    ring: *const MrkdRing,
    inputs: *const f64,
    batch: usize,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> MrkdStatus {
    guard(|| {
        if ring.is_null() {
            return null_arg("ring");
        }
        let Some(data) = slice_arg(inputs, batch * dim) else {
            return null_arg("inputs");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let r = &(*ring).inner;
        let n = r.len();
        let m = r.copies()[0].output_dim();
        let expected = n * batch * m;
        if out_len != expected {
            set_error(&format!(
                "out_len {out_len} does not match n * batch * outputs = {expected}"
            ));
            return MrkdStatus::Dimension;
        }
        let matrix = match Matrix::from_vec(batch, dim, data.to_vec()) {
            Ok(mtx) => mtx,
            Err(e) => return fail(&e),
        };
        match r.teacher_logits(&matrix) {
            Ok(all) => {
                for (i, logits) in all.iter().enumerate() {
                    std::ptr::copy_nonoverlapping(
                        logits.as_slice().as_ptr(),
                        out.add(i * batch * m),
                        batch * m,
                    );
                }
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes the ring checkpoint format.
///
/// # Safety
/// `ring` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mrkd_ring_save(ring: *const MrkdRing, path: *const c_char) -> MrkdStatus {
    guard(|| {
        if ring.is_null() {
            return null_arg("ring");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match (*ring).inner.save(Path::new(path)) {
            Ok(()) => MrkdStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Reads a ring checkpoint.
///
/// # Safety
/// `path` must be a valid C string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_ring_load(
    path: *const c_char,
    out: *mut *mut MrkdRing,
) -> MrkdStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match SnapshotRing::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MrkdRing { inner }));
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a ring handle; accepts null.
///
/// # Safety
/// `ring` must be null or a handle produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrkd_ring_free(ring: *mut MrkdRing) {
    if !ring.is_null() {
        drop(Box::from_raw(ring));
    }
}

/// Runs a full experiment from a JSON spec string under `out_root`; on
/// success writes the aggregate mean and standard deviation of final-epoch
/// test error.
///
/// # Safety
/// Strings must be valid C strings; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_train_json(
    spec_json: *const c_char,
    out_root: *const c_char,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> MrkdStatus {
    guard(|| {
        let json = match str_arg(spec_json) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let root = match str_arg(out_root) {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_mean.is_null() {
            return null_arg("out_mean");
        }
        if out_std.is_null() {
            return null_arg("out_std");
        }
        let spec = match ExperimentSpec::from_json(json) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match run_experiment(&spec, &PathBuf::from(root)) {
            Ok(artifacts) => {
                *out_mean = artifacts.record.mean;
                *out_std = artifacts.record.std.unwrap_or(0.0);
                MrkdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs the finite-difference gradient suite over all loss variants.
/// Writes the worst normalized error and returns `Tolerance` when it meets
/// or exceeds `tolerance`.
///
/// # Safety
/// `out_max_err` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mrkd_gradcheck(
    tolerance: f64,
    cases: usize,
    seed: u64,
    out_max_err: *mut f64,
) -> MrkdStatus {
    guard(|| {
        if out_max_err.is_null() {
            return null_arg("out_max_err");
        }
        let opts = GradcheckOptions {
            cases,
            tolerance,
            seed,
            ..GradcheckOptions::default()
        };
        match gradcheck::run(&opts) {
            Ok(report) => {
                *out_max_err = report.worst();
                if report.passed() {
                    MrkdStatus::Ok
                } else {
                    set_error(&format!(
                        "gradient error {:.3e} exceeds tolerance {tolerance:.1e}",
                        report.worst()
                    ));
                    MrkdStatus::Tolerance
                }
            }
            Err(e) => fail(&e),
        }
    })
}
