//! Drives the C ABI the way a foreign binding would: raw pointers, status
//! codes, and caller-owned buffers.

use std::ffi::{CStr, CString};
use std::ptr;

use mrkd_ffi::*;

fn c_path(path: &std::path::Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mrkd_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(mrkd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn params_lifecycle_and_forward() {
    let topology = [3usize, 5, 2];
    let mut params: *mut MrkdParams = ptr::null_mut();
    let status = unsafe { mrkd_params_init(topology.as_ptr(), topology.len(), 7, &mut params) };
    assert_eq!(status, MrkdStatus::Ok);
    assert!(!params.is_null());

    let mut input_dim = 0usize;
    let mut output_dim = 0usize;
    unsafe {
        assert_eq!(mrkd_params_input_dim(params, &mut input_dim), MrkdStatus::Ok);
        assert_eq!(mrkd_params_output_dim(params, &mut output_dim), MrkdStatus::Ok);
    }
    assert_eq!((input_dim, output_dim), (3, 2));

    let inputs = [0.5, -1.0, 0.25, 1.5, 0.0, -0.75];
    let mut logits = [0.0f64; 4];
    let status = unsafe {
        mrkd_forward(params, inputs.as_ptr(), 2, 3, logits.as_mut_ptr(), logits.len())
    };
    assert_eq!(status, MrkdStatus::Ok);
    assert!(logits.iter().all(|v| v.is_finite()));

    // same seed, fresh handle: identical logits
    let mut params2: *mut MrkdParams = ptr::null_mut();
    unsafe {
        assert_eq!(
            mrkd_params_init(topology.as_ptr(), topology.len(), 7, &mut params2),
            MrkdStatus::Ok
        );
    }
    let mut logits2 = [0.0f64; 4];
    unsafe {
        assert_eq!(
            mrkd_forward(params2, inputs.as_ptr(), 2, 3, logits2.as_mut_ptr(), 4),
            MrkdStatus::Ok
        );
        mrkd_params_free(params2);
    }
    assert_eq!(logits, logits2);

    // wrong output length is a dimension error
    let mut short = [0.0f64; 3];
    let status = unsafe { mrkd_forward(params, inputs.as_ptr(), 2, 3, short.as_mut_ptr(), 3) };
    assert_eq!(status, MrkdStatus::Dimension);
    assert!(last_error().contains("out_len"));

    unsafe { mrkd_params_free(params) };
}

#[test]
fn null_arguments_are_rejected() {
    let mut out: *mut MrkdParams = ptr::null_mut();
    let status = unsafe { mrkd_params_init(ptr::null(), 3, 0, &mut out) };
    assert_eq!(status, MrkdStatus::NullArgument);
    assert!(!last_error().is_empty());

    let topology = [2usize, 2];
    let status =
        unsafe { mrkd_params_init(topology.as_ptr(), topology.len(), 0, ptr::null_mut()) };
    assert_eq!(status, MrkdStatus::NullArgument);

    // degenerate topology is invalid, not a crash
    let one = [4usize];
    let status = unsafe { mrkd_params_init(one.as_ptr(), 1, 0, &mut out) };
    assert_eq!(status, MrkdStatus::Invalid);

    unsafe {
        mrkd_params_free(ptr::null_mut());
        mrkd_ring_free(ptr::null_mut());
    }
}

#[test]
fn params_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = c_path(&dir.path().join("model.bin"));

    let topology = [4usize, 6, 3];
    let mut params: *mut MrkdParams = ptr::null_mut();
    unsafe {
        assert_eq!(
            mrkd_params_init(topology.as_ptr(), topology.len(), 11, &mut params),
            MrkdStatus::Ok
        );
        assert_eq!(mrkd_params_save(params, path.as_ptr()), MrkdStatus::Ok);
    }

    let mut loaded: *mut MrkdParams = ptr::null_mut();
    unsafe {
        assert_eq!(mrkd_params_load(path.as_ptr(), &mut loaded), MrkdStatus::Ok);
    }

    let inputs = [0.1, 0.2, 0.3, 0.4];
    let mut a = [0.0f64; 3];
    let mut b = [0.0f64; 3];
    unsafe {
        assert_eq!(
            mrkd_forward(params, inputs.as_ptr(), 1, 4, a.as_mut_ptr(), 3),
            MrkdStatus::Ok
        );
        assert_eq!(
            mrkd_forward(loaded, inputs.as_ptr(), 1, 4, b.as_mut_ptr(), 3),
            MrkdStatus::Ok
        );
        mrkd_params_free(params);
        mrkd_params_free(loaded);
    }
    assert_eq!(a, b);

    let missing = CString::new("/nonexistent/mrkd/model.bin").unwrap();
    let mut out: *mut MrkdParams = ptr::null_mut();
    let status = unsafe { mrkd_params_load(missing.as_ptr(), &mut out) };
    assert_eq!(status, MrkdStatus::Io);
}

#[test]
fn loss_eval_matches_library_values() {
    // CE at the uniform point: value log(4), gradient q - p
    let class_count = 4usize;
    let z = [0.0f64; 4];
    let mut value = 0.0f64;
    let mut grad = [0.0f64; 4];
    let status = unsafe {
        mrkd_loss_eval(
            MrkdMethod::Ce,
            0.0,
            1.0,
            0.0,
            class_count,
            1,
            z.as_ptr(),
            ptr::null(),
            0,
            &mut value,
            grad.as_mut_ptr(),
        )
    };
    assert_eq!(status, MrkdStatus::Ok);
    assert!((value - 4.0f64.ln()).abs() < 1e-12);
    assert!((grad[1] - (0.25 - 1.0)).abs() < 1e-12);
    assert!((grad[0] - 0.25).abs() < 1e-12);

    // MrKD with two teachers; compare against a direct library call
    let student = [0.4, -0.2, 0.9, 0.1];
    let teachers = [0.5, 0.1, -0.4, 0.8, -0.3, 0.9, 0.2, 0.1];
    let mut ffi_value = 0.0f64;
    let mut ffi_grad = [0.0f64; 4];
    let status = unsafe {
        mrkd_loss_eval(
            MrkdMethod::MrKd,
            0.25,
            3.0,
            0.0,
            class_count,
            2,
            student.as_ptr(),
            teachers.as_ptr(),
            2,
            &mut ffi_value,
            ffi_grad.as_mut_ptr(),
        )
    };
    assert_eq!(status, MrkdStatus::Ok);

    let cfg = mrkd::losses::LossConfig {
        method: mrkd::losses::LossMethod::MrKd,
        alpha: 0.25,
        tau: 3.0,
        gamma: None,
        class_count,
    };
    let zl = mrkd::nn::LogitVector::new(student.to_vec()).unwrap();
    let tl: Vec<mrkd::nn::LogitVector> = teachers
        .chunks(4)
        .map(|c| mrkd::nn::LogitVector::new(c.to_vec()).unwrap())
        .collect();
    let expected = mrkd::losses::evaluate(2, &zl, &tl, &cfg).unwrap();
    assert_eq!(ffi_value, expected.value);
    assert_eq!(ffi_grad.to_vec(), expected.grad_logits);

    // TC variant without a usable gamma is invalid
    let status = unsafe {
        mrkd_loss_eval(
            MrkdMethod::LsrKdTc,
            0.1,
            3.0,
            0.0,
            class_count,
            0,
            student.as_ptr(),
            ptr::null(),
            0,
            &mut ffi_value,
            ffi_grad.as_mut_ptr(),
        )
    };
    assert_eq!(status, MrkdStatus::Invalid);
}

#[test]
fn ring_tick_shifts_on_interval_and_round_trips() {
    let topology = [2usize, 3, 2];
    let mut params: *mut MrkdParams = ptr::null_mut();
    unsafe {
        assert_eq!(
            mrkd_params_init(topology.as_ptr(), topology.len(), 3, &mut params),
            MrkdStatus::Ok
        );
    }

    let mut ring: *mut MrkdRing = ptr::null_mut();
    unsafe {
        assert_eq!(mrkd_ring_new(params, 2, 3, &mut ring), MrkdStatus::Ok);
    }
    let mut len = 0usize;
    unsafe {
        assert_eq!(mrkd_ring_len(ring, &mut len), MrkdStatus::Ok);
    }
    assert_eq!(len, 2);

    // shifts exactly at ticks 3 and 6
    let mut shifted_at = Vec::new();
    for t in 1..=6u64 {
        let mut shifted = false;
        unsafe {
            assert_eq!(mrkd_ring_tick(ring, params, &mut shifted), MrkdStatus::Ok);
        }
        if shifted {
            shifted_at.push(t);
        }
    }
    assert_eq!(shifted_at, vec![3, 6]);

    let inputs = [0.5, -0.5];
    // two copies, one sample, two outputs
    let mut teacher_logits = [0.0f64; 4];
    unsafe {
        assert_eq!(
            mrkd_ring_teacher_logits(
                ring,
                inputs.as_ptr(),
                1,
                2,
                teacher_logits.as_mut_ptr(),
                teacher_logits.len()
            ),
            MrkdStatus::Ok
        );
    }
    assert!(teacher_logits.iter().all(|v| v.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = c_path(&dir.path().join("ring.bin"));
    let mut reloaded: *mut MrkdRing = ptr::null_mut();
    unsafe {
        assert_eq!(mrkd_ring_save(ring, path.as_ptr()), MrkdStatus::Ok);
        assert_eq!(mrkd_ring_load(path.as_ptr(), &mut reloaded), MrkdStatus::Ok);
    }
    let mut teacher_logits2 = [0.0f64; 4];
    unsafe {
        assert_eq!(
            mrkd_ring_teacher_logits(
                reloaded,
                inputs.as_ptr(),
                1,
                2,
                teacher_logits2.as_mut_ptr(),
                4
            ),
            MrkdStatus::Ok
        );
        mrkd_ring_free(ring);
        mrkd_ring_free(reloaded);
        mrkd_params_free(params);
    }
    assert_eq!(teacher_logits, teacher_logits2);
}

#[test]
fn gradcheck_entry_point_reports_worst_error() {
    let mut worst = f64::NAN;
    let status = unsafe { mrkd_gradcheck(1e-6, 10, 42, &mut worst) };
    assert_eq!(status, MrkdStatus::Ok);
    assert!(worst.is_finite() && worst < 1e-6);

    // an absurd tolerance flags the run without failing it
    let status = unsafe { mrkd_gradcheck(1e-30, 5, 42, &mut worst) };
    assert_eq!(status, MrkdStatus::Tolerance);
    assert!(last_error().contains("tolerance"));
}

#[test]
fn train_json_runs_a_tiny_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{
        "dataset": {"type": "gaussian_mixture", "classes": 2, "dims": 3,
                    "train": 32, "test": 16, "separation": 8.0, "seed": 4},
        "train": {"hidden": [8], "epochs": 2, "batch_size": 16,
                  "loss": {"method": "CE"}},
        "runs": 1
    }"#;
    let spec_c = CString::new(spec).unwrap();
    let root_c = c_path(dir.path());
    let mut mean = f64::NAN;
    let mut std = f64::NAN;
    let status =
        unsafe { mrkd_train_json(spec_c.as_ptr(), root_c.as_ptr(), &mut mean, &mut std) };
    assert_eq!(status, MrkdStatus::Ok);
    assert!(mean.is_finite() && (0.0..=100.0).contains(&mean));
    assert_eq!(std, 0.0);
    assert!(dir.path().join("runs").exists());

    let bad = CString::new("{\"not\": \"a spec\"}").unwrap();
    let status = unsafe { mrkd_train_json(bad.as_ptr(), root_c.as_ptr(), &mut mean, &mut std) };
    assert_eq!(status, MrkdStatus::Format);
}

#[test]
fn header_exists_and_names_the_core_entry_points() {
    let header = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mrkd.h"),
    )
    .unwrap();
    for symbol in [
        "mrkd_params_init",
        "mrkd_forward",
        "mrkd_loss_eval",
        "mrkd_ring_new",
        "mrkd_ring_tick",
        "mrkd_train_json",
        "mrkd_gradcheck",
        "mrkd_last_error",
        "typedef struct MrkdParams MrkdParams;",
        "typedef struct MrkdRing MrkdRing;",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}
