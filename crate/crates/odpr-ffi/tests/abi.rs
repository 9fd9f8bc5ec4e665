use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use odpr_ffi::*;

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

unsafe fn last_error() -> String {
    CStr::from_ptr(odpr_last_error_message()).to_string_lossy().into_owned()
}

fn fast_options() -> OdprPriorityOptions {
    let mut o = OdprPriorityOptions {
        kind: 0,
        iterations: 0,
        sigma: 0.0,
        p_base: 0.0,
        clip_below_one: 0,
        gamma: 0.0,
        fit_steps: 0,
        fit_batch_size: 0,
        fit_learning_rate: 0.0,
        seed: 0,
    };
    let status = unsafe { odpr_priority_options_init(&mut o) };
    assert_eq!(status, OdprStatus::Ok);
    o.iterations = 2;
    o.fit_steps = 400;
    o
}

#[test]
fn bandit_weights_roundtrip_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut ds: *mut OdprDataset = ptr::null_mut();
        assert_eq!(odpr_dataset_generate_bandit(50, 7, &mut ds), OdprStatus::Ok);
        assert_eq!(odpr_dataset_len(ds), 200);
        assert_eq!(odpr_dataset_state_dim(ds), 1);
        assert_eq!(odpr_dataset_action_dim(ds), 2);

        let ds_path = dir.path().join("bandit.ds");
        assert_eq!(odpr_dataset_save(ds, c_path(&ds_path).as_ptr()), OdprStatus::Ok);
        let mut reloaded: *mut OdprDataset = ptr::null_mut();
        assert_eq!(odpr_dataset_load(c_path(&ds_path).as_ptr(), &mut reloaded), OdprStatus::Ok);
        assert_eq!(odpr_dataset_len(reloaded), 200);

        let opts = fast_options();
        let mut w: *mut OdprWeights = ptr::null_mut();
        assert_eq!(odpr_weights_compute(ds, &opts, &mut w), OdprStatus::Ok);
        assert_eq!(odpr_weights_len(w), 200);
        let mut buf = vec![0.0f64; 200];
        assert_eq!(odpr_weights_copy(w, buf.as_mut_ptr(), buf.len()), OdprStatus::Ok);
        assert!((buf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(odpr_weights_nw_std(w).is_finite() && odpr_weights_nw_std(w) > 0.0);
        assert!(odpr_weights_ess(w) > 1.0);

        // The ABI is a thin veneer: identical numbers to the core API.
        let core = odpr::priority::iterate_odpr_a(
            &odpr::envs::sample_bandit_dataset(&odpr::envs::GaussianBandit::default(), 50, 7)
                .unwrap(),
            &odpr::priority::OdprConfig {
                iterations: opts.iterations as usize,
                sigma: opts.sigma,
                p_base: opts.p_base,
                clip_below_one: false,
            },
            &odpr::value::FitConfig {
                steps: opts.fit_steps as usize,
                ..odpr::value::FitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(buf, core.weights.as_slice());

        let w_path = dir.path().join("bandit.wts");
        assert_eq!(odpr_weights_save(w, ds, c_path(&w_path).as_ptr()), OdprStatus::Ok);
        let mut w2: *mut OdprWeights = ptr::null_mut();
        assert_eq!(
            odpr_weights_load(c_path(&w_path).as_ptr(), reloaded, &mut w2),
            OdprStatus::Ok
        );
        let mut buf2 = vec![0.0f64; 200];
        assert_eq!(odpr_weights_copy(w2, buf2.as_mut_ptr(), buf2.len()), OdprStatus::Ok);
        assert_eq!(buf, buf2);

        // Same options, same seed: deterministic weights.
        let mut w3: *mut OdprWeights = ptr::null_mut();
        assert_eq!(odpr_weights_compute(reloaded, &opts, &mut w3), OdprStatus::Ok);
        let mut buf3 = vec![0.0f64; 200];
        assert_eq!(odpr_weights_copy(w3, buf3.as_mut_ptr(), buf3.len()), OdprStatus::Ok);
        assert_eq!(buf, buf3);

        odpr_weights_free(w);
        odpr_weights_free(w2);
        odpr_weights_free(w3);
        odpr_dataset_free(ds);
        odpr_dataset_free(reloaded);
    }
}

#[test]
fn return_kind_weights_favor_high_reward_modes() {
    unsafe {
        let mut ds: *mut OdprDataset = ptr::null_mut();
        assert_eq!(odpr_dataset_generate_bandit(25, 3, &mut ds), OdprStatus::Ok);
        let mut opts = fast_options();
        opts.kind = OdprPriorityKind::Return as i32;
        opts.p_base = 0.1;
        let mut w: *mut OdprWeights = ptr::null_mut();
        assert_eq!(odpr_weights_compute(ds, &opts, &mut w), OdprStatus::Ok);
        let n = odpr_weights_len(w);
        assert_eq!(n, 100);
        let mut buf = vec![0.0f64; n];
        assert_eq!(odpr_weights_copy(w, buf.as_mut_ptr(), n), OdprStatus::Ok);
        assert!((buf.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // Matches the core pipeline: return priority then spread rescaling.
        let d = odpr::envs::sample_bandit_dataset(&odpr::envs::GaussianBandit::default(), 25, 3)
            .unwrap();
        let raw = odpr::priority::baseline_priority(
            &d,
            &odpr::priority::PriorityKind::Return,
            None,
            opts.gamma,
            opts.p_base,
        )
        .unwrap();
        let core = odpr::priority::scale_std(&raw, opts.sigma).unwrap();
        assert_eq!(buf, core.as_slice());
        odpr_weights_free(w);
        odpr_dataset_free(ds);
    }
}

#[test]
fn pairing_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut ds: *mut OdprDataset = ptr::null_mut();
        let mut foreign: *mut OdprDataset = ptr::null_mut();
        assert_eq!(odpr_dataset_generate_bandit(30, 1, &mut ds), OdprStatus::Ok);
        assert_eq!(odpr_dataset_generate_bandit(30, 2, &mut foreign), OdprStatus::Ok);
        let opts = fast_options();
        let mut w: *mut OdprWeights = ptr::null_mut();
        assert_eq!(odpr_weights_compute(ds, &opts, &mut w), OdprStatus::Ok);
        let w_path = dir.path().join("paired.wts");
        assert_eq!(odpr_weights_save(w, ds, c_path(&w_path).as_ptr()), OdprStatus::Ok);

        let mut wrong: *mut OdprWeights = ptr::null_mut();
        let status = odpr_weights_load(c_path(&w_path).as_ptr(), foreign, &mut wrong);
        assert_eq!(status, OdprStatus::Pairing);
        assert!(wrong.is_null());
        assert!(last_error().contains("pairing"));

        odpr_weights_free(w);
        odpr_dataset_free(ds);
        odpr_dataset_free(foreign);
    }
}

#[test]
fn null_and_bad_arguments_return_statuses_not_crashes() {
    unsafe {
        assert_eq!(odpr_dataset_len(ptr::null()), 0);
        assert_eq!(odpr_dataset_state_dim(ptr::null()), 0);
        assert!(odpr_weights_nw_std(ptr::null()).is_nan());
        assert!(odpr_weights_ess(ptr::null()).is_nan());
        odpr_dataset_free(ptr::null_mut());
        odpr_weights_free(ptr::null_mut());

        let mut out: *mut OdprDataset = ptr::null_mut();
        assert_eq!(odpr_dataset_load(ptr::null(), &mut out), OdprStatus::NullPointer);
        assert_eq!(
            odpr_dataset_load(c_path(Path::new("/nope")).as_ptr(), ptr::null_mut()),
            OdprStatus::NullPointer
        );
        assert_eq!(odpr_priority_options_init(ptr::null_mut()), OdprStatus::NullPointer);

        // Missing file: io status plus a message naming the failure.
        assert_eq!(
            odpr_dataset_load(c_path(Path::new("/no/such/file.ds")).as_ptr(), &mut out),
            OdprStatus::Io
        );
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        // Non-UTF-8 path bytes.
        let bogus = CString::new(vec![0xffu8, 0xfe]).unwrap();
        assert_eq!(odpr_dataset_load(bogus.as_ptr(), &mut out), OdprStatus::Utf8);

        let mut ds: *mut OdprDataset = ptr::null_mut();
        assert_eq!(odpr_dataset_generate_bandit(10, 0, &mut ds), OdprStatus::Ok);
        let mut opts = fast_options();
        let mut w: *mut OdprWeights = ptr::null_mut();

        opts.kind = 9;
        assert_eq!(odpr_weights_compute(ds, &opts, &mut w), OdprStatus::InvalidArgument);
        assert!(last_error().contains("unknown priority kind"));

        opts.kind = 0;
        opts.sigma = 0.0;
        assert_eq!(odpr_weights_compute(ds, &opts, &mut w), OdprStatus::InvalidArgument);

        let opts = fast_options();
        assert_eq!(odpr_weights_compute(ds, &opts, &mut w), OdprStatus::Ok);
        let mut short = vec![0.0f64; 3];
        assert_eq!(
            odpr_weights_copy(w, short.as_mut_ptr(), short.len()),
            OdprStatus::InvalidArgument
        );

        odpr_weights_free(w);
        odpr_dataset_free(ds);
    }
}

#[test]
fn status_names_and_version_are_static_strings() {
    unsafe {
        assert_eq!(CStr::from_ptr(odpr_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
        assert_eq!(CStr::from_ptr(odpr_status_name(OdprStatus::Ok)).to_str().unwrap(), "ok");
        assert_eq!(
            CStr::from_ptr(odpr_status_name(OdprStatus::Pairing)).to_str().unwrap(),
            "dataset pairing mismatch"
        );
    }
}

/// End-to-end check of the generated header: compile a small C program
/// against `include/odpr.h`, link the cdylib, and run it. Skipped when no C
/// compiler or built library is available.
#[test]
fn c_program_links_and_runs_against_the_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include_dir = crate_dir.join("include");
    let lib_dir = crate_dir.join("../../target/debug");
    if !lib_dir.join("libodpr_ffi.so").exists() {
        eprintln!("skipping: cdylib not found at {}", lib_dir.display());
        return;
    }
    let cc = ["cc", "clang", "gcc"]
        .iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .copied();
    let Some(cc) = cc else {
        eprintln!("skipping: no C compiler on PATH");
        return;
    };

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "odpr.h"

int main(void) {
    OdprDataset *ds = NULL;
    if (odpr_dataset_generate_bandit(20, 5, &ds) != ODPR_STATUS_OK) return 1;
    if (odpr_dataset_len(ds) != 80) return 2;

    OdprPriorityOptions opts;
    if (odpr_priority_options_init(&opts) != ODPR_STATUS_OK) return 3;
    opts.iterations = 1;
    opts.fit_steps = 200;

    OdprWeights *w = NULL;
    if (odpr_weights_compute(ds, &opts, &w) != ODPR_STATUS_OK) {
        fprintf(stderr, "compute: %s\n", odpr_last_error_message());
        return 4;
    }
    double buf[80];
    if (odpr_weights_copy(w, buf, 80) != ODPR_STATUS_OK) return 5;
    double total = 0.0;
    for (int i = 0; i < 80; i++) total += buf[i];
    if (total < 0.999999 || total > 1.000001) return 6;
    if (strcmp(odpr_status_name(ODPR_STATUS_OK), "ok") != 0) return 7;

    odpr_weights_free(w);
    odpr_dataset_free(ds);
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();

    let exe = dir.path().join("smoke");
    let compile = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&include_dir)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lodpr_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        compile.status.success(),
        "C compile failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "smoke binary exited {:?}:\n{}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
