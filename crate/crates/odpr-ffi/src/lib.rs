//! C ABI over the `odpr` crate: opaque handles for datasets and priority
//! weights, integer status codes, and a per-thread error message.
//!
//! Conventions:
//!
//! * every function tolerates null pointers and returns
//!   `ODPR_STATUS_NULL_POINTER` instead of crashing;
//! * fallible calls return an [`OdprStatus`]; on failure the out-pointer is
//!   left null and [`odpr_last_error_message`] describes what went wrong;
//! * handles returned through out-pointers are owned by the caller and must
//!   be released with the matching `_free` function;
//! * panics never unwind across the boundary — they surface as
//!   `ODPR_STATUS_PANIC`.
//!
//! The generated header lives at `include/odpr.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use odpr::envs::{sample_bandit_dataset, GaussianBandit};
use odpr::priority::{
    baseline_priority, iterate_odpr_a, load_weights, save_weights, scale_std, OdprConfig,
    PriorityKind,
};
use odpr::value::FitConfig;
use odpr::{Dataset, OdprError, PriorityWeights};

/// Result of every fallible call in this API.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OdprStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    /// Malformed binary or CSV input.
    Format = 5,
    /// A structural invariant failed (dimension mismatch, weights off the
    /// simplex, ...).
    Invariant = 6,
    /// A weight file does not belong to the dataset it was loaded against.
    Pairing = 7,
    Config = 8,
    /// Value or policy training diverged.
    Divergence = 9,
    Singular = 10,
    /// An internal panic was caught at the boundary.
    Panic = 11,
}

/// Priority family selector for [`OdprPriorityOptions::kind`].
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OdprPriorityKind {
    /// Iterative advantage priority: fit a value function, weight by linear
    /// advantage priority, refit under the new weights, repeat.
    Advantage = 0,
    /// Single-shot normalized trajectory-return priority.
    Return = 1,
}

/// Opaque transition dataset. Create with [`odpr_dataset_load`],
/// [`odpr_dataset_from_csv`] or [`odpr_dataset_generate_bandit`]; release
/// with [`odpr_dataset_free`].
pub struct OdprDataset {
    inner: Dataset,
}

/// Opaque per-transition priority weights (a probability vector paired to
/// the dataset it was computed from). Release with [`odpr_weights_free`].
pub struct OdprWeights {
    inner: PriorityWeights,
}

/// Knobs for [`odpr_weights_compute`]. Initialize with
/// [`odpr_priority_options_init`] and override selectively.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OdprPriorityOptions {
    /// One of the [`OdprPriorityKind`] values.
    pub kind: i32,
    /// Fit-then-reweight rounds of the advantage priority.
    pub iterations: u32,
    /// Target std of `N * w` for the final rescaling.
    pub sigma: f64,
    /// Baseline added to normalized returns (return priority only).
    pub p_base: f64,
    /// Nonzero: clip `N * w` below 1 up to 1 before the final rescaling.
    pub clip_below_one: i32,
    /// Discount used by the value fits.
    pub gamma: f64,
    /// TD steps per value fit.
    pub fit_steps: u32,
    /// Minibatch size per TD step.
    pub fit_batch_size: u32,
    pub fit_learning_rate: f64,
    /// Seeds both the value fits and their samplers.
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn remember(msg: String) {
    let mut bytes = msg.into_bytes();
    bytes.retain(|&b| b != 0);
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(bytes).expect("nul bytes stripped"));
}

fn fail(e: &OdprError) -> OdprStatus {
    remember(e.to_string());
    match e {
        OdprError::Io(_) => OdprStatus::Io,
        OdprError::Csv(_) | OdprError::Format { .. } => OdprStatus::Format,
        OdprError::Invariant(_) => OdprStatus::Invariant,
        OdprError::Pairing(_) => OdprStatus::Pairing,
        OdprError::Config { .. } => OdprStatus::Config,
        OdprError::Divergence { .. } => OdprStatus::Divergence,
        OdprError::Singular(_) => OdprStatus::Singular,
        OdprError::InvalidArgument(_) => OdprStatus::InvalidArgument,
    }
}

fn null_arg(what: &str) -> OdprStatus {
    remember(format!("{what} must not be null"));
    OdprStatus::NullPointer
}

/// Catch panics so they surface as a status instead of unwinding into C.
fn guarded(f: impl FnOnce() -> OdprStatus) -> OdprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            remember("internal panic".to_string());
            OdprStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, OdprStatus> {
    if p.is_null() {
        return Err(null_arg(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        remember(format!("{what} is not valid UTF-8"));
        OdprStatus::Utf8
    })
}

unsafe fn dataset_arg<'a>(d: *const OdprDataset) -> Result<&'a Dataset, OdprStatus> {
    d.as_ref().map(|h| &h.inner).ok_or_else(|| null_arg("dataset"))
}

unsafe fn weights_arg<'a>(w: *const OdprWeights) -> Result<&'a PriorityWeights, OdprStatus> {
    w.as_ref().map(|h| &h.inner).ok_or_else(|| null_arg("weights"))
}

unsafe fn give_dataset(out: *mut *mut OdprDataset, d: Dataset) {
    *out = Box::into_raw(Box::new(OdprDataset { inner: d }));
}

unsafe fn give_weights(out: *mut *mut OdprWeights, w: PriorityWeights) {
    *out = Box::into_raw(Box::new(OdprWeights { inner: w }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn odpr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Static human-readable name of a status code.
#[no_mangle]
pub extern "C" fn odpr_status_name(status: OdprStatus) -> *const c_char {
    let name: &[u8] = match status {
        OdprStatus::Ok => b"ok\0",
        OdprStatus::NullPointer => b"null pointer\0",
        OdprStatus::Utf8 => b"invalid utf-8\0",
        OdprStatus::InvalidArgument => b"invalid argument\0",
        OdprStatus::Io => b"io error\0",
        OdprStatus::Format => b"format error\0",
        OdprStatus::Invariant => b"invariant violated\0",
        OdprStatus::Pairing => b"dataset pairing mismatch\0",
        OdprStatus::Config => b"config error\0",
        OdprStatus::Divergence => b"training diverged\0",
        OdprStatus::Singular => b"singular system\0",
        OdprStatus::Panic => b"internal panic\0",
    };
    name.as_ptr() as *const c_char
}

/// Message describing the most recent failure on the calling thread, or an
/// empty string. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn odpr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a dataset from its binary file format.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_load(
    path: *const c_char,
    out: *mut *mut OdprDataset,
) -> OdprStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        *out = std::ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Dataset::load(path) {
            Ok(d) => {
                give_dataset(out, d);
                OdprStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a dataset from headered CSV: columns `state_0..`, `action_0..`,
/// `reward`, `next_state_0..`, `terminal` and optionally `trajectory`.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_from_csv(
    path: *const c_char,
    out: *mut *mut OdprDataset,
) -> OdprStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        *out = std::ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Dataset::from_csv(path) {
            Ok(d) => {
                give_dataset(out, d);
                OdprStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Sample the four-mode Gaussian bandit dataset: `per_mode` single-step
/// trajectories around each mode, deterministic in `seed`.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_generate_bandit(
    per_mode: usize,
    seed: u64,
    out: *mut *mut OdprDataset,
) -> OdprStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        *out = std::ptr::null_mut();
        match sample_bandit_dataset(&GaussianBandit::default(), per_mode, seed) {
            Ok(d) => {
                give_dataset(out, d);
                OdprStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Write a dataset to its binary file format.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_save(
    dataset: *const OdprDataset,
    path: *const c_char,
) -> OdprStatus {
    guarded(|| {
        let d = match dataset_arg(dataset) {
            Ok(d) => d,
            Err(s) => return s,
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match d.save(path) {
            Ok(()) => OdprStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Number of transitions; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_len(dataset: *const OdprDataset) -> usize {
    dataset.as_ref().map_or(0, |h| h.inner.len())
}

/// State dimensionality; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_state_dim(dataset: *const OdprDataset) -> usize {
    dataset.as_ref().map_or(0, |h| h.inner.state_dim())
}

/// Action dimensionality; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_action_dim(dataset: *const OdprDataset) -> usize {
    dataset.as_ref().map_or(0, |h| h.inner.action_dim())
}

/// Release a dataset handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn odpr_dataset_free(dataset: *mut OdprDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fill `options` with the library defaults (advantage kind, 4 iterations,
/// sigma 2, discount 0.99, 20000 TD steps of batch 256 at 1e-3, seed 0).
#[no_mangle]
pub unsafe extern "C" fn odpr_priority_options_init(
    options: *mut OdprPriorityOptions,
) -> OdprStatus {
    guarded(|| {
        if options.is_null() {
            return null_arg("options");
        }
        let cfg = OdprConfig::default();
        let fit = FitConfig::default();
        *options = OdprPriorityOptions {
            kind: OdprPriorityKind::Advantage as i32,
            iterations: cfg.iterations as u32,
            sigma: cfg.sigma,
            p_base: cfg.p_base,
            clip_below_one: cfg.clip_below_one as i32,
            gamma: fit.gamma,
            fit_steps: fit.steps as u32,
            fit_batch_size: fit.batch_size as u32,
            fit_learning_rate: fit.learning_rate,
            seed: fit.seed,
        };
        OdprStatus::Ok
    })
}

/// Compute priority weights for `dataset` under `options`. The result is a
/// probability vector over transitions, rescaled so `N * w` has std
/// `options->sigma`.
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_compute(
    dataset: *const OdprDataset,
    options: *const OdprPriorityOptions,
    out: *mut *mut OdprWeights,
) -> OdprStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        *out = std::ptr::null_mut();
        let d = match dataset_arg(dataset) {
            Ok(d) => d,
            Err(s) => return s,
        };
        let o = match options.as_ref() {
            Some(o) => o,
            None => return null_arg("options"),
        };
        let cfg = OdprConfig {
            iterations: o.iterations as usize,
            sigma: o.sigma,
            p_base: o.p_base,
            clip_below_one: o.clip_below_one != 0,
        };
        let fit = FitConfig {
            gamma: o.gamma,
            steps: o.fit_steps as usize,
            batch_size: o.fit_batch_size as usize,
            learning_rate: o.fit_learning_rate,
            seed: o.seed,
            ..FitConfig::default()
        };
        let computed = if o.kind == OdprPriorityKind::Advantage as i32 {
            iterate_odpr_a(d, &cfg, &fit).map(|run| run.weights)
        } else if o.kind == OdprPriorityKind::Return as i32 {
            baseline_priority(d, &PriorityKind::Return, None, o.gamma, o.p_base)
                .and_then(|raw| scale_std(&raw, o.sigma))
        } else {
            remember(format!("unknown priority kind {}", o.kind));
            return OdprStatus::InvalidArgument;
        };
        match computed {
            Ok(w) => {
                give_weights(out, w);
                OdprStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of weights; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_len(weights: *const OdprWeights) -> usize {
    weights.as_ref().map_or(0, |h| h.inner.len())
}

/// Copy the weight vector into `buf`, which must hold exactly
/// `odpr_weights_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_copy(
    weights: *const OdprWeights,
    buf: *mut f64,
    len: usize,
) -> OdprStatus {
    guarded(|| {
        let w = match weights_arg(weights) {
            Ok(w) => w,
            Err(s) => return s,
        };
        if buf.is_null() {
            return null_arg("buf");
        }
        if len != w.len() {
            remember(format!("buffer holds {len} entries, weights hold {}", w.len()));
            return OdprStatus::InvalidArgument;
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(w.as_slice());
        OdprStatus::Ok
    })
}

/// Std of `N * w`; NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_nw_std(weights: *const OdprWeights) -> f64 {
    weights.as_ref().map_or(f64::NAN, |h| h.inner.nw_std())
}

/// Effective sample size `1 / sum(w^2)`; NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_ess(weights: *const OdprWeights) -> f64 {
    weights.as_ref().map_or(f64::NAN, |h| h.inner.ess())
}

/// Write weights to disk, paired to `dataset` by a content hash so they can
/// only be loaded back against the same data.
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_save(
    weights: *const OdprWeights,
    dataset: *const OdprDataset,
    path: *const c_char,
) -> OdprStatus {
    guarded(|| {
        let w = match weights_arg(weights) {
            Ok(w) => w,
            Err(s) => return s,
        };
        let d = match dataset_arg(dataset) {
            Ok(d) => d,
            Err(s) => return s,
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_weights(w, d, path) {
            Ok(()) => OdprStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Load weights written by [`odpr_weights_save`], verifying they belong to
/// `dataset` (`ODPR_STATUS_PAIRING` otherwise).
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_load(
    path: *const c_char,
    dataset: *const OdprDataset,
    out: *mut *mut OdprWeights,
) -> OdprStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        *out = std::ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let d = match dataset_arg(dataset) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match load_weights(path, d) {
            Ok(w) => {
                give_weights(out, w);
                OdprStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a weights handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn odpr_weights_free(weights: *mut OdprWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}
