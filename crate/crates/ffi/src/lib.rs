//! C ABI over the `fedpews` simulator.
//!
//! Objects cross the boundary as opaque handles (`FpDataset`, `FpRunLog`)
//! that the caller releases with the matching `*_free`. Every fallible call
//! returns an `FpStatus`; on failure `fp_last_error` holds a message for the
//! calling thread. Panics never unwind into C: they come back as
//! `FP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedpews::cli::parse_config;
use fedpews::data::{self, Dataset};
use fedpews::federation::run_experiment;
use fedpews::metrics::{self, RunLog};
use fedpews::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// A generated or loaded dataset.
pub struct FpDataset(Dataset);

/// The per-round log of one experiment run.
pub struct FpRunLog(RunLog);

/// One round of a run log. `accuracy` and `loss` are meaningful only when
/// `evaluated` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FpRoundRecord {
    pub round: u64,
    pub evaluated: bool,
    /// Global test accuracy in percent.
    pub accuracy: f64,
    pub loss: f64,
    pub elapsed_ms: f64,
    pub warmup: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: FpStatus, msg: impl Into<String>) -> FpStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> FpStatus {
    match e {
        Error::InvalidConfig { .. } => FpStatus::Config,
        Error::Io(_) => FpStatus::Io,
        Error::Format(_) => FpStatus::Format,
        _ => FpStatus::InvalidArgument,
    }
}

fn from_error(e: Error) -> FpStatus {
    let status = status_of(&e);
    fail(status, e.to_string())
}

/// Runs `f`, turning a panic into `FpStatus::Panic`.
fn guard(f: impl FnOnce() -> FpStatus) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(FpStatus::Panic, msg)
        }
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, FpStatus> {
    if s.is_null() {
        return Err(fail(FpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(FpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn boxed<T>(value: T, out: *mut *mut T) -> FpStatus {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    FpStatus::Ok
}

/// Message for the last failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Generates `n` synthetic samples (`n` must be a multiple of 16).
///
/// # Safety
/// `out` must be a valid pointer to write a handle into.
#[no_mangle]
pub unsafe extern "C" fn fp_dataset_generate(
    n: usize,
    seed: u64,
    cluster_std: f64,
    out: *mut *mut FpDataset,
) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        match data::gen_synthetic(n, seed, cluster_std) {
            Ok(ds) => boxed(FpDataset(ds), out),
            Err(e) => from_error(e),
        }
    })
}

/// Loads a dataset file written by `fp_dataset_write` or `fedpews gen-data`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_dataset_read(path: *const c_char, out: *mut *mut FpDataset) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) => return fail(FpStatus::Io, format!("{path}: {e}")),
        };
        match data::read_dataset(BufReader::new(file)) {
            Ok(ds) => boxed(FpDataset(ds), out),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fp_dataset_write(ds: *const FpDataset, path: *const c_char) -> FpStatus {
    guard(|| {
        let Some(ds) = ds.as_ref() else {
            return fail(FpStatus::NullPointer, "dataset is null");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let file = match File::create(path) {
            Ok(f) => f,
            Err(e) => return fail(FpStatus::Io, format!("{path}: {e}")),
        };
        match data::write_dataset(BufWriter::new(file), &ds.0) {
            Ok(()) => FpStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Sample count; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_dataset_len(ds: *const FpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Copies sample `index` into `features` (room for `features_len` values,
/// at least the feature dimension) and `label`.
///
/// # Safety
/// `ds` must be a live handle, `features` must point to `features_len`
/// writable doubles and `label` to a writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn fp_dataset_sample(
    ds: *const FpDataset,
    index: usize,
    features: *mut f64,
    features_len: usize,
    label: *mut u32,
) -> FpStatus {
    guard(|| {
        let Some(ds) = ds.as_ref() else {
            return fail(FpStatus::NullPointer, "dataset is null");
        };
        if features.is_null() || label.is_null() {
            return fail(FpStatus::NullPointer, "output buffer is null");
        }
        if index >= ds.0.len() {
            return fail(FpStatus::OutOfRange, format!("sample {index} of {}", ds.0.len()));
        }
        let f = ds.0.features(index);
        if features_len < f.len() {
            return fail(
                FpStatus::InvalidArgument,
                format!("feature buffer holds {features_len}, need {}", f.len()),
            );
        }
        ptr::copy_nonoverlapping(f.as_ptr(), features, f.len());
        *label = ds.0.label(index) as u32;
        FpStatus::Ok
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_dataset_free(ds: *mut FpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs the experiment described by `config_text` (the `key = value`
/// format of `fedpews run`) for a single `seed`. Nothing is written to disk.
///
/// # Safety
/// `config_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_run_experiment(
    config_text: *const c_char,
    seed: u64,
    out: *mut *mut FpRunLog,
) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        let text = match str_arg(config_text, "config") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match parse_config(text) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        match run_experiment(&cfg.for_seed(seed)) {
            Ok(log) => boxed(FpRunLog(log), out),
            Err(e) => from_error(e),
        }
    })
}

/// Number of recorded rounds; 0 for a null handle.
///
/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_runlog_rounds(log: *const FpRunLog) -> usize {
    log.as_ref().map_or(0, |l| l.0.records.len())
}

/// # Safety
/// `log` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_runlog_record(
    log: *const FpRunLog,
    index: usize,
    out: *mut FpRoundRecord,
) -> FpStatus {
    guard(|| {
        let Some(log) = log.as_ref() else {
            return fail(FpStatus::NullPointer, "run log is null");
        };
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        let Some(r) = log.0.records.get(index) else {
            return fail(FpStatus::OutOfRange, format!("round index {index} of {}", log.0.records.len()));
        };
        *out = FpRoundRecord {
            round: r.round as u64,
            evaluated: r.accuracy.is_some(),
            accuracy: r.accuracy.unwrap_or(f64::NAN),
            loss: r.loss.unwrap_or(f64::NAN),
            elapsed_ms: r.elapsed_ms,
            warmup: r.warmup,
        };
        FpStatus::Ok
    })
}

/// First round whose test accuracy reaches `target` percent, or 0 if the
/// run never does.
///
/// # Safety
/// `log` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fp_runlog_rounds_to_target(
    log: *const FpRunLog,
    target: f64,
    out: *mut u64,
) -> FpStatus {
    guard(|| {
        let Some(log) = log.as_ref() else {
            return fail(FpStatus::NullPointer, "run log is null");
        };
        if out.is_null() {
            return fail(FpStatus::NullPointer, "out is null");
        }
        if !(target > 0.0 && target <= 100.0) {
            return fail(FpStatus::InvalidArgument, format!("target {target} outside (0, 100]"));
        }
        *out = metrics::rounds_to_target(&log.0.records, target).map_or(0, |t| t as u64);
        FpStatus::Ok
    })
}

/// Hex SHA-256 of the final global parameters. Free with `fp_string_free`.
/// Null for a null handle.
///
/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_runlog_digest(log: *const FpRunLog) -> *mut c_char {
    log.as_ref()
        .and_then(|l| CString::new(l.0.digest.clone()).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `log` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_runlog_free(log: *mut FpRunLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
