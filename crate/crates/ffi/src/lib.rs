//! C ABI over the `adele` crate.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`AdeleStatus`]; `ADELE_STATUS_OK` is 0.
//!   Results are written through out-pointers only on success.
//! * After a failure, [`adele_last_error_message`] describes it. The message
//!   belongs to the calling thread and stays valid until its next failing call.
//! * Datasets and runs are opaque handles released with their `_free` function.
//!   Strings returned through `char **` are released with [`adele_string_free`].
//! * Panics never cross the boundary; they surface as `ADELE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use adele::earlycurve::{self, FitOptions, FitResult};
use adele::grid::LabelMask;
use adele::io::RunConfig;
use adele::metrics;
use adele::synthgen::{self, Dataset};
use adele::trainer::{self, RunRecord};
use adele::Error;

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdeleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NotEnoughData = 4,
    NonFinite = 5,
    Infeasible = 6,
    BadMagic = 7,
    UnsupportedVersion = 8,
    Truncated = 9,
    CountMismatch = 10,
    Config = 11,
    MissingFile = 12,
    Io = 13,
    Json = 14,
    BufferTooSmall = 15,
    Panic = 99,
}

impl From<&Error> for AdeleStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ShapeMismatch(_) => AdeleStatus::ShapeMismatch,
            Error::InvalidArgument(_) => AdeleStatus::InvalidArgument,
            Error::NotEnoughData { .. } => AdeleStatus::NotEnoughData,
            Error::NonFinite(_) => AdeleStatus::NonFinite,
            Error::Infeasible(_) => AdeleStatus::Infeasible,
            Error::BadMagic { .. } => AdeleStatus::BadMagic,
            Error::UnsupportedVersion { .. } => AdeleStatus::UnsupportedVersion,
            Error::Truncated { .. } => AdeleStatus::Truncated,
            Error::CountMismatch(_) => AdeleStatus::CountMismatch,
            Error::Config(_) => AdeleStatus::Config,
            Error::MissingFile(_) => AdeleStatus::MissingFile,
            Error::Io(_) => AdeleStatus::Io,
            Error::Json(_) => AdeleStatus::Json,
        }
    }
}

/// Parameters of a fitted curve `a * (1 - exp(-b * t^c))`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdeleFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sse: f64,
    pub converged: bool,
    pub points_used: usize,
}

impl From<FitResult> for AdeleFit {
    fn from(f: FitResult) -> Self {
        AdeleFit { a: f.a, b: f.b, c: f.c, sse: f.sse, converged: f.converged, points_used: f.points_used }
    }
}

impl From<&AdeleFit> for FitResult {
    fn from(f: &AdeleFit) -> Self {
        FitResult { a: f.a, b: f.b, c: f.c, sse: f.sse, converged: f.converged, points_used: f.points_used }
    }
}

/// Opaque dataset handle.
pub struct AdeleDataset(Dataset);

/// Opaque handle to a finished training run.
pub struct AdeleRun(RunRecord);

struct Failure(AdeleStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(AdeleStatus::from(&e), e.to_string())
    }
}

impl Failure {
    fn null(what: &str) -> Self {
        Failure(AdeleStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Failure(AdeleStatus::InvalidArgument, msg.into())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdeleStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdeleStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            AdeleStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn in_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

fn give_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure::invalid("string contains NUL"))?;
    // SAFETY: the caller checked `out` for null.
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message for the last failure on this thread, or an empty string.
#[no_mangle]
pub extern "C" fn adele_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adele_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adele_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `a * (1 - exp(-b * t^c))`.
#[no_mangle]
pub extern "C" fn adele_curve_value(a: f64, b: f64, c: f64, t: f64) -> f64 {
    earlycurve::curve_value(a, b, c, t)
}

/// Fits the curve to `n` points `(t[i], y[i])` with `t >= 1`.
///
/// # Safety
/// `t` and `y` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adele_fit_curve(
    t: *const f64,
    y: *const f64,
    n: usize,
    min_points: usize,
    out: *mut AdeleFit,
) -> AdeleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ts = in_slice(t, n, "t")?;
        let ys = in_slice(y, n, "y")?;
        let points: Vec<(f64, f64)> = ts.iter().copied().zip(ys.iter().copied()).collect();
        let opts = FitOptions { min_points, ..Default::default() };
        *out = earlycurve::fit_points(&points, &opts)?.into();
        Ok(())
    })
}

/// Derivative of the fitted curve at `t`.
///
/// # Safety
/// `fit` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_curve_derivative(fit: *const AdeleFit, t: f64, out: *mut f64) -> AdeleStatus {
    guard(|| {
        let fit = in_ref(fit, "fit")?;
        *out_ref(out, "out")? = earlycurve::curve_derivative(&fit.into(), t);
        Ok(())
    })
}

/// Relative change of the slope between epoch 1 and `t`, and whether it exceeds `r`.
///
/// # Safety
/// `fit` must be readable; `ratio` and `triggered` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_check_trigger(
    fit: *const AdeleFit,
    t: usize,
    r: f64,
    ratio: *mut f64,
    triggered: *mut bool,
) -> AdeleStatus {
    guard(|| {
        let fit = in_ref(fit, "fit")?;
        let ratio = out_ref(ratio, "ratio")?;
        let triggered = out_ref(triggered, "triggered")?;
        let d = earlycurve::check_trigger(0, &fit.into(), t, r);
        *ratio = d.relative_slope_change;
        *triggered = d.triggered;
        Ok(())
    })
}

unsafe fn mask_from(p: *const u8, h: usize, w: usize, what: &str) -> Result<LabelMask, Failure> {
    let data = in_slice(p, h * w, what)?.to_vec();
    Ok(LabelMask::new(h, w, data)?)
}

/// IoU of `class` between two `h x w` label maps. `defined` is false when the
/// class is absent from both, in which case `out` is left untouched.
///
/// # Safety
/// `pred` and `reference` must hold `h * w` bytes; `out` and `defined` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_iou(
    pred: *const u8,
    reference: *const u8,
    h: usize,
    w: usize,
    class: u8,
    out: *mut f64,
    defined: *mut bool,
) -> AdeleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let defined = out_ref(defined, "defined")?;
        let p = mask_from(pred, h, w, "pred")?;
        let r = mask_from(reference, h, w, "reference")?;
        match metrics::iou(&p, &r, class, None)? {
            Some(v) => {
                *out = v;
                *defined = true;
            }
            None => *defined = false,
        }
        Ok(())
    })
}

fn parse_config(json: &str) -> Result<RunConfig, Failure> {
    Ok(adele::io::parse_run_config(json)?)
}

/// Generates a synthetic dataset from a run configuration JSON document
/// (only its `synth` and `noise` sections matter; `{}` gives the defaults).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_generate(config_json: *const c_char, out: *mut *mut AdeleDataset) -> AdeleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = parse_config(in_str(config_json, "config_json")?)?;
        let d = synthgen::generate_dataset(&cfg.synth, &cfg.noise)?;
        *out = Box::into_raw(Box::new(AdeleDataset(d)));
        Ok(())
    })
}

/// Loads a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_load(path: *const c_char, out: *mut *mut AdeleDataset) -> AdeleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let d = adele::io::load_dataset(in_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(AdeleDataset(d)));
        Ok(())
    })
}

/// Saves a dataset file.
///
/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_save(ds: *const AdeleDataset, path: *const c_char) -> AdeleStatus {
    guard(|| {
        let ds = in_ref(ds, "dataset")?;
        adele::io::save_dataset(&ds.0, in_str(path, "path")?)?;
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_free(ds: *mut AdeleDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Example count, image height, width, channels and class count.
///
/// # Safety
/// `ds` must be a live handle; every out-pointer writable.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_dims(
    ds: *const AdeleDataset,
    examples: *mut usize,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
    classes: *mut usize,
) -> AdeleStatus {
    guard(|| {
        let d = &in_ref(ds, "dataset")?.0;
        let (h, w, c) = d.dims().unwrap_or((0, 0, 0));
        *out_ref(examples, "examples")? = d.len();
        *out_ref(height, "height")? = h;
        *out_ref(width, "width")? = w;
        *out_ref(channels, "channels")? = c;
        *out_ref(classes, "classes")? = d.num_classes;
        Ok(())
    })
}

/// Pooled mIoU of the noisy training annotations against the clean masks.
///
/// # Safety
/// `ds` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_annotation_miou(ds: *const AdeleDataset, out: *mut f64) -> AdeleStatus {
    guard(|| {
        let d = &in_ref(ds, "dataset")?.0;
        *out_ref(out, "out")? = d.annotation_quality()?.miou;
        Ok(())
    })
}

/// Copies image `index` (row-major, channels last) into `buf`.
///
/// # Safety
/// `ds` must be a live handle and `buf` hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_copy_image(ds: *const AdeleDataset, index: usize, buf: *mut f64, len: usize) -> AdeleStatus {
    guard(|| {
        let d = &in_ref(ds, "dataset")?.0;
        let img = d.images.get(index).ok_or_else(|| Failure::invalid(format!("index {index} out of range")))?;
        copy_out(img.data(), buf, len)
    })
}

/// Copies the clean (`noisy == false`) or noisy mask of example `index` into `buf`.
///
/// # Safety
/// `ds` must be a live handle and `buf` hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn adele_dataset_copy_mask(
    ds: *const AdeleDataset,
    index: usize,
    noisy: bool,
    buf: *mut u8,
    len: usize,
) -> AdeleStatus {
    guard(|| {
        let d = &in_ref(ds, "dataset")?.0;
        let masks = if noisy { &d.noisy_masks } else { &d.clean_masks };
        let m = masks.get(index).ok_or_else(|| Failure::invalid(format!("index {index} out of range")))?;
        copy_out(m.data(), buf, len)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(AdeleStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", src.len())));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Failure::null("buf"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Trains one run on `ds` using the `train` section of a run configuration JSON document.
///
/// # Safety
/// `ds` must be a live handle, `config_json` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_train(ds: *const AdeleDataset, config_json: *const c_char, out: *mut *mut AdeleRun) -> AdeleStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let d = &in_ref(ds, "dataset")?.0;
        let cfg = parse_config(in_str(config_json, "config_json")?)?;
        let rec = trainer::run_experiment(&cfg.train, d)?;
        *out = Box::into_raw(Box::new(AdeleRun(rec)));
        Ok(())
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adele_run_free(run: *mut AdeleRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Run summary as a JSON object. Free with `adele_string_free`.
///
/// # Safety
/// `run` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_run_summary_json(run: *const AdeleRun, out: *mut *mut c_char) -> AdeleStatus {
    guard(|| {
        let r = &in_ref(run, "run")?.0;
        out_ref(out, "out")?;
        let s = serde_json::to_string(&r.summary).map_err(|e| Failure::from(Error::from(e)))?;
        give_string(s, out)
    })
}

/// Per-epoch metrics in the CSV layout used on disk. Free with `adele_string_free`.
///
/// # Safety
/// `run` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adele_run_metrics_csv(run: *const AdeleRun, out: *mut *mut c_char) -> AdeleStatus {
    guard(|| {
        let r = &in_ref(run, "run")?.0;
        out_ref(out, "out")?;
        give_string(adele::io::metrics_to_csv(&r.rows)?, out)
    })
}

/// Validation and test mIoU after the last epoch.
///
/// # Safety
/// `run` must be a live handle; both out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn adele_run_last_epoch_miou(run: *const AdeleRun, val: *mut f64, test: *mut f64) -> AdeleStatus {
    guard(|| {
        let s = &in_ref(run, "run")?.0.summary;
        *out_ref(val, "val")? = s.last_epoch_val_miou;
        *out_ref(test, "test")? = s.last_epoch_test_miou;
        Ok(())
    })
}
