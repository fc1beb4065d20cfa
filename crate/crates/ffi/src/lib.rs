//! C interface to the telemetry-anomaly library.
//!
//! Every fallible function returns a [`TaStatus`]; on failure a description
//! is available from [`ta_last_error_message`] on the same thread. Labels
//! cross the boundary as `uint8_t`, 0 for anomaly and 1 for normal. Ratios
//! that are undefined (zero denominator) are reported as NaN.
//!
//! Panics never unwind into the caller; they are reported as
//! `TA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use telemetry_anomaly::autoencoder::{ae_init, ae_score, ae_train, AutoencoderModel, TrainConfig};
use telemetry_anomaly::config::RunConfig;
use telemetry_anomaly::detectors::Points;
use telemetry_anomaly::features::{haversine, Label, EARTH_RADIUS_KM};
use telemetry_anomaly::metrics::{compute_metrics, confusion, roc_auc, Confusion, Metrics};
use telemetry_anomaly::pipeline::run_experiment;
use telemetry_anomaly::thresholding::{build_table, default_percentiles, select_threshold};
use telemetry_anomaly::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    IoError = 4,
    SingleClass = 5,
    Leakage = 6,
    NonFiniteLoss = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TaConfusion {
    pub true_anomalies: u64,
    pub false_anomalies: u64,
    pub true_normals: u64,
    pub false_normals: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaThreshold {
    pub percentile: u32,
    pub threshold: f64,
    pub metrics: TaMetrics,
    /// Number of percentiles tied with the chosen one.
    pub tie_count: u32,
}

/// Opaque autoencoder handle.
pub struct TaAutoencoder {
    model: AutoencoderModel,
}

struct Failure {
    status: TaStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let status = match e.root() {
            Error::InvalidConfig(_) | Error::DimensionMismatch { .. } | Error::LengthMismatch { .. } => {
                TaStatus::InvalidArgument
            }
            Error::Io(_) | Error::MissingFile(_) => TaStatus::IoError,
            Error::SingleClass(_) => TaStatus::SingleClass,
            Error::Leakage { .. } => TaStatus::Leakage,
            Error::NonFiniteLoss { .. } => TaStatus::NonFiniteLoss,
            _ => TaStatus::DataError,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: TaStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn call<F>(f: F) -> TaStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TaStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            TaStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(TaStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| fail(TaStatus::NullPointer, format!("{name} is null")))
}

fn labels(raw: &[u8]) -> Result<Vec<Label>, Failure> {
    raw.iter()
        .map(|&v| match v {
            0 => Ok(Label::Anomaly),
            1 => Ok(Label::Normal),
            other => Err(fail(
                TaStatus::InvalidArgument,
                format!("label {other} is neither 0 nor 1"),
            )),
        })
        .collect()
}

fn to_c_metrics(m: &Metrics) -> TaMetrics {
    let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
    TaMetrics {
        accuracy: v(m.accuracy),
        precision: v(m.precision),
        recall: v(m.recall),
        specificity: v(m.specificity),
        f1: v(m.f1),
    }
}

unsafe fn c_path<'a>(ptr: *const c_char, name: &str) -> Result<&'a Path, Failure> {
    if ptr.is_null() {
        return Err(fail(TaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(TaStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

/// Description of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ta_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ta_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Great-circle distance in kilometres between two points in degrees.
#[no_mangle]
pub extern "C" fn ta_haversine_km(lat_a: f64, lon_a: f64, lat_b: f64, lon_b: f64) -> f64 {
    haversine(lat_a, lon_a, lat_b, lon_b, EARTH_RADIUS_KM)
}

/// Confusion counts of `n` predicted and true labels.
///
/// # Safety
/// `predicted` and `truth` must be valid for `n` reads; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ta_confusion(
    predicted: *const u8,
    truth: *const u8,
    n: usize,
    out: *mut TaConfusion,
) -> TaStatus {
    call(|| {
        let p = labels(slice(predicted, n, "predicted")?)?;
        let t = labels(slice(truth, n, "truth")?)?;
        let c = confusion(&p, &t)?;
        *out_ref(out, "out")? = TaConfusion {
            true_anomalies: c.ta,
            false_anomalies: c.fa,
            true_normals: c.tn,
            false_normals: c.fn_,
        };
        Ok(())
    })
}

/// Ratio metrics of a confusion matrix; undefined ratios are NaN.
///
/// # Safety
/// `cm` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_metrics(cm: *const TaConfusion, out: *mut TaMetrics) -> TaStatus {
    call(|| {
        let cm = cm.as_ref().ok_or_else(|| fail(TaStatus::NullPointer, "cm is null"))?;
        let c = Confusion {
            ta: cm.true_anomalies,
            fa: cm.false_anomalies,
            tn: cm.true_normals,
            fn_: cm.false_normals,
        };
        *out_ref(out, "out")? = to_c_metrics(&compute_metrics(&c));
        Ok(())
    })
}

/// ROC AUC with anomalies as the positive class; higher scores are more
/// anomalous.
///
/// # Safety
/// `scores` and `truth` must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_roc_auc(scores: *const f64, truth: *const u8, n: usize, out: *mut f64) -> TaStatus {
    call(|| {
        let s = slice(scores, n, "scores")?;
        let t = labels(slice(truth, n, "truth")?)?;
        *out_ref(out, "out")? = roc_auc(s, &t)?;
        Ok(())
    })
}

/// Builds the percentile table of `errors` over percentiles 1..=100 and
/// selects the threshold maximising recall, then precision, then
/// specificity.
///
/// # Safety
/// `errors` and `truth` must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_select_threshold(
    errors: *const f64,
    truth: *const u8,
    n: usize,
    out: *mut TaThreshold,
) -> TaStatus {
    call(|| {
        let e = slice(errors, n, "errors")?;
        let t = labels(slice(truth, n, "truth")?)?;
        let result = select_threshold(&build_table(e, &t, &default_percentiles())?)?;
        *out_ref(out, "out")? = TaThreshold {
            percentile: result.percentile,
            threshold: result.threshold,
            metrics: to_c_metrics(&result.metrics),
            tie_count: result.ties.len() as u32,
        };
        Ok(())
    })
}

/// Creates a freshly initialised autoencoder.
///
/// # Safety
/// `out` must be writable. The handle must be released with
/// [`ta_autoencoder_free`].
#[no_mangle]
pub unsafe extern "C" fn ta_autoencoder_new(
    input_dim: usize,
    units: usize,
    bottleneck: usize,
    seed: u64,
    out: *mut *mut TaAutoencoder,
) -> TaStatus {
    call(|| {
        let out = out_ref(out, "out")?;
        let model = ae_init(input_dim, units, bottleneck, seed)?;
        *out = Box::into_raw(Box::new(TaAutoencoder { model }));
        Ok(())
    })
}

/// Loads an autoencoder checkpoint written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_autoencoder_load(path: *const c_char, out: *mut *mut TaAutoencoder) -> TaStatus {
    call(|| {
        let out = out_ref(out, "out")?;
        let path = c_path(path, "path")?;
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()).into());
        }
        let model = AutoencoderModel::load(path)?;
        *out = Box::into_raw(Box::new(TaAutoencoder { model }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ta_autoencoder_save(handle: *const TaAutoencoder, path: *const c_char) -> TaStatus {
    call(|| {
        let h = handle
            .as_ref()
            .ok_or_else(|| fail(TaStatus::NullPointer, "handle is null"))?;
        h.model.save(c_path(path, "path")?)?;
        Ok(())
    })
}

/// Number of weights and biases.
///
/// # Safety
/// `handle` must be null or come from this library. Returns 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ta_autoencoder_parameter_count(handle: *const TaAutoencoder) -> usize {
    handle.as_ref().map_or(0, |h| h.model.parameter_count())
}

/// Trains on `rows` x `cols` row-major values already scaled to [0, 1].
/// `final_loss`, if not null, receives the last epoch's mean training loss.
///
/// # Safety
/// `handle` must come from this library; `data` must be valid for
/// `rows * cols` reads.
#[no_mangle]
pub unsafe extern "C" fn ta_autoencoder_train(
    handle: *mut TaAutoencoder,
    data: *const f64,
    rows: usize,
    cols: usize,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    final_loss: *mut f64,
) -> TaStatus {
    call(|| {
        let h = handle
            .as_mut()
            .ok_or_else(|| fail(TaStatus::NullPointer, "handle is null"))?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(TaStatus::InvalidArgument, "rows * cols overflows"))?;
        let points = Points::new(slice(data, len, "data")?.to_vec(), cols)?;
        let cfg = TrainConfig {
            learning_rate,
            batch_size,
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let curve = ae_train(&mut h.model, &points, None, &cfg)?;
        if let Some(l) = final_loss.as_mut() {
            *l = curve.train.last().copied().unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Per-row reconstruction error of `rows` x `cols` row-major values.
///
/// # Safety
/// `handle` must come from this library; `data` must be valid for
/// `rows * cols` reads and `out` for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn ta_autoencoder_score(
    handle: *const TaAutoencoder,
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> TaStatus {
    call(|| {
        let h = handle
            .as_ref()
            .ok_or_else(|| fail(TaStatus::NullPointer, "handle is null"))?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(TaStatus::InvalidArgument, "rows * cols overflows"))?;
        let points = Points::new(slice(data, len, "data")?.to_vec(), cols)?;
        let errors = ae_score(&h.model, &points)?;
        if rows > 0 {
            if out.is_null() {
                return Err(fail(TaStatus::NullPointer, "out is null"));
            }
            std::slice::from_raw_parts_mut(out, rows).copy_from_slice(&errors);
        }
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ta_autoencoder_free(handle: *mut TaAutoencoder) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Runs the full pipeline described by a TOML run configuration and writes
/// its artifacts to the configured output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ta_run_experiment(config_path: *const c_char) -> TaStatus {
    call(|| {
        let cfg = RunConfig::load(c_path(config_path, "config_path")?)?;
        run_experiment(&cfg)?;
        Ok(())
    })
}
