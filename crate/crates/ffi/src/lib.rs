//! C ABI over the `slowfast` crate.
//!
//! Experiments are opaque handles created from TOML text or a preset name and
//! released with [`sf_experiment_free`]. Every fallible call returns an
//! [`SfStatus`]; on failure the message is kept per thread and can be read
//! with [`sf_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use slowfast::analysis::{self, Experiment, FitStatus, WeakErrorPoint};
use slowfast::config::{validate_config, ConfigFile, ExperimentConfig};
use slowfast::{harness, Error};

/// Result codes. Values 2, 3 and 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    /// The order fit had fewer than three points above the noise floor.
    Inconclusive = 3,
    Io = 4,
    Usage = 5,
    InvalidUtf8 = 6,
    Internal = 7,
    Panic = 8,
    BufferTooSmall = 9,
}

/// One row of a weak-error sweep.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfWeakErrorPoint {
    pub epsilon: f64,
    pub mean_diff: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub seed: u64,
}

/// Log-log fit; the numeric fields are NaN when the status is inconclusive.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfOrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub used: usize,
    pub excluded: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfCorrector {
    pub u1: f64,
    /// 95% half-width.
    pub ci_halfwidth: f64,
    pub std_error: f64,
    pub s_max: f64,
}

/// Opaque experiment handle.
pub struct SfExperiment {
    config: ExperimentConfig,
    experiment: Experiment,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Failure {
    Status(SfStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> SfStatus {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::UnsupportedOracle(_) => SfStatus::Config,
        Error::Io { .. } => SfStatus::Io,
        Error::Usage(_) | Error::Dimension { .. } => SfStatus::Usage,
        Error::Internal(_) => SfStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<SfStatus, Failure>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(SfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(SfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a>(p: *const SfExperiment) -> Result<&'a SfExperiment, Failure> {
    p.as_ref().ok_or_else(|| null("experiment"))
}

fn from_file(file: ConfigFile) -> Result<SfExperiment, Failure> {
    let config = validate_config(&file)?;
    let experiment = config.build()?;
    Ok(SfExperiment { config, experiment })
}

unsafe fn publish(exp: SfExperiment, out: *mut *mut SfExperiment) {
    *out = Box::into_raw(Box::new(exp));
}

fn c_point(p: &WeakErrorPoint) -> SfWeakErrorPoint {
    SfWeakErrorPoint {
        epsilon: p.epsilon,
        mean_diff: p.mean_diff,
        std_error: p.stderr,
        replicas: p.replicas,
        seed: p.seed,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Bytes needed (including the NUL) to hold the last error message of this thread.
#[no_mangle]
pub extern "C" fn sf_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len() + 1)
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to fit). Returns `BUFFER_TOO_SMALL` when truncated.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sf_last_error_message(buf: *mut c_char, len: usize) -> SfStatus {
    if buf.is_null() || len == 0 {
        return SfStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let n = msg.len().min(len - 1);
        ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        if n < msg.len() {
            SfStatus::BufferTooSmall
        } else {
            SfStatus::Ok
        }
    })
}

/// Parses, validates and freezes an experiment from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_experiment_from_toml(toml: *const c_char, out: *mut *mut SfExperiment) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let exp = from_file(ConfigFile::from_toml(text(toml, "toml")?)?)?;
        publish(exp, out);
        Ok(SfStatus::Ok)
    })
}

/// Builds an experiment from a named preset (`smoke`, `acceptance`, `ou`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_experiment_from_preset(name: *const c_char, out: *mut *mut SfExperiment) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let exp = from_file(ConfigFile::preset(text(name, "name")?)?)?;
        publish(exp, out);
        Ok(SfStatus::Ok)
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `exp` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_experiment_free(exp: *mut SfExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Number of spectral modes, or 0 for a null handle.
///
/// # Safety
/// `exp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_experiment_modes(exp: *const SfExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.config.basis.modes())
}

/// Number of ε values in the configured sweep, or 0 for a null handle.
///
/// # Safety
/// `exp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_experiment_epsilon_count(exp: *const SfExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.config.epsilons().len())
}

/// Weak difference `E φ(U^ε_T) − E φ(Ū_T)` at one ε over `replicas` replicas.
/// `lane` selects the fast-noise stream.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_weak_error(
    exp: *const SfExperiment,
    epsilon: f64,
    lane: u64,
    replicas: usize,
    seed: u64,
    out: *mut SfWeakErrorPoint,
) -> SfStatus {
    guard(|| {
        let e = handle(exp)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Failure::Status(SfStatus::Usage, format!("epsilon {epsilon} outside (0, 1]")));
        }
        let p = analysis::weak_error(&e.experiment, epsilon, lane, replicas, seed)?;
        *out = c_point(&p);
        Ok(SfStatus::Ok)
    })
}

/// Runs the configured ε ladder into `out[0..capacity]`; `written` receives
/// the number of points.
///
/// # Safety
/// `exp` must be a live handle; `out` must hold `capacity` elements; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_sweep(
    exp: *const SfExperiment,
    out: *mut SfWeakErrorPoint,
    capacity: usize,
    written: *mut usize,
) -> SfStatus {
    guard(|| {
        let e = handle(exp)?;
        if out.is_null() || written.is_null() {
            return Err(null("out"));
        }
        let eps = e.config.epsilons();
        *written = 0;
        if capacity < eps.len() {
            return Err(Failure::Status(
                SfStatus::BufferTooSmall,
                format!("need room for {} points, got {capacity}", eps.len()),
            ));
        }
        let pts = analysis::weak_error_sweep(&e.experiment, eps, e.config.replicas(), e.config.seed())?;
        for (i, p) in pts.iter().enumerate() {
            *out.add(i) = c_point(p);
        }
        *written = pts.len();
        Ok(SfStatus::Ok)
    })
}

/// Least-squares fit of `log|mean_diff|` against `log ε` over the points with
/// `|mean_diff| > 2·stderr`. Returns `INCONCLUSIVE` with fewer than three.
///
/// # Safety
/// `points` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_order_fit(points: *const SfWeakErrorPoint, n: usize, out: *mut SfOrderFit) -> SfStatus {
    guard(|| {
        if out.is_null() || (points.is_null() && n > 0) {
            return Err(null("points/out"));
        }
        let pts: Vec<WeakErrorPoint> = (0..n)
            .map(|i| {
                let p = &*points.add(i);
                WeakErrorPoint {
                    epsilon: p.epsilon,
                    mean_diff: p.mean_diff,
                    stderr: p.std_error,
                    replicas: p.replicas,
                    seed: p.seed,
                }
            })
            .collect();
        let fit = analysis::order_fit(&pts);
        *out = SfOrderFit {
            slope: fit.slope.unwrap_or(f64::NAN),
            intercept: fit.intercept.unwrap_or(f64::NAN),
            r_squared: fit.r_squared.unwrap_or(f64::NAN),
            used: fit.used.len(),
            excluded: fit.excluded.len(),
        };
        Ok(match fit.status {
            FitStatus::Ok => SfStatus::Ok,
            FitStatus::Inconclusive => {
                set_error(format!("only {} point(s) above the noise floor", fit.used.len()));
                SfStatus::Inconclusive
            }
        })
    })
}

/// First-order corrector `u₁` with the configured settings and seed.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_corrector(exp: *const SfExperiment, out: *mut SfCorrector) -> SfStatus {
    guard(|| {
        let e = handle(exp)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = analysis::corrector_u1(&e.experiment, &e.config.corrector, e.config.seed())?;
        *out = SfCorrector {
            u1: c.u1_value,
            ci_halfwidth: c.ci_halfwidth,
            std_error: c.stderr,
            s_max: c.s_max,
        };
        Ok(SfStatus::Ok)
    })
}

/// Full sweep with outputs (CSV, JSON report, manifest) written to `out_dir`.
/// Returns `INCONCLUSIVE` when the order fit lacked usable points.
///
/// # Safety
/// `exp` must be a live handle; `out_dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sf_run_sweep(exp: *const SfExperiment, out_dir: *const c_char) -> SfStatus {
    guard(|| {
        let e = handle(exp)?;
        let dir = text(out_dir, "out_dir")?;
        let (_, report) = harness::run_sweep(&e.config, Path::new(dir))?;
        Ok(match report.status {
            FitStatus::Ok => SfStatus::Ok,
            FitStatus::Inconclusive => {
                set_error("order fit inconclusive".into());
                SfStatus::Inconclusive
            }
        })
    })
}
