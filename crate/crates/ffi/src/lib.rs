//! C interface to the alignment toolkit.
//!
//! Datasets, configurations and reports are opaque handles owned by the
//! caller and released with the matching `*_free` function. Fallible calls
//! return an [`SaStatus`]; the message of the most recent failure on the
//! calling thread is available from [`sa_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sins_align::backtrack::{align, misalignment, AlignmentReport};
use sins_align::cli::{initial_attitude, simulate_dataset};
use sins_align::config::{AlignFile, ScenarioFile};
use sins_align::errmodel::GnssFix;
use sins_align::formats::{read_gnss, read_imu, read_truth, truth_at};
use sins_align::geokin::{rad_to_arcmin, EarthModel};
use sins_align::mech::{ImuRecord, NavState};
use sins_align::simkit::NamedAlgorithm;
use sins_align::{Error, ErrorClass};

/// Status codes. Nonzero codes other than `InvalidArgument` and `Panic`
/// match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or a missing optional result.
    InvalidArgument = 1,
    Config = 2,
    Ingestion = 3,
    Numerical = 4,
    /// Internal failure; the handle arguments are left untouched.
    Panic = 5,
}

/// IMU record, GNSS fixes and optional truth.
pub struct SaDataset {
    imu: ImuRecord,
    gnss: Vec<GnssFix>,
    truth: Option<Vec<NavState>>,
}

/// Alignment configuration loaded from a TOML file.
pub struct SaConfig {
    file: AlignFile,
    algorithm: NamedAlgorithm,
}

/// Result of one alignment.
pub struct SaReport {
    report: AlignmentReport,
    final_error: Option<[f64; 3]>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|b| *b != 0);
    let msg = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SaStatus {
    match e.class() {
        ErrorClass::Config => SaStatus::Config,
        ErrorClass::Ingestion => SaStatus::Ingestion,
        ErrorClass::Numerical => SaStatus::Numerical,
    }
}

enum Fail {
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaStatus::Ok,
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            SaStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SaStatus::Panic
        }
    }
}

unsafe fn path(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Arg(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Arg(format!("{name} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::Arg(format!("{name} is null")))
}

fn out_ptr<T>(p: *mut *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::Arg(format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len` bytes. Returns the buffer size
/// needed for the whole message; `buf` may be null to query it.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sa_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len) - 1;
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulates the scenario file with the given master seed; truth is kept at
/// the GNSS epochs.
///
/// # Safety
/// `scenario_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_simulate(scenario_path: *const c_char, seed: u64, out: *mut *mut SaDataset) -> SaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (file, _) = ScenarioFile::load(&path(scenario_path, "scenario_path")?)?;
        let (imu, gnss, truth) = simulate_dataset(&file, seed)?;
        *out = Box::into_raw(Box::new(SaDataset {
            imu,
            gnss,
            truth: Some(truth),
        }));
        Ok(())
    })
}

/// Reads IMU and GNSS CSV files and, when `truth_path` is not null, a truth
/// CSV.
///
/// # Safety
/// Paths must be NUL-terminated strings (`truth_path` may be null); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_dataset_load(
    imu_path: *const c_char,
    gnss_path: *const c_char,
    truth_path: *const c_char,
    out: *mut *mut SaDataset,
) -> SaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let imu = read_imu(&path(imu_path, "imu_path")?)?;
        let gnss = read_gnss(&path(gnss_path, "gnss_path")?)?;
        let truth = if truth_path.is_null() {
            None
        } else {
            Some(read_truth(&path(truth_path, "truth_path")?)?)
        };
        *out = Box::into_raw(Box::new(SaDataset { imu, gnss, truth }));
        Ok(())
    })
}

/// Number of IMU samples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_dataset_imu_len(dataset: *const SaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.imu.len())
}

/// Number of GNSS fixes; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_dataset_gnss_len(dataset: *const SaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.gnss.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_dataset_free(dataset: *mut SaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads an alignment configuration file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_config_load(config_path: *const c_char, out: *mut *mut SaConfig) -> SaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (file, algorithm, _) = AlignFile::load(&path(config_path, "config_path")?)?;
        *out = Box::into_raw(Box::new(SaConfig { file, algorithm }));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_config_free(config: *mut SaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Aligns `dataset` with `config`. `initial_attitude_deg` is
/// `[pitch, roll, yaw]` in degrees or null; when null the configuration's
/// initial attitude is used, or the truth perturbed by the configured
/// misalignment.
///
/// # Safety
/// Handles must be live; `initial_attitude_deg` must be null or point to 3
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_align(
    dataset: *const SaDataset,
    config: *const SaConfig,
    initial_attitude_deg: *const f64,
    out: *mut *mut SaReport,
) -> SaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let d = handle(dataset, "dataset")?;
        let c = handle(config, "config")?;
        let first = d
            .gnss
            .first()
            .ok_or_else(|| Fail::Arg("dataset has no GNSS fixes".into()))?;
        let mut file = c.file.clone();
        if !initial_attitude_deg.is_null() {
            let a = std::slice::from_raw_parts(initial_attitude_deg, 3);
            file.initial_attitude_deg = Some([a[0], a[1], a[2]]);
        }
        let att0 = initial_attitude(&file, &c.algorithm, d.truth.as_deref(), first.t)?;
        let em = EarthModel::at_latitude(first.pos.lat);
        let report = align(&d.imu, &d.gnss, &att0, &c.algorithm.config, &em)?;
        let final_error = d.truth.as_deref().and_then(|tr| {
            truth_at(tr, report.final_time)
                .map(|s| <[f64; 3]>::from(misalignment(&report.final_attitude, &s.att)).map(rad_to_arcmin))
        });
        *out = Box::into_raw(Box::new(SaReport { report, final_error }));
        Ok(())
    })
}

/// Writes the final `[pitch, roll, yaw]` in degrees to `out`.
///
/// # Safety
/// `report` must be a live handle; `out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sa_report_final_attitude_deg(report: *const SaReport, out: *mut f64) -> SaStatus {
    guard(|| {
        let r = handle(report, "report")?;
        if out.is_null() {
            return Err(Fail::Arg("out is null".into()));
        }
        let e = r.report.final_attitude.to_euler().to_array();
        ptr::copy_nonoverlapping(e.map(f64::to_degrees).as_ptr(), out, 3);
        Ok(())
    })
}

/// Writes the final misalignment against the truth, arcmin, to `out`.
/// Returns `InvalidArgument` when the dataset had no truth.
///
/// # Safety
/// `report` must be a live handle; `out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sa_report_final_error_arcmin(report: *const SaReport, out: *mut f64) -> SaStatus {
    guard(|| {
        let r = handle(report, "report")?;
        if out.is_null() {
            return Err(Fail::Arg("out is null".into()));
        }
        let e = r
            .final_error
            .ok_or_else(|| Fail::Arg("the dataset has no truth".into()))?;
        ptr::copy_nonoverlapping(e.as_ptr(), out, 3);
        Ok(())
    })
}

/// Number of passes run; 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_report_pass_count(report: *const SaReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.passes.len())
}

/// Whether the last pass corrected less than the convergence threshold.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_report_converged(report: *const SaReport) -> bool {
    report.as_ref().is_some_and(|r| r.report.converged)
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_report_free(report: *mut SaReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
