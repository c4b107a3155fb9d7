//! C ABI for the `mtdfl` simulator.
//!
//! Every fallible call returns an [`MtdflStatus`]; on failure the message is
//! kept per thread and can be copied out with [`mtdfl_last_error_message`].
//! Configurations and experiment reports are opaque handles that the caller
//! releases with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::PathBuf;
use std::ptr;

use mtdfl::harness::config::{DefenseMode, ScenarioConfig};
use mtdfl::harness::metrics::SummaryRow;
use mtdfl::harness::run_experiment;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtdflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Simulation = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Scenario configuration handle.
pub struct MtdflConfig {
    inner: ScenarioConfig,
}

/// Outcome of a finished experiment.
pub struct MtdflReport {
    run_dir: PathBuf,
    records: usize,
    summary: Vec<SummaryRow>,
}

/// One (mode, iteration) cell of an experiment summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MtdflSummaryRow {
    /// 0 FL, 1 FL-Attack, 2 MTD-FL, 3 RND-MTD(k).
    pub mode: u32,
    /// `k` for RND-MTD, otherwise 0.
    pub mode_k: u32,
    /// 1-based FL iteration.
    pub iteration: u32,
    pub runs: u32,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub excluded_ratio_mean: f64,
    pub excluded_ratio_std: f64,
    pub t_int_mean: f64,
    pub t_int_std: f64,
    pub participants_mean: f64,
    pub participants_std: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: MtdflStatus, msg: impl Into<String>) -> MtdflStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into [`MtdflStatus::Panic`].
fn guard(f: impl FnOnce() -> MtdflStatus) -> MtdflStatus {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MtdflStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, MtdflStatus> {
    if p.is_null() {
        return Err(fail(MtdflStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MtdflStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string. Returns the message length without the NUL, or
/// -1 when `buf` is null or too small; `needed` then holds the size to use.
///
/// # Safety
/// `buf` must point to `len` writable bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_last_error_message(
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> i64 {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !needed.is_null() {
            *needed = bytes.len() + 1;
        }
        if buf.is_null() || len < bytes.len() + 1 {
            return -1;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
        *buf.add(bytes.len()) = 0;
        bytes.len() as i64
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mtdfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates the reference configuration.
#[no_mangle]
pub extern "C" fn mtdfl_config_default() -> *mut MtdflConfig {
    Box::into_raw(Box::new(MtdflConfig {
        inner: ScenarioConfig::default(),
    }))
}

/// Parses and validates a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_config_from_toml(
    toml: *const c_char,
    out: *mut *mut MtdflConfig,
) -> MtdflStatus {
    guard(|| {
        if out.is_null() {
            return fail(MtdflStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ScenarioConfig::from_toml_str(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MtdflConfig { inner }));
                MtdflStatus::Ok
            }
            Err(e) => fail(MtdflStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_config_free(cfg: *mut MtdflConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Overrides the first seed, the number of seeds and the number of agent
/// training episodes.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_config_set_run(
    cfg: *mut MtdflConfig,
    seed: u64,
    seeds: usize,
    episodes: usize,
) -> MtdflStatus {
    let Some(c) = cfg.as_mut() else {
        return fail(MtdflStatus::NullPointer, "config is null");
    };
    let mut next = c.inner.clone();
    next.seed = seed;
    next.seeds = seeds;
    next.episodes = episodes;
    match next.validate() {
        Ok(()) => {
            c.inner = next;
            MtdflStatus::Ok
        }
        Err(e) => fail(MtdflStatus::InvalidConfig, e.to_string()),
    }
}

/// Replaces the list of defense modes, given as a comma-separated string
/// such as `"FL,FL-Attack,RND-MTD(2),MTD-FL"`.
///
/// # Safety
/// `cfg` must be a live handle and `modes` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_config_set_modes(
    cfg: *mut MtdflConfig,
    modes: *const c_char,
) -> MtdflStatus {
    let Some(c) = cfg.as_mut() else {
        return fail(MtdflStatus::NullPointer, "config is null");
    };
    let text = match read_str(modes, "modes") {
        Ok(t) => t,
        Err(s) => return s,
    };
    let parsed: Result<Vec<DefenseMode>, _> = text.split(',').map(|m| m.trim().parse()).collect();
    match parsed {
        Ok(list) if !list.is_empty() => {
            c.inner.modes = list;
            MtdflStatus::Ok
        }
        Ok(_) => fail(MtdflStatus::InvalidConfig, "no modes given"),
        Err(e) => fail(MtdflStatus::InvalidConfig, e.to_string()),
    }
}

/// Runs the experiment, writing the run directory, and returns a report.
///
/// # Safety
/// `cfg` must be a live handle, `run_dir` a NUL-terminated path and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_run_experiment(
    cfg: *const MtdflConfig,
    run_dir: *const c_char,
    out: *mut *mut MtdflReport,
) -> MtdflStatus {
    guard(|| {
        if out.is_null() {
            return fail(MtdflStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(c) = cfg.as_ref() else {
            return fail(MtdflStatus::NullPointer, "config is null");
        };
        let dir = match read_str(run_dir, "run_dir") {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        match run_experiment(&c.inner, &dir) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(MtdflReport {
                    run_dir: r.run_dir,
                    records: r.records,
                    summary: r.summary,
                }));
                MtdflStatus::Ok
            }
            Err(e) => fail(MtdflStatus::Simulation, e.to_string()),
        }
    })
}

/// Number of metrics records written. 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_report_records(report: *const MtdflReport) -> usize {
    report.as_ref().map_or(0, |r| r.records)
}

/// Number of summary rows. 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_report_summary_len(report: *const MtdflReport) -> usize {
    report.as_ref().map_or(0, |r| r.summary.len())
}

/// Copies summary row `index` into `out`.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_report_summary_row(
    report: *const MtdflReport,
    index: usize,
    out: *mut MtdflSummaryRow,
) -> MtdflStatus {
    let (Some(r), false) = (report.as_ref(), out.is_null()) else {
        return fail(MtdflStatus::NullPointer, "report or out is null");
    };
    let Some(row) = r.summary.get(index) else {
        return fail(
            MtdflStatus::OutOfRange,
            format!("row {index} of {}", r.summary.len()),
        );
    };
    let (mode, mode_k) = match row.mode.parse::<DefenseMode>() {
        Ok(DefenseMode::Fl) => (0, 0),
        Ok(DefenseMode::FlAttack) => (1, 0),
        Ok(DefenseMode::MtdFl) => (2, 0),
        Ok(DefenseMode::RndMtd(k)) => (3, k as u32),
        Err(e) => return fail(MtdflStatus::Simulation, e.to_string()),
    };
    *out = MtdflSummaryRow {
        mode,
        mode_k,
        iteration: row.iteration as u32,
        runs: row.runs as u32,
        accuracy_mean: row.accuracy_mean,
        accuracy_std: row.accuracy_std,
        excluded_ratio_mean: row.excluded_ratio_mean,
        excluded_ratio_std: row.excluded_ratio_std,
        t_int_mean: row.t_int_mean,
        t_int_std: row.t_int_std,
        participants_mean: row.participants_mean,
        participants_std: row.participants_std,
    };
    MtdflStatus::Ok
}

/// Copies the run directory path into `buf` (NUL-terminated).
///
/// # Safety
/// `report` must be a live handle and `buf` point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_report_run_dir(
    report: *const MtdflReport,
    buf: *mut c_char,
    len: usize,
) -> MtdflStatus {
    let (Some(r), false) = (report.as_ref(), buf.is_null()) else {
        return fail(MtdflStatus::NullPointer, "report or buf is null");
    };
    let s = r.run_dir.to_string_lossy();
    let bytes = s.as_bytes();
    if len < bytes.len() + 1 {
        return fail(
            MtdflStatus::BufferTooSmall,
            format!("need {} bytes", bytes.len() + 1),
        );
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    MtdflStatus::Ok
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_report_free(report: *mut MtdflReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Shannon rate `B log(1 + Pt g / noise)` in bits per second.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtdfl_link_rate(
    bandwidth: f64,
    tx_power: f64,
    gain: f64,
    noise: f64,
    out: *mut f64,
) -> MtdflStatus {
    if out.is_null() {
        return fail(MtdflStatus::NullPointer, "out is null");
    }
    match mtdfl::netmodel::link_rate(bandwidth, tx_power, gain, noise) {
        Ok(r) => {
            *out = r;
            MtdflStatus::Ok
        }
        Err(e) => fail(MtdflStatus::InvalidConfig, e.to_string()),
    }
}
