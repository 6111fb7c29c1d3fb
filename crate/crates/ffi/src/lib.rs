//! C ABI for the amsueo simulator and attack.
//!
//! Every object crosses the boundary as an opaque pointer owned by the
//! caller and released with its `_free` function. Fallible calls return an
//! [`AmsStatus`]; the message for the most recent failure on the calling
//! thread is available from [`ams_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use amsueo::attack::{run_attack, AttackReport, Outcome};
use amsueo::config::RunConfig;
use amsueo::grade::grade;
use amsueo::simulator::{GroundTruth, JsonlWriter, Simulator, Transcript};
use amsueo::system::SystemFile;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Generation = 4,
    Simulation = 5,
    Attack = 6,
    Io = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// Mirrors the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmsOutcome {
    Full = 0,
    Partial = 2,
    None = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AmsGrade {
    pub full: bool,
    pub a_correct: bool,
    pub b_correct: bool,
    pub s_correct: bool,
    pub id_correct: bool,
    pub prediction_correct: bool,
    pub forgery_accepted: bool,
    pub verified_moduli: u64,
    pub spurious_moduli: u64,
    pub sessions_decrypted: u64,
    pub reduced_wrong: u64,
}

pub struct AmsConfig(RunConfig);

pub struct AmsSystem(SystemFile);

pub struct AmsCampaign {
    transcripts: Vec<Transcript>,
    truth: Vec<GroundTruth>,
    coincident: u64,
}

pub struct AmsReport(AttackReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(AmsStatus, String);

fn fail<T>(status: AmsStatus, msg: impl std::fmt::Display) -> Result<T, Fail> {
    Err(Fail(status, msg.to_string()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AmsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AmsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(AmsStatus::NullArgument, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(AmsStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(AmsStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return fail(AmsStatus::NullArgument, "out is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn drop_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ams_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn ams_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or an owned string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ams_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default desk-scale config.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ams_config_new(out: *mut *mut AmsConfig) -> AmsStatus {
    guard(|| put(out, AmsConfig(RunConfig::default())))
}

/// Sets one config key, using the same names and syntax as the config file.
///
/// # Safety
/// `cfg` must be a live config handle; `key` and `value` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ams_config_set(cfg: *mut AmsConfig, key: *const c_char, value: *const c_char) -> AmsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| Fail(AmsStatus::NullArgument, "cfg is null".into()))?;
        let (k, v) = (text(key, "key")?, text(value, "value")?);
        cfg.0.set(k, v).map_err(|e| Fail(AmsStatus::InvalidConfig, e.to_string()))
    })
}

/// Stable hash of the reproducibility-relevant keys, 16 hex chars.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_config_hash(cfg: *const AmsConfig, out: *mut *mut c_char) -> AmsStatus {
    guard(|| {
        let cfg = borrow(cfg, "cfg")?;
        put_string(out, cfg.0.hash())
    })
}

/// # Safety
/// `cfg` must be null or a handle from [`ams_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ams_config_free(cfg: *mut AmsConfig) {
    drop_handle(cfg)
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return fail(AmsStatus::NullArgument, "out is null");
    }
    *out = CString::new(s).map_err(|e| Fail(AmsStatus::Io, e.to_string()))?.into_raw();
    Ok(())
}

/// Generates a system from the config's parameters and seed.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_system_generate(cfg: *const AmsConfig, out: *mut *mut AmsSystem) -> AmsStatus {
    guard(|| {
        let params = borrow(cfg, "cfg")?.0.params();
        params.validate().map_err(|e| Fail(AmsStatus::InvalidConfig, e.to_string()))?;
        let sys = SystemFile::generate(&params).map_err(|e| Fail(AmsStatus::Generation, e.to_string()))?;
        put(out, AmsSystem(sys))
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_system_read(path: *const c_char, out: *mut *mut AmsSystem) -> AmsStatus {
    guard(|| {
        let path = text(path, "path")?;
        let sys = SystemFile::read(Path::new(path)).map_err(|e| Fail(AmsStatus::Io, format!("{path}: {e}")))?;
        put(out, AmsSystem(sys))
    })
}

/// # Safety
/// `sys` must be a live system handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ams_system_write(sys: *const AmsSystem, path: *const c_char, include_factors: bool) -> AmsStatus {
    guard(|| {
        let sys = borrow(sys, "sys")?;
        let path = text(path, "path")?;
        sys.0.write(Path::new(path), include_factors).map_err(|e| Fail(AmsStatus::Io, format!("{path}: {e}")))
    })
}

/// Number of moduli in the system's table.
///
/// # Safety
/// `sys` must be null or a live system handle.
#[no_mangle]
pub unsafe extern "C" fn ams_system_modulus_count(sys: *const AmsSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.am.table.len())
}

/// # Safety
/// `sys` must be a live system handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_system_modulus(sys: *const AmsSystem, index: usize, out: *mut u64) -> AmsStatus {
    guard(|| {
        let sys = borrow(sys, "sys")?;
        if out.is_null() {
            return fail(AmsStatus::NullArgument, "out is null");
        }
        let n = sys.0.am.table.len();
        if index >= n {
            return fail(AmsStatus::OutOfRange, format!("modulus index {index} out of range (size {n})"));
        }
        *out = sys.0.am.modulus(index);
        Ok(())
    })
}

/// # Safety
/// `sys` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ams_system_free(sys: *mut AmsSystem) {
    drop_handle(sys)
}

/// Runs `n_sessions` chained sessions from the system's initial state.
///
/// # Safety
/// `sys` must be a live system handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_campaign_run(sys: *const AmsSystem, n_sessions: u64, out: *mut *mut AmsCampaign) -> AmsStatus {
    guard(|| {
        let sys = borrow(sys, "sys")?;
        let mut sim = Simulator::from_system(&sys.0);
        let mut transcripts = Vec::new();
        let mut truth = Vec::new();
        let stats = sim
            .run_campaign(n_sessions, |t, gt| {
                transcripts.push(t.clone());
                truth.push(gt.clone());
                Ok(())
            })
            .map_err(|e| Fail(AmsStatus::Simulation, e.to_string()))?;
        put(out, AmsCampaign { transcripts, truth, coincident: stats.coincident })
    })
}

/// # Safety
/// `c` must be null or a live campaign handle.
#[no_mangle]
pub unsafe extern "C" fn ams_campaign_len(c: *const AmsCampaign) -> u64 {
    c.as_ref().map_or(0, |c| c.transcripts.len() as u64)
}

/// Sessions whose pre- and post-update states act identically.
///
/// # Safety
/// `c` must be null or a live campaign handle.
#[no_mangle]
pub unsafe extern "C" fn ams_campaign_coincident(c: *const AmsCampaign) -> u64 {
    c.as_ref().map_or(0, |c| c.coincident)
}

/// Writes the transcript log and, if `sidecar_path` is non-null, the
/// ground-truth sidecar.
///
/// # Safety
/// `c` must be a live campaign handle; paths NUL-terminated or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn ams_campaign_write(
    c: *const AmsCampaign,
    transcripts_path: *const c_char,
    sidecar_path: *const c_char,
) -> AmsStatus {
    guard(|| {
        let c = borrow(c, "campaign")?;
        let tp = text(transcripts_path, "transcripts_path")?;
        write_jsonl(tp, &c.transcripts)?;
        if !sidecar_path.is_null() {
            write_jsonl(text(sidecar_path, "sidecar_path")?, &c.truth)?;
        }
        Ok(())
    })
}

fn write_jsonl<T: serde::Serialize>(path: &str, records: &[T]) -> Result<(), Fail> {
    let io = |e: std::io::Error| Fail(AmsStatus::Io, format!("{path}: {e}"));
    let mut w = JsonlWriter::create(Path::new(path)).map_err(io)?;
    for r in records {
        w.write(r).map_err(io)?;
    }
    w.finish().map(drop).map_err(io)
}

/// # Safety
/// `c` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ams_campaign_free(c: *mut AmsCampaign) {
    drop_handle(c)
}

/// Attacks the campaign's transcripts only. The ground truth it carries is
/// not consulted.
///
/// # Safety
/// `c` and `cfg` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_attack_run(c: *const AmsCampaign, cfg: *const AmsConfig, out: *mut *mut AmsReport) -> AmsStatus {
    guard(|| {
        let c = borrow(c, "campaign")?;
        let cfg = borrow(cfg, "cfg")?;
        let report = run_attack(&c.transcripts, &cfg.0.attack()).map_err(|e| Fail(AmsStatus::Attack, e.to_string()))?;
        put(out, AmsReport(report))
    })
}

/// # Safety
/// `r` must be null or a live report handle. Null reads as no recovery.
#[no_mangle]
pub unsafe extern "C" fn ams_report_outcome(r: *const AmsReport) -> AmsOutcome {
    match r.as_ref().map(|r| r.0.outcome) {
        Some(Outcome::Full) => AmsOutcome::Full,
        Some(Outcome::Partial(_)) => AmsOutcome::Partial,
        _ => AmsOutcome::None,
    }
}

/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn ams_report_verified_count(r: *const AmsReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.verified.len())
}

/// Full report as JSON; release with [`ams_string_free`].
///
/// # Safety
/// `r` must be a live report handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_report_json(r: *const AmsReport, out: *mut *mut c_char) -> AmsStatus {
    guard(|| {
        let r = borrow(r, "report")?;
        let json = serde_json::to_string(&r.0).map_err(|e| Fail(AmsStatus::Io, e.to_string()))?;
        put_string(out, json)
    })
}

/// Grades a report against the system and the campaign's ground truth.
///
/// # Safety
/// All handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ams_report_grade(
    r: *const AmsReport,
    sys: *const AmsSystem,
    c: *const AmsCampaign,
    out: *mut AmsGrade,
) -> AmsStatus {
    guard(|| {
        let (r, sys, c) = (borrow(r, "report")?, borrow(sys, "sys")?, borrow(c, "campaign")?);
        if out.is_null() {
            return fail(AmsStatus::NullArgument, "out is null");
        }
        let g = grade(&r.0, &sys.0, &c.truth);
        *out = AmsGrade {
            full: g.full,
            a_correct: g.a_correct,
            b_correct: g.b_correct,
            s_correct: g.s_correct,
            id_correct: g.id_correct,
            prediction_correct: g.prediction_correct,
            forgery_accepted: g.forgery_accepted,
            verified_moduli: g.verified_moduli as u64,
            spurious_moduli: g.spurious_moduli.len() as u64,
            sessions_decrypted: g.sessions_decrypted as u64,
            reduced_wrong: g.reduced_wrong as u64,
        };
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ams_report_free(r: *mut AmsReport) {
    drop_handle(r)
}
