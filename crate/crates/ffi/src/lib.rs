//! C ABI for `cfris`.
//!
//! Configurations are opaque handles created by one of the `cfris_config_*`
//! constructors and released with [`cfris_config_free`]. Fallible calls
//! return a [`CfrisStatus`]; on failure [`cfris_last_error_message`] returns
//! a description that stays valid until the next failing call on the same
//! thread. Strings returned by the library are released with
//! [`cfris_string_free`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cfris::harness::{run_trial, Method};
use cfris::{Error, SystemConfig};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfrisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidState = 3,
    Config = 4,
    Io = 5,
    Panic = 6,
}

/// Method codes accepted by [`cfris_run_trial`].
pub const CFRIS_METHOD_ARIS: u32 = 0;
pub const CFRIS_METHOD_PRIS: u32 = 1;
pub const CFRIS_METHOD_RND_ARIS: u32 = 2;

/// Opaque configuration handle.
pub struct CfrisConfig {
    inner: SystemConfig,
}

/// Outcome of one trial, re-evaluated independently of the optimizer.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfrisResult {
    pub se_bps_hz: f64,
    pub ee_bps_hz_w: f64,
    pub objective: f64,
    pub p_sys_w: f64,
    pub max_residual: f64,
    pub outer_iters: u32,
    /// 1 if every constraint holds to 1e-6 relative, 0 otherwise.
    pub feasible: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> CfrisStatus {
    match e {
        Error::InvalidArgument(_) => CfrisStatus::InvalidArgument,
        Error::InvalidState(_) => CfrisStatus::InvalidState,
        Error::Config(_) => CfrisStatus::Config,
        Error::Io(_) | Error::Csv(_) => CfrisStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (CfrisStatus, String)>) -> CfrisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfrisStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CfrisStatus::Panic
        }
    }
}

fn lift<T>(r: cfris::Result<T>) -> Result<T, (CfrisStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CfrisStatus, String)> {
    if p.is_null() {
        return Err((CfrisStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (CfrisStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn null_err(what: &str) -> (CfrisStatus, String) {
    (CfrisStatus::NullPointer, format!("{what} is null"))
}

/// Full-scale default configuration. Never returns null.
#[no_mangle]
pub extern "C" fn cfris_config_new_default() -> *mut CfrisConfig {
    Box::into_raw(Box::new(CfrisConfig { inner: SystemConfig::paper() }))
}

/// Small configuration for quick runs. Never returns null.
#[no_mangle]
pub extern "C" fn cfris_config_new_desk() -> *mut CfrisConfig {
    Box::into_raw(Box::new(CfrisConfig { inner: SystemConfig::desk() }))
}

/// Parses a TOML configuration into `*out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfris_config_from_toml(text: *const c_char, out: *mut *mut CfrisConfig) -> CfrisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let text = read_str(text, "text")?;
        let cfg = lift(SystemConfig::from_toml(text))?;
        *out = Box::into_raw(Box::new(CfrisConfig { inner: cfg }));
        Ok(())
    })
}

/// Sets one (possibly dotted) key, e.g. `"kappa"`, `"solver.max_outer"`.
///
/// # Safety
/// `cfg` must come from a `cfris_config_*` constructor; `key` and `value`
/// must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cfris_config_set(
    cfg: *mut CfrisConfig,
    key: *const c_char,
    value: *const c_char,
) -> CfrisStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null_err("cfg"))?;
        let key = read_str(key, "key")?;
        let value = read_str(value, "value")?;
        lift(cfg.inner.set(key, value))
    })
}

/// Serializes the configuration; release the string with
/// [`cfris_string_free`]. Returns null on error.
///
/// # Safety
/// `cfg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cfris_config_to_toml(cfg: *const CfrisConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => CString::new(c.inner.to_toml()).map(CString::into_raw).unwrap_or(ptr::null_mut()),
        None => {
            set_error("cfg is null");
            ptr::null_mut()
        }
    }
}

/// Releases a configuration handle. Null is ignored.
///
/// # Safety
/// `cfg` must come from a `cfris_config_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn cfris_config_free(cfg: *mut CfrisConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one method (`CFRIS_METHOD_*`) on the channel draw of `seed`.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfris_run_trial(
    cfg: *const CfrisConfig,
    method: u32,
    seed: u64,
    out: *mut CfrisResult,
) -> CfrisStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null_err("cfg"))?;
        let out = out.as_mut().ok_or_else(|| null_err("out"))?;
        let method = match method {
            CFRIS_METHOD_ARIS => Method::Aris,
            CFRIS_METHOD_PRIS => Method::Pris,
            CFRIS_METHOD_RND_ARIS => Method::RndAris,
            m => return Err((CfrisStatus::InvalidArgument, format!("unknown method code {m}"))),
        };
        let row = lift(run_trial(&cfg.inner, method, seed))?.row;
        *out = CfrisResult {
            se_bps_hz: row.se,
            ee_bps_hz_w: row.ee,
            objective: row.objective,
            p_sys_w: row.p_sys,
            max_residual: row.max_residual,
            outer_iters: row.outer_iters,
            feasible: row.feasible as u8,
        };
        Ok(())
    })
}

/// Path loss amplitude at `freq_hz` over `dist_m`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfris_path_loss(
    freq_hz: f64,
    dist_m: f64,
    absorption_per_m: f64,
    out: *mut f64,
) -> CfrisStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_err("out"))?;
        *out = lift(cfris::channel::path_loss(freq_hz, dist_m, absorption_per_m))?;
        Ok(())
    })
}

/// Power of one DAC (W).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfris_dac_power(sampling_rate_hz: f64, bits: u32, out: *mut f64) -> CfrisStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_err("out"))?;
        if bits == 0 || !(sampling_rate_hz >= 0.0) {
            return Err((CfrisStatus::InvalidArgument, "bits must be >= 1 and the sampling rate >= 0".into()));
        }
        *out = cfris::metrics::dac_power(sampling_rate_hz, bits);
        Ok(())
    })
}

/// Quantization distortion factor of a `bits`-bit DAC.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfris_distortion_factor(bits: u32, out: *mut f64) -> CfrisStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_err("out"))?;
        *out = lift(cfris::quantization::distortion_factor(bits))?;
        Ok(())
    })
}

/// Message of the last failure on this thread, or null.
#[no_mangle]
pub extern "C" fn cfris_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn cfris_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
