//! C ABI over the active-rheology library.
//!
//! Conventions: objects are opaque handles created by `ar_*_new`/`ar_*_from_*`
//! and released by the matching `ar_*_free`; fallible calls return an
//! [`ArStatus`] and write results through out-pointers; the message of the
//! most recent failure on the calling thread is available from
//! [`ar_last_error_message`]. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use active_rheology::config::RunConfig;
use active_rheology::dilute::{dilute_report, pusher_puller_shear};
use active_rheology::ensemble::{sample_hardcore, ParticleEnsemble};
use active_rheology::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Infeasible = 4,
    SolverFailure = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

/// Validated run configuration.
pub struct ArConfig(RunConfig);

/// Particle configuration on a torus.
pub struct ArEnsemble(ParticleEnsemble);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ArStatus {
    match e {
        Error::InvalidParameter { .. } | Error::ShapeMismatch(_) | Error::UnderResolved { .. } => ArStatus::InvalidArgument,
        Error::Parse { .. } => ArStatus::Parse,
        Error::DensityInfeasible { .. } | Error::Support(_) => ArStatus::Infeasible,
        Error::Stagnation { .. } | Error::Divergence { .. } => ArStatus::SolverFailure,
        Error::Io(_) => ArStatus::Io,
        Error::Inconsistent(_) => ArStatus::Other,
    }
}

/// Runs `f`, converting library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ArStatus, String)>) -> ArStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(format!("panic: {}", msg.unwrap_or_else(|| "unknown".into())));
            ArStatus::Panic
        }
    }
}

fn lib<T>(r: active_rheology::Result<T>) -> Result<T, (ArStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (ArStatus, String) {
    (ArStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ArStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (ArStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies `s` plus a terminating nul into `buf`; `needed` receives the full size.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), (ArStatus, String)> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < s.len() + 1 {
        return Err((ArStatus::BufferTooSmall, format!("need {} bytes, have {len}", s.len() + 1)));
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn ar_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Clears the stored error message.
#[no_mangle]
pub extern "C" fn ar_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The shipped default configuration.
#[no_mangle]
pub extern "C" fn ar_config_default() -> *mut ArConfig {
    Box::into_raw(Box::new(ArConfig(RunConfig::shipped())))
}

/// Parses and validates a JSON configuration (unknown keys rejected).
#[no_mangle]
pub unsafe extern "C" fn ar_config_from_json(json: *const c_char, out: *mut *mut ArConfig) -> ArStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let cfg = lib(RunConfig::from_json(text))?;
        *out = Box::into_raw(Box::new(ArConfig(cfg)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ar_config_free(cfg: *mut ArConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Hex SHA-256 of the configuration (65 bytes with the nul).
#[no_mangle]
pub unsafe extern "C" fn ar_config_hash(cfg: *const ArConfig, buf: *mut c_char, len: usize, needed: *mut usize) -> ArStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        write_str(&cfg.0.hash(), buf, len, needed)
    })
}

/// Resolved configuration as pretty JSON.
#[no_mangle]
pub unsafe extern "C" fn ar_config_to_json(cfg: *const ArConfig, buf: *mut c_char, len: usize, needed: *mut usize) -> ArStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        write_str(&cfg.0.to_json(), buf, len, needed)
    })
}

/// Hardcore sample of unit spheres with intensity `lambda1` on the torus of side `side`.
#[no_mangle]
pub unsafe extern "C" fn ar_ensemble_sample(
    dim: usize,
    side: f64,
    lambda1: f64,
    hardcore: f64,
    seed: u64,
    out: *mut *mut ArEnsemble,
) -> ArStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let e = lib(sample_hardcore(dim, side, lambda1, hardcore, seed))?;
        *out = Box::into_raw(Box::new(ArEnsemble(e)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ar_ensemble_free(e: *mut ArEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Number of particles; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ar_ensemble_len(e: *const ArEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn ar_ensemble_volume_fraction(e: *const ArEnsemble, out: *mut f64) -> ArStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = e.0.volume_fraction();
        Ok(())
    })
}

/// Center of particle `i` into `center[0..3]` (unused components zero).
#[no_mangle]
pub unsafe extern "C" fn ar_ensemble_center(e: *const ArEnsemble, i: usize, center: *mut f64) -> ArStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        if center.is_null() {
            return Err(null("center"));
        }
        let p = e.0.particles.get(i).ok_or_else(|| (ArStatus::InvalidArgument, format!("particle {i} of {}", e.0.len())))?;
        ptr::copy_nonoverlapping(p.center.as_ptr(), center, 3);
        Ok(())
    })
}

/// Verifies the hardcore invariant; InvalidArgument-class failures describe the offending pair.
#[no_mangle]
pub unsafe extern "C" fn ar_ensemble_audit(e: *const ArEnsemble) -> ArStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        lib(e.0.audit_hardcore())
    })
}

/// Closed-form pusher/puller shear scalar of a point dipole.
#[no_mangle]
pub unsafe extern "C" fn ar_pusher_puller_shear(gamma: f64, r: f64, fmag: f64, s: f64, dim: usize, out: *mut f64) -> ArStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = lib(pusher_puller_shear(gamma, r, fmag, s, dim))?;
        Ok(())
    })
}

/// Dilute quantities for a configuration: E:2B_act^(1)(E) and the viscosity-reduction margin |E|² − E:B_tot(E).
#[no_mangle]
pub unsafe extern "C" fn ar_dilute(cfg: *const ArConfig, shear_scalar: *mut f64, margin: *mut f64) -> ArStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let r = lib(dilute_report(&cfg.0.dilute_settings()))?;
        if let Some(s) = shear_scalar.as_mut() {
            *s = r.shear_scalar;
        }
        if let Some(m) = margin.as_mut() {
            *m = r.reduction.margin;
        }
        Ok(())
    })
}

/// Runs the invariant suite; `passed` receives 1 iff every check passes.
#[no_mangle]
pub unsafe extern "C" fn ar_verify(cfg: *const ArConfig, passed: *mut i32) -> ArStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let passed = passed.as_mut().ok_or_else(|| null("passed"))?;
        *passed = lib(active_rheology::cli::cmd_verify(&cfg.0))?.passed as i32;
        Ok(())
    })
}
