use std::ffi::{CStr, CString};
use std::ptr;

use active_rheology_ffi::*;

fn last_error() -> String {
    let p = ar_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn config_round_trip_and_hash() {
    let cfg = ar_config_default();
    let mut buf = vec![0 as std::ffi::c_char; 65];
    let mut needed = 0usize;
    unsafe {
        assert_eq!(ar_config_hash(cfg, buf.as_mut_ptr(), buf.len(), &mut needed), ArStatus::Ok);
        assert_eq!(needed, 65);
        let h = CStr::from_ptr(buf.as_ptr()).to_str().unwrap().to_string();
        assert_eq!(h, active_rheology::config::RunConfig::shipped().hash());
        // size query, then the full JSON
        assert_eq!(ar_config_to_json(cfg, buf.as_mut_ptr(), 4, &mut needed), ArStatus::BufferTooSmall);
        let mut json = vec![0 as std::ffi::c_char; needed];
        assert_eq!(ar_config_to_json(cfg, json.as_mut_ptr(), json.len(), ptr::null_mut()), ArStatus::Ok);
        let text = CStr::from_ptr(json.as_ptr());
        let mut again = ptr::null_mut();
        assert_eq!(ar_config_from_json(text.as_ptr(), &mut again), ArStatus::Ok);
        assert_eq!(ar_config_hash(again, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), ArStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), active_rheology::config::RunConfig::shipped().hash());
        ar_config_free(again);
        ar_config_free(cfg);
    }
}

#[test]
fn bad_config_reports_the_key() {
    let json = CString::new(r#"{"physics": {"kapa": 1}}"#).unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { ar_config_from_json(json.as_ptr(), &mut out) };
    assert_eq!(s, ArStatus::Parse);
    assert!(out.is_null());
    assert!(last_error().contains("kapa"));
    ar_clear_error();
    assert!(ar_last_error_message().is_null());
}

#[test]
fn null_pointers_are_rejected() {
    unsafe {
        assert_eq!(ar_config_from_json(ptr::null(), ptr::null_mut()), ArStatus::NullPointer);
        assert_eq!(ar_ensemble_len(ptr::null()), 0);
        let mut v = 0.0;
        assert_eq!(ar_ensemble_volume_fraction(ptr::null(), &mut v), ArStatus::NullPointer);
        assert!(last_error().contains("ensemble"));
        ar_config_free(ptr::null_mut());
        ar_ensemble_free(ptr::null_mut());
    }
}

#[test]
fn ensemble_handle_matches_the_library() {
    let mut e = ptr::null_mut();
    unsafe {
        assert_eq!(ar_ensemble_sample(2, 24.0, 0.03, 0.5, 7, &mut e), ArStatus::Ok);
        let direct = active_rheology::ensemble::sample_hardcore(2, 24.0, 0.03, 0.5, 7).unwrap();
        assert_eq!(ar_ensemble_len(e), direct.len());
        assert!(direct.len() > 0);
        let mut c = [0.0; 3];
        assert_eq!(ar_ensemble_center(e, 0, c.as_mut_ptr()), ArStatus::Ok);
        assert_eq!(c, direct.particles[0].center);
        assert_eq!(ar_ensemble_center(e, direct.len(), c.as_mut_ptr()), ArStatus::InvalidArgument);
        let mut vf = 0.0;
        assert_eq!(ar_ensemble_volume_fraction(e, &mut vf), ArStatus::Ok);
        let oracle = direct.len() as f64 * std::f64::consts::PI / (24.0 * 24.0);
        assert!((vf - oracle).abs() < 1e-14);
        assert_eq!(ar_ensemble_audit(e), ArStatus::Ok);
        ar_ensemble_free(e);
        assert_eq!(ar_ensemble_sample(4, 24.0, 0.03, 0.5, 7, &mut e), ArStatus::InvalidArgument);
        assert!(e.is_null());
        assert!(last_error().contains("dim"));
    }
}

#[test]
fn closed_form_through_the_abi() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(ar_pusher_puller_shear(1.0, 2.0, 1.0, 1.0, 3, &mut v), ArStatus::Ok);
        assert!((v - 0.734375).abs() < 1e-12);
        assert_eq!(ar_pusher_puller_shear(1.0, 0.5, 1.0, 1.0, 3, &mut v), ArStatus::InvalidArgument);
    }
}

#[test]
fn dilute_through_the_abi() {
    let cfg = ar_config_default();
    let (mut s, mut m) = (0.0, 0.0);
    unsafe {
        assert_eq!(ar_dilute(cfg, &mut s, &mut m), ArStatus::Ok);
        ar_config_free(cfg);
    }
    let r = active_rheology::dilute::dilute_report(&active_rheology::config::RunConfig::shipped().dilute_settings()).unwrap();
    assert_eq!(s, r.shear_scalar);
    assert_eq!(m, r.reduction.margin);
    // pusher: negative shear scalar
    assert!(s < 0.0);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ar_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/active_rheology.h")).unwrap();
    for name in [
        "ar_last_error_message",
        "ar_config_from_json",
        "ar_config_free",
        "ar_ensemble_sample",
        "ar_ensemble_free",
        "ar_pusher_puller_shear",
        "ar_verify",
        "AR_STATUS_OK = 0",
        "typedef struct ArConfig ArConfig",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C client against the static library when a C compiler is present.
#[test]
fn c_client_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| std::process::Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler found; C client not built");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libactive_rheology_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <math.h>
#include "active_rheology.h"
int main(void) {
    double v = 0.0;
    if (ar_pusher_puller_shear(1.0, 2.0, 1.0, 1.0, 3, &v) != AR_STATUS_OK) return 2;
    if (fabs(v - 0.734375) > 1e-12) return 3;
    ArConfig *cfg = NULL;
    if (ar_config_from_json("{\"bogus\": 1}", &cfg) != AR_STATUS_PARSE || cfg != NULL) return 4;
    if (ar_last_error_message() == NULL) return 5;
    ArEnsemble *e = NULL;
    if (ar_ensemble_sample(2, 24.0, 0.03, 0.5, 7, &e) != AR_STATUS_OK) return 6;
    if (ar_ensemble_len(e) == 0) return 7;
    ar_ensemble_free(e);
    printf("ok %s\n", ar_version());
    return 0;
}
"#,
    )
    .unwrap();
    let out = dir.path().join("client");
    let st = std::process::Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success(), "C client failed to build");
    let run = std::process::Command::new(&out).output().unwrap();
    assert!(run.status.success(), "C client exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
