use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dcattack_ffi::*;

fn case_path(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/pglib").join(format!("pglib_opf_case{name}.m"));
    CString::new(p.to_str().unwrap()).unwrap()
}

fn load(name: &str) -> *mut DcCase {
    let mut case = ptr::null_mut();
    assert_eq!(unsafe { dcattack_case_load(case_path(name).as_ptr(), &mut case) }, DcStatus::Ok);
    case
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dcattack_last_error()) }.to_str().unwrap().to_string()
}

#[test]
fn missing_file_reports_io_status() {
    let path = CString::new("/no/such/case.m").unwrap();
    let mut case = ptr::null_mut();
    let status = unsafe { dcattack_case_load(path.as_ptr(), &mut case) };
    assert_eq!(status, DcStatus::Io);
    assert!(case.is_null());
    assert!(last_error().contains("/no/such/case.m"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut case = ptr::null_mut();
    assert_eq!(unsafe { dcattack_case_load(ptr::null(), &mut case) }, DcStatus::NullPointer);
    assert_eq!(unsafe { dcattack_model_build(ptr::null(), -1, ptr::null_mut()) }, DcStatus::NullPointer);
    assert!(unsafe { dcattack_policy_radius(ptr::null()) }.is_nan());
    unsafe {
        dcattack_case_free(ptr::null_mut());
        dcattack_string_free(ptr::null_mut());
    }
}

#[test]
fn json_round_trip_through_handles() {
    let case = load("5_pjm");
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dcattack_case_to_json(case, &mut json) }, DcStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { dcattack_case_from_json(json, &mut back) }, DcStatus::Ok);
    assert_eq!(unsafe { dcattack_case_bus_count(back) }, 5);

    let bad = CString::new("{\"name\":").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { dcattack_case_from_json(bad.as_ptr(), &mut none) }, DcStatus::Parse);
    unsafe {
        dcattack_string_free(json);
        dcattack_case_free(back);
        dcattack_case_free(case);
    }
}

#[test]
fn defend_then_attack_on_pjm5() {
    let case = load("5_pjm");
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dcattack_model_build(case, -1, &mut model) }, DcStatus::Ok);
    let (mut rows, mut n_p, mut n_delta) = (0, 0, 0);
    assert_eq!(unsafe { dcattack_model_dims(model, &mut rows, &mut n_p, &mut n_delta) }, DcStatus::Ok);
    assert!(rows > 0 && n_delta > 0);

    let mut policy = ptr::null_mut();
    assert_eq!(unsafe { dcattack_defend(model, &mut policy) }, DcStatus::Ok);
    let t = unsafe { dcattack_policy_radius(policy) };
    assert!((t - 6.29).abs() / 6.29 < 0.02, "{t}");

    let mut p0 = vec![0.0; n_p];
    assert_eq!(unsafe { dcattack_policy_p0(policy, p0.as_mut_ptr(), p0.len()) }, DcStatus::Ok);
    let mut g = vec![0.0; n_p * n_delta];
    assert_eq!(unsafe { dcattack_policy_g(policy, g.as_mut_ptr(), g.len()) }, DcStatus::Ok);
    assert_eq!(unsafe { dcattack_policy_g(policy, g.as_mut_ptr(), 1) }, DcStatus::InvalidArgument);

    let mut worst = f64::NAN;
    assert_eq!(unsafe { dcattack_policy_verify(model, policy, 500, 3, &mut worst) }, DcStatus::Ok);
    assert!(worst <= 1e-8);

    // the nominal point is feasible
    let delta0 = vec![0.0; n_delta];
    let mut r = vec![0.0; rows];
    let status = unsafe { dcattack_model_residual(model, p0.as_ptr(), n_p, delta0.as_ptr(), n_delta, r.as_mut_ptr(), rows) };
    assert_eq!(status, DcStatus::Ok);
    assert!(r.iter().all(|&v| v <= 1e-8));

    let mut opts = dcattack_attack_default_options();
    opts.seed = 5;
    let mut delta = vec![0.0; n_delta];
    let mut res = DcAttackResult { norm_sq: 0.0, certified: false, n_delta: 0 };
    assert_eq!(unsafe { dcattack_attack(model, &opts, delta.as_mut_ptr(), delta.len(), &mut res) }, DcStatus::Ok);
    assert!(res.certified);
    assert_eq!(res.n_delta, n_delta);
    assert!(res.norm_sq >= t - 1e-6);
    let sq: f64 = delta.iter().map(|d| d * d).sum();
    assert!((sq - res.norm_sq).abs() <= 1e-9 * (1.0 + sq));

    unsafe {
        dcattack_policy_free(policy);
        dcattack_model_free(model);
        dcattack_case_free(case);
    }
}

#[test]
fn squeeze_summary_and_json() {
    let case = load("14_ieee");
    let mut opts = dcattack_squeeze_default_options();
    opts.seed = 1;
    let mut bounds = ptr::null_mut();
    assert_eq!(unsafe { dcattack_squeeze(case, &opts, &mut bounds) }, DcStatus::Ok);
    let mut s = DcBoundsSummary { lb: 0.0, ub: 0.0, gap: 0.0, matched: false, rounds: 0, elapsed_seconds: 0.0 };
    assert_eq!(unsafe { dcattack_bounds_summary(bounds, &mut s) }, DcStatus::Ok);
    assert!(s.lb <= s.ub + 1e-6);
    assert!((s.ub - 0.178).abs() / 0.178 < 0.01, "{s:?}");

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dcattack_bounds_to_json(bounds, &mut json) }, DcStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap();
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    assert_eq!(v["lb"].as_f64().unwrap(), s.lb);
    unsafe {
        dcattack_string_free(json);
        dcattack_bounds_free(bounds);
        dcattack_case_free(case);
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(dcattack_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_is_valid_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/dcattack.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["dcattack_case_load", "dcattack_squeeze", "DC_STATUS_PANIC", "typedef struct DcModel DcModel"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99"]).arg(&header).output() else {
        eprintln!("cc not available, skipping compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
