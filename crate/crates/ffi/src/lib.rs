//! C ABI for `dcattack`.
//!
//! Objects cross the boundary as opaque handles created by `*_load`,
//! `*_build` or a solver call and released by the matching `*_free`.
//! Every fallible call returns a [`DcStatus`]; on failure the message is
//! available from [`dcattack_last_error`] on the calling thread.
//! Strings returned through `char **` out-parameters are owned by the caller
//! and released with [`dcattack_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dcattack::attack::{multistart_attack, AttackConfig};
use dcattack::case::load_case;
use dcattack::defense::{defense_local, verify_policy, warm_start_defense, DefenseOptions, DefensePolicy};
use dcattack::model::build_model;
use dcattack::squeeze::{squeeze_run, BoundsReport, SqueezeConfig};
use dcattack::{Error, FeasibilityMatrices, NetworkCase, NumericPolicy};
use nalgebra::DVector;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Model = 6,
    Solver = 7,
    Attack = 8,
    Defense = 9,
    Invariant = 10,
    Json = 11,
    Panic = 12,
}

impl DcStatus {
    fn of(e: &Error) -> Self {
        match e.kind() {
            "io" => Self::Io,
            "parse" => Self::Parse,
            "validation" => Self::Validation,
            "model" => Self::Model,
            "solver" => Self::Solver,
            "attack" => Self::Attack,
            "defense" => Self::Defense,
            "invariant" => Self::Invariant,
            _ => Self::Json,
        }
    }
}

/// Parsed network case.
pub struct DcCase(NetworkCase);

/// Feasibility matrices of a case for a fixed slack generator.
pub struct DcModel(FeasibilityMatrices);

/// Affine generation policy with its certified radius.
pub struct DcPolicy(DefensePolicy);

/// Result of a squeeze run.
pub struct DcBounds(BoundsReport);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DcAttackOptions {
    pub eps: f64,
    pub restarts: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DcAttackResult {
    /// `δᵀδ` of the best certified perturbation.
    pub norm_sq: f64,
    pub certified: bool,
    /// Length of the perturbation vector (load buses).
    pub n_delta: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DcSqueezeOptions {
    pub budget_seconds: f64,
    pub match_threshold: f64,
    pub eps: f64,
    pub restarts: u32,
    pub seed: u64,
    pub verify_samples: u32,
    /// Slack generator index, or -1 for the default choice.
    pub slack_gen: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DcBoundsSummary {
    pub lb: f64,
    /// NaN when no attack was certified.
    pub ub: f64,
    pub gap: f64,
    pub matched: bool,
    pub rounds: usize,
    pub elapsed_seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (DcStatus, String)>) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DcStatus::Panic
        }
    }
}

fn fail(e: impl Into<Error>) -> (DcStatus, String) {
    let e = e.into();
    (DcStatus::of(&e), e.to_string())
}

fn null(what: &str) -> (DcStatus, String) {
    (DcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (DcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (DcStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (DcStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), (DcStatus, String)> {
    let slot = out_ptr(out, "output string")?;
    let c = CString::new(s).map_err(|_| (DcStatus::InvalidArgument, "string contains NUL".to_string()))?;
    *slot = c.into_raw();
    Ok(())
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), (DcStatus, String)> {
    if len < src.len() {
        return Err((DcStatus::InvalidArgument, format!("buffer holds {len} values, need {}", src.len())));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dcattack_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread (empty after a success).
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn dcattack_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a MATPOWER `.m` or canonical `.json` case.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcattack_case_load(path: *const c_char, out: *mut *mut DcCase) -> DcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out_ptr(out, "out")?;
        let case = load_case(path).map_err(fail)?;
        *slot = Box::into_raw(Box::new(DcCase(case)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcattack_case_from_json(json: *const c_char, out: *mut *mut DcCase) -> DcStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let slot = out_ptr(out, "out")?;
        let case = NetworkCase::from_json(text).map_err(fail)?;
        *slot = Box::into_raw(Box::new(DcCase(case)));
        Ok(())
    })
}

/// Canonical JSON of the case; free with [`dcattack_string_free`].
///
/// # Safety
/// `case` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcattack_case_to_json(case: *const DcCase, out: *mut *mut c_char) -> DcStatus {
    guard(|| {
        let case = handle(case, "case")?;
        write_string(out, case.0.to_json().map_err(fail)?)
    })
}

/// # Safety
/// `case` must be a live handle; it may be null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_case_bus_count(case: *const DcCase) -> usize {
    case.as_ref().map_or(0, |c| c.0.buses.len())
}

/// # Safety
/// `case` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn dcattack_case_free(case: *mut DcCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// Builds `A p + B δ + c <= 0`. `slack_gen < 0` picks the default slack.
///
/// # Safety
/// `case` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcattack_model_build(case: *const DcCase, slack_gen: i64, out: *mut *mut DcModel) -> DcStatus {
    guard(|| {
        let case = handle(case, "case")?;
        let slot = out_ptr(out, "out")?;
        let slack = usize::try_from(slack_gen).ok();
        let mats = build_model(&case.0, slack).map_err(fail)?;
        *slot = Box::into_raw(Box::new(DcModel(mats)));
        Ok(())
    })
}

/// Row count, reduced generator count and perturbation length.
///
/// # Safety
/// `model` must be a live handle; the out-pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_model_dims(model: *const DcModel, rows: *mut usize, n_p: *mut usize, n_delta: *mut usize) -> DcStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        for (p, v) in [(rows, m.rows()), (n_p, m.n_p()), (n_delta, m.n_delta())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Writes `A p + B δ + c` into `out` (length at least `rows`).
///
/// # Safety
/// `p` and `delta` must point to `n_p` and `n_delta` values, `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn dcattack_model_residual(
    model: *const DcModel,
    p: *const f64,
    n_p: usize,
    delta: *const f64,
    n_delta: usize,
    out: *mut f64,
    out_len: usize,
) -> DcStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        if n_p != m.n_p() || n_delta != m.n_delta() {
            return Err((DcStatus::InvalidArgument, format!("expected n_p {} and n_delta {}", m.n_p(), m.n_delta())));
        }
        let slice = |ptr: *const f64, n: usize, what: &str| -> Result<DVector<f64>, (DcStatus, String)> {
            if n == 0 {
                return Ok(DVector::zeros(0));
            }
            if ptr.is_null() {
                return Err(null(what));
            }
            Ok(DVector::from_column_slice(std::slice::from_raw_parts(ptr, n)))
        };
        let r = m.residual(&slice(p, n_p, "p")?, &slice(delta, n_delta, "delta")?);
        copy_out(r.as_slice(), out, out_len)
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_model_free(model: *mut DcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub extern "C" fn dcattack_attack_default_options() -> DcAttackOptions {
    let d = AttackConfig::default();
    DcAttackOptions { eps: d.eps, restarts: d.restarts as u32, seed: d.seed }
}

/// Multistart attack. The best certified perturbation is written to `delta`
/// (length at least `n_delta`).
///
/// # Safety
/// `model` must be a live handle, `options` may be null for defaults,
/// `delta` must hold `delta_len` values and `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dcattack_attack(
    model: *const DcModel,
    options: *const DcAttackOptions,
    delta: *mut f64,
    delta_len: usize,
    result: *mut DcAttackResult,
) -> DcStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let result = out_ptr(result, "result")?;
        let o = options.as_ref().copied().unwrap_or_else(|| dcattack_attack_default_options());
        let cfg = AttackConfig { eps: o.eps, restarts: o.restarts as usize, seed: o.seed, ..Default::default() };
        let run = multistart_attack(m, &cfg, &[], &NumericPolicy::default()).map_err(fail)?;
        copy_out(&run.best.delta, delta, delta_len)?;
        *result = DcAttackResult { norm_sq: run.best.norm_sq, certified: run.best.certified, n_delta: run.best.delta.len() };
        Ok(())
    })
}

/// Warm start followed by the local radius optimization.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcattack_defend(model: *const DcModel, out: *mut *mut DcPolicy) -> DcStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let slot = out_ptr(out, "out")?;
        let numeric = NumericPolicy::default();
        let warm = warm_start_defense(m, &numeric).map_err(fail)?;
        let policy = defense_local(m, &warm, &DefenseOptions::default(), &numeric).map_err(fail)?;
        *slot = Box::into_raw(Box::new(DcPolicy(policy)));
        Ok(())
    })
}

/// Certified radius `t` (squared norm), or NaN for a null handle.
///
/// # Safety
/// `policy` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_policy_radius(policy: *const DcPolicy) -> f64 {
    policy.as_ref().map_or(f64::NAN, |p| p.0.t)
}

/// Copies `p0` (length `n_p`).
///
/// # Safety
/// `policy` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dcattack_policy_p0(policy: *const DcPolicy, out: *mut f64, len: usize) -> DcStatus {
    guard(|| copy_out(handle(policy, "policy")?.0.p0.as_slice(), out, len))
}

/// Copies `G` row-major (`n_p x n_delta`).
///
/// # Safety
/// `policy` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dcattack_policy_g(policy: *const DcPolicy, out: *mut f64, len: usize) -> DcStatus {
    guard(|| {
        let g = &handle(policy, "policy")?.0.g;
        let row_major: Vec<f64> = g.transpose().as_slice().to_vec();
        copy_out(&row_major, out, len)
    })
}

/// Sampled verification of the policy on its ball; fails with
/// [`DcStatus::Defense`] when any sample is infeasible.
///
/// # Safety
/// Handles must be live; `max_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_policy_verify(
    model: *const DcModel,
    policy: *const DcPolicy,
    samples: usize,
    seed: u64,
    max_residual: *mut f64,
) -> DcStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let p = &handle(policy, "policy")?.0;
        let v = verify_policy(m, p, samples, seed, &[], &NumericPolicy::default()).map_err(fail)?;
        if let Some(out) = max_residual.as_mut() {
            *out = v.max_residual;
        }
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_policy_free(policy: *mut DcPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

#[no_mangle]
pub extern "C" fn dcattack_squeeze_default_options() -> DcSqueezeOptions {
    let d = SqueezeConfig::default();
    DcSqueezeOptions {
        budget_seconds: d.budget,
        match_threshold: d.match_threshold,
        eps: d.attack.eps,
        restarts: d.attack.restarts as u32,
        seed: d.attack.seed,
        verify_samples: d.verify_samples as u32,
        slack_gen: -1,
    }
}

/// Alternates attack and defense until the bounds meet or a stop rule fires.
///
/// # Safety
/// `case` must be a live handle, `options` may be null, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dcattack_squeeze(case: *const DcCase, options: *const DcSqueezeOptions, out: *mut *mut DcBounds) -> DcStatus {
    guard(|| {
        let case = handle(case, "case")?;
        let slot = out_ptr(out, "out")?;
        let o = options.as_ref().copied().unwrap_or_else(|| dcattack_squeeze_default_options());
        let mut cfg = SqueezeConfig {
            budget: o.budget_seconds,
            match_threshold: o.match_threshold,
            verify_samples: o.verify_samples as usize,
            slack_gen: usize::try_from(o.slack_gen).ok(),
            ..Default::default()
        };
        cfg.attack.eps = o.eps;
        cfg.attack.restarts = o.restarts as usize;
        cfg.attack.seed = o.seed;
        let report = squeeze_run(&case.0, &cfg).map_err(fail)?;
        *slot = Box::into_raw(Box::new(DcBounds(report)));
        Ok(())
    })
}

/// # Safety
/// `bounds` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dcattack_bounds_summary(bounds: *const DcBounds, out: *mut DcBoundsSummary) -> DcStatus {
    guard(|| {
        let r = &handle(bounds, "bounds")?.0;
        *out_ptr(out, "out")? = DcBoundsSummary {
            lb: r.lb,
            ub: r.ub.unwrap_or(f64::NAN),
            gap: r.gap.unwrap_or(f64::NAN),
            matched: r.matched,
            rounds: r.rounds,
            elapsed_seconds: r.elapsed,
        };
        Ok(())
    })
}

/// Full bounds report as JSON; free with [`dcattack_string_free`].
///
/// # Safety
/// `bounds` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dcattack_bounds_to_json(bounds: *const DcBounds, out: *mut *mut c_char) -> DcStatus {
    guard(|| {
        let r = &handle(bounds, "bounds")?.0;
        write_string(out, serde_json::to_string_pretty(r).map_err(fail)?)
    })
}

/// # Safety
/// `bounds` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn dcattack_bounds_free(bounds: *mut DcBounds) {
    if !bounds.is_null() {
        drop(Box::from_raw(bounds));
    }
}
