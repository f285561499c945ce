//! C ABI over `reddcheck`.
//!
//! Every fallible function returns an [`RcStatus`]; on failure the message is
//! available from [`rc_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use reddcheck::biascorrect::BiasModel;
use reddcheck::credits;
use reddcheck::donorpool::FilterConfig;
use reddcheck::inference::{project_effect, FilterState, ProjectEffect};
use reddcheck::panel::{load_panels, PanelSet};
use reddcheck::scsolver::{FitConfig, Method};
use reddcheck::simgen::{generate, ScenarioSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Ingest = 3,
    Solver = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcMethod {
    Scm = 0,
    Ascm = 1,
}

impl From<RcMethod> for Method {
    fn from(m: RcMethod) -> Self {
        match m {
            RcMethod::Scm => Method::Scm,
            RcMethod::Ascm => Method::Ascm,
        }
    }
}

/// A loaded or simulated set of project and donor panels.
pub struct RcPanelSet {
    inner: PanelSet,
}

/// A synthetic-control fit of one project on its pre-treatment years.
pub struct RcFit {
    inner: ProjectEffect,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(RcStatus, String);

fn fail<T>(status: RcStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside reddcheck");
            RcStatus::Panic
        }
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(RcStatus::NullPointer, "output pointer is null");
    }
    out.write(value);
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(RcStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(RcStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

fn bias_model(r_d: f64, r_f: f64) -> Result<BiasModel, Failure> {
    BiasModel::new(r_d, r_f).or_else(|e| fail(RcStatus::InvalidArgument, e.to_string()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `r_d - r_f`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn rc_bias_correction_factor(r_d: f64, r_f: f64, out: *mut f64) -> RcStatus {
    guard(|| write_out(out, bias_model(r_d, r_f)?.correction_factor()))
}

/// Observed difference divided by `r_d - r_f`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn rc_bias_correct_difference(
    r_d: f64,
    r_f: f64,
    observed_diff_ha: f64,
    out: *mut f64,
) -> RcStatus {
    guard(|| write_out(out, bias_model(r_d, r_f)?.correct_difference(observed_diff_ha)))
}

/// Expected sensor reading for a site of `area_ha` with `true_defor_ha` lost.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn rc_bias_predicted_deforestation(
    r_d: f64,
    r_f: f64,
    area_ha: f64,
    true_defor_ha: f64,
    out: *mut f64,
) -> RcStatus {
    guard(|| {
        let v = bias_model(r_d, r_f)?
            .predicted_deforestation(area_ha, true_defor_ha)
            .or_else(|e| fail(RcStatus::InvalidArgument, e.to_string()))?;
        write_out(out, v)
    })
}

/// Credits per hectare of avoided deforestation.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn rc_per_hectare_factor(expected_credits: f64, baseline_ha: f64, out: *mut f64) -> RcStatus {
    guard(|| {
        let v = credits::per_hectare_factor(expected_credits, baseline_ha)
            .or_else(|e| fail(RcStatus::InvalidArgument, e.to_string()))?;
        write_out(out, v)
    })
}

/// SC offsets over credited offsets; `over_100` is set when the share exceeds one.
///
/// # Safety
/// `fraction` and `over_100` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rc_percent_real(
    offsets_sc: f64,
    denominator_credits: f64,
    fraction: *mut f64,
    over_100: *mut bool,
) -> RcStatus {
    guard(|| {
        if over_100.is_null() {
            return fail(RcStatus::NullPointer, "over_100 is null");
        }
        let p = credits::percent_real(offsets_sc, denominator_credits)
            .or_else(|e| fail(RcStatus::InvalidArgument, e.to_string()))?;
        write_out(fraction, p.fraction)?;
        write_out(over_100, p.over_100)
    })
}

/// Loads panels from CSV files. `covariates` may be null.
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_panelset_load(
    sites: *const c_char,
    covariates: *const c_char,
    meta: *const c_char,
    out: *mut *mut RcPanelSet,
) -> RcStatus {
    guard(|| {
        let sites = PathBuf::from(str_arg(sites, "sites")?);
        let meta = PathBuf::from(str_arg(meta, "meta")?);
        let cov = if covariates.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(covariates, "covariates")?))
        };
        let set = load_panels(&sites, cov.as_deref(), &meta).or_else(|e| fail(RcStatus::Ingest, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(RcPanelSet { inner: set })))
    })
}

/// Generates a synthetic panel from a JSON scenario (fields as in the
/// `simulate` subcommand). An empty object gives the default scenario.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_panelset_simulate(spec_json: *const c_char, out: *mut *mut RcPanelSet) -> RcStatus {
    guard(|| {
        let text = str_arg(spec_json, "spec_json")?;
        let spec: ScenarioSpec = if text.trim() == "{}" {
            ScenarioSpec::default()
        } else {
            serde_json::from_str(text).or_else(|e| fail(RcStatus::InvalidArgument, e.to_string()))?
        };
        let sc = generate(&spec).or_else(|e| fail(RcStatus::InvalidArgument, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(RcPanelSet { inner: sc.panels })))
    })
}

/// # Safety
/// `set` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rc_panelset_free(set: *mut RcPanelSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_panelset_project_count(set: *const RcPanelSet, out: *mut usize) -> RcStatus {
    guard(|| {
        let set = set.as_ref().ok_or(Failure(RcStatus::NullPointer, "set is null".into()))?;
        write_out(out, set.inner.projects.len())
    })
}

/// # Safety
/// `set` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_panelset_donor_count(set: *const RcPanelSet, out: *mut usize) -> RcStatus {
    guard(|| {
        let set = set.as_ref().ok_or(Failure(RcStatus::NullPointer, "set is null".into()))?;
        write_out(out, set.inner.donors.len())
    })
}

/// Fits one project on its pre-treatment years with the default donor filter
/// (or none when `filter` is false) and default solver settings.
///
/// # Safety
/// `set`, `project_id` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_project(
    set: *const RcPanelSet,
    project_id: *const c_char,
    method: RcMethod,
    filter: bool,
    out: *mut *mut RcFit,
) -> RcStatus {
    guard(|| {
        let set = set.as_ref().ok_or(Failure(RcStatus::NullPointer, "set is null".into()))?;
        let id = str_arg(project_id, "project_id")?;
        let project = set
            .inner
            .project(id)
            .ok_or_else(|| Failure(RcStatus::InvalidArgument, format!("unknown project {id}")))?;
        let state = if filter { FilterState::With } else { FilterState::Without };
        let base = FitConfig::new(method.into(), project.meta.start_year - 1);
        let effect = project_effect(
            &set.inner,
            project,
            &base,
            method.into(),
            &FilterConfig::default(),
            state,
            None,
        )
        .or_else(|e| fail(RcStatus::Solver, e))?;
        write_out(out, Box::into_raw(Box::new(RcFit { inner: effect })))
    })
}

/// # Safety
/// `fit` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_free(fit: *mut RcFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

unsafe fn fit_ref<'a>(fit: *const RcFit) -> Result<&'a RcFit, Failure> {
    fit.as_ref().ok_or(Failure(RcStatus::NullPointer, "fit is null".into()))
}

/// # Safety
/// `fit` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_donor_count(fit: *const RcFit, out: *mut usize) -> RcStatus {
    guard(|| write_out(out, fit_ref(fit)?.inner.fit.donor_ids.len()))
}

/// Copies the donor weights into `buf`. Returns `BUFFER_TOO_SMALL` when `len`
/// is less than the donor count.
///
/// # Safety
/// `buf` must point to at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_weights(fit: *const RcFit, buf: *mut f64, len: usize) -> RcStatus {
    guard(|| {
        let w = &fit_ref(fit)?.inner.fit.weights;
        if buf.is_null() {
            return fail(RcStatus::NullPointer, "buf is null");
        }
        if len < w.len() {
            return fail(RcStatus::BufferTooSmall, format!("need {} slots, got {len}", w.len()));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), buf, w.len());
        Ok(())
    })
}

/// Mean post-treatment gap between project and synthetic control (ha).
///
/// # Safety
/// `fit` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_att(fit: *const RcFit, out: *mut f64) -> RcStatus {
    guard(|| write_out(out, fit_ref(fit)?.inner.att.att))
}

/// Pre-treatment RMSPE of the fit (ha).
///
/// # Safety
/// `fit` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_train_rmspe(fit: *const RcFit, out: *mut f64) -> RcStatus {
    guard(|| write_out(out, fit_ref(fit)?.inner.fit.train_rmspe))
}
