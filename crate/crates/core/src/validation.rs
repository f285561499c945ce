//! Pre-treatment validation of a fitted synthetic control.
//!
//! The pre-treatment period is split into a training window (used to fit the
//! weights) and a validation window that follows it. Three tests compare the
//! project's cumulative deforestation `d_PA` with the synthetic control `d_SC`:
//!
//! * **area test**: the gap in the final validation year as a percentage of
//!   project area must not exceed 0.5 %.
//! * **max-gap test**: `max_t |d_PA(t) - d_SC(t)| / d_PA(t_final)` over the
//!   validation window must be strictly below 0.2.
//! * **RMSPE-ratio test**: `RMSPE(validation) / RMSPE(training)` must not
//!   exceed 5.
//!
//! Gaps are taken on cumulative series, the same quantity the weights were
//! fitted on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::donorpool::{filter_donors, DonorError, DonorSelection, FilterConfig};
use crate::panel::{PanelSet, Project, SitePanel};
use crate::scsolver::{fit, FitConfig, Method, ScFit};

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("window {train_end}/{validation_end} outside fitted years {first}..={last}")]
    WindowOutOfRange {
        train_end: i32,
        validation_end: i32,
        first: i32,
        last: i32,
    },
    #[error("empty {0} window")]
    EmptyWindow(&'static str),
}

/// Training ends at `train_end_year`; validation covers the following years
/// up to and including `validation_end_year`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub train_end_year: i32,
    pub validation_end_year: i32,
}

impl Window {
    /// Splits the years up to `validation_end_year` in half, giving the
    /// earlier (larger, when odd) half to training.
    pub fn halved(first_year: i32, validation_end_year: i32) -> Self {
        let n = validation_end_year - first_year + 1;
        let n_train = (n + 1) / 2;
        Self {
            train_end_year: first_year + n_train - 1,
            validation_end_year,
        }
    }

    pub fn validation_years(&self) -> std::ops::RangeInclusive<i32> {
        (self.train_end_year + 1)..=self.validation_end_year
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Percent of project area.
    pub final_gap_pct_area: f64,
    pub max_gap_ratio: f64,
    pub rmspe_ratio_limit: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            final_gap_pct_area: 0.5,
            max_gap_ratio: 0.2,
            rmspe_ratio_limit: 5.0,
        }
    }
}

impl Thresholds {
    /// Fails strictly above the threshold.
    pub fn final_gap_passes(&self, diff_pct_area: f64) -> bool {
        diff_pct_area.abs() <= self.final_gap_pct_area
    }

    /// Passes strictly below the threshold; NaN fails.
    pub fn max_gap_passes(&self, ratio: f64) -> bool {
        ratio < self.max_gap_ratio
    }

    /// Fails strictly above the threshold; NaN fails.
    pub fn rmspe_ratio_passes(&self, ratio: f64) -> bool {
        ratio <= self.rmspe_ratio_limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalGapResult {
    pub diff_ha: f64,
    pub diff_pct_area: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxGapResult {
    pub max_abs_diff_ha: f64,
    /// NaN when the final validation-year deforestation is zero.
    pub ratio: f64,
    pub pass: bool,
    pub zero_final_deforestation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmspeRatioResult {
    pub rmspe_train: f64,
    pub rmspe_valid: f64,
    /// +inf when training RMSPE is zero and validation RMSPE is not; 0 for a perfect fit.
    pub ratio: f64,
    pub pass: bool,
    pub perfect_fit: bool,
}

fn check_window(fit: &ScFit, window: &Window) -> Result<(), ValidationError> {
    let s = &fit.fitted_series;
    let out = ValidationError::WindowOutOfRange {
        train_end: window.train_end_year,
        validation_end: window.validation_end_year,
        first: s.first_year(),
        last: s.last_year(),
    };
    if window.validation_end_year <= window.train_end_year
        || window.train_end_year < s.first_year()
        || !s.contains(window.validation_end_year)
    {
        return Err(out);
    }
    Ok(())
}

fn gap(fit: &ScFit, project: &SitePanel, year: i32) -> Result<f64, ValidationError> {
    match (project.series.get(year), fit.fitted_series.get(year)) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(ValidationError::WindowOutOfRange {
            train_end: year,
            validation_end: year,
            first: fit.fitted_series.first_year(),
            last: fit.fitted_series.last_year(),
        }),
    }
}

fn rmspe_over(
    fit: &ScFit,
    project: &SitePanel,
    years: std::ops::RangeInclusive<i32>,
) -> Result<f64, ValidationError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in years {
        let g = gap(fit, project, y)?;
        sum += g * g;
        n += 1;
    }
    Ok((sum / n as f64).sqrt())
}

pub fn final_gap_test(
    fit: &ScFit,
    project: &SitePanel,
    window: &Window,
    thresholds: &Thresholds,
) -> Result<FinalGapResult, ValidationError> {
    check_window(fit, window)?;
    let diff_ha = gap(fit, project, window.validation_end_year)?;
    let diff_pct_area = 100.0 * diff_ha / project.area_ha;
    Ok(FinalGapResult {
        diff_ha,
        diff_pct_area,
        pass: thresholds.final_gap_passes(diff_pct_area),
    })
}

pub fn max_gap_test(
    fit: &ScFit,
    project: &SitePanel,
    window: &Window,
    thresholds: &Thresholds,
) -> Result<MaxGapResult, ValidationError> {
    check_window(fit, window)?;
    let mut max_abs = 0.0_f64;
    for y in window.validation_years() {
        max_abs = max_abs.max(gap(fit, project, y)?.abs());
    }
    let final_defor = project
        .series
        .get(window.validation_end_year)
        .unwrap_or(0.0);
    if final_defor <= 0.0 {
        return Ok(MaxGapResult {
            max_abs_diff_ha: max_abs,
            ratio: f64::NAN,
            pass: false,
            zero_final_deforestation: true,
        });
    }
    let ratio = max_abs / final_defor;
    Ok(MaxGapResult {
        max_abs_diff_ha: max_abs,
        ratio,
        pass: thresholds.max_gap_passes(ratio),
        zero_final_deforestation: false,
    })
}

/// RMSPE at or below this fraction of the largest project value counts as zero.
pub const EXACT_FIT_RTOL: f64 = 1e-9;

pub fn rmspe_ratio_test(
    fit: &ScFit,
    project: &SitePanel,
    window: &Window,
    thresholds: &Thresholds,
) -> Result<RmspeRatioResult, ValidationError> {
    check_window(fit, window)?;
    let first = fit.fitted_series.first_year();
    if window.train_end_year < first {
        return Err(ValidationError::EmptyWindow("training"));
    }
    if window.validation_years().is_empty() {
        return Err(ValidationError::EmptyWindow("validation"));
    }
    let rmspe_train = rmspe_over(fit, project, first..=window.train_end_year)?;
    let rmspe_valid = rmspe_over(fit, project, window.validation_years())?;
    // Errors at rounding level are treated as exact zeros.
    let scale = (first..=window.validation_end_year)
        .filter_map(|y| project.series.get(y))
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    let noise = EXACT_FIT_RTOL * scale;
    let (ratio, perfect_fit) = if rmspe_train > noise {
        (rmspe_valid / rmspe_train, false)
    } else if rmspe_valid > noise {
        (f64::INFINITY, false)
    } else {
        (0.0, true)
    };
    Ok(RmspeRatioResult {
        rmspe_train,
        rmspe_valid,
        ratio,
        pass: perfect_fit || thresholds.rmspe_ratio_passes(ratio),
        perfect_fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub project_id: String,
    pub country: String,
    pub method: Method,
    pub window: Window,
    pub final_gap: Option<FinalGapResult>,
    pub max_gap: Option<MaxGapResult>,
    pub rmspe_ratio: Option<RmspeRatioResult>,
    pub donors_used: usize,
    pub tolerance_used: Option<f64>,
    /// Buffer filter skipped because the project had no pre-start buffer loss.
    pub filter_skipped: bool,
    pub degenerate_training: bool,
    /// Set when the project could not be fitted or tested; tests count as failed.
    pub error: Option<String>,
}

impl ValidationReport {
    pub fn final_gap_pass(&self) -> bool {
        self.final_gap.is_some_and(|r| r.pass)
    }
    pub fn max_gap_pass(&self) -> bool {
        self.max_gap.is_some_and(|r| r.pass)
    }
    pub fn rmspe_ratio_pass(&self) -> bool {
        self.rmspe_ratio.is_some_and(|r| r.pass)
    }
    pub fn both_pass(&self) -> bool {
        self.max_gap_pass() && self.rmspe_ratio_pass()
    }
}

/// Runs all three tests on one fit.
pub fn validate_fit(
    fit: &ScFit,
    project: &Project,
    window: &Window,
    thresholds: &Thresholds,
) -> ValidationReport {
    let mut report = ValidationReport {
        project_id: project.id().to_string(),
        country: project.panel.country.clone(),
        method: fit.method,
        window: *window,
        final_gap: None,
        max_gap: None,
        rmspe_ratio: None,
        donors_used: fit.donor_ids.len(),
        tolerance_used: None,
        filter_skipped: false,
        degenerate_training: fit.degenerate_training,
        error: None,
    };
    let p = &project.panel;
    let res = final_gap_test(fit, p, window, thresholds).and_then(|w| {
        let e3 = max_gap_test(fit, p, window, thresholds)?;
        let e4 = rmspe_ratio_test(fit, p, window, thresholds)?;
        Ok((w, e3, e4))
    });
    match res {
        Ok((w, e3, e4)) => {
            report.final_gap = Some(w);
            report.max_gap = Some(e3);
            report.rmspe_ratio = Some(e4);
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

/// Donors chosen for a project, with the fallback applied when the project
/// has no buffer deforestation to compare against.
#[derive(Debug, Clone)]
pub struct ChosenDonors<'a> {
    pub donors: Vec<&'a SitePanel>,
    pub selection: Option<DonorSelection>,
    pub filter_skipped: bool,
}

pub fn choose_donors<'a>(
    set: &'a PanelSet,
    project: &Project,
    filter: &FilterConfig,
) -> Result<ChosenDonors<'a>, DonorError> {
    let pool = set.pool(&project.panel.country);
    match filter_donors(&project.panel, project.meta.start_year, &pool, filter) {
        Ok(sel) => {
            let donors = pool
                .iter()
                .copied()
                .filter(|d| sel.selected.contains(&d.site_id))
                .collect();
            Ok(ChosenDonors {
                donors,
                selection: Some(sel),
                filter_skipped: false,
            })
        }
        Err(DonorError::ZeroProjectBuffer(_)) => {
            let fallback = FilterConfig {
                enabled: false,
                ..filter.clone()
            };
            let sel = filter_donors(&project.panel, project.meta.start_year, &pool, &fallback)?;
            let donors = pool
                .iter()
                .copied()
                .filter(|d| sel.selected.contains(&d.site_id))
                .collect();
            Ok(ChosenDonors {
                donors,
                selection: Some(sel),
                filter_skipped: true,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodCounts {
    pub projects: usize,
    pub final_gap_pass: usize,
    pub max_gap_pass: usize,
    pub rmspe_ratio_pass: usize,
    pub both_pass: usize,
    /// Projects failing at least one of the max-gap and RMSPE-ratio tests.
    pub fail_either: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub reports: Vec<ValidationReport>,
    pub scm: Option<MethodCounts>,
    pub ascm: Option<MethodCounts>,
    /// Projects passing both tests under ASCM that also pass both under SCM.
    pub both_pass_overlap: Option<usize>,
}

pub fn count(reports: &[ValidationReport], method: Method) -> MethodCounts {
    let mut c = MethodCounts::default();
    for r in reports.iter().filter(|r| r.method == method) {
        c.projects += 1;
        c.final_gap_pass += r.final_gap_pass() as usize;
        c.max_gap_pass += r.max_gap_pass() as usize;
        c.rmspe_ratio_pass += r.rmspe_ratio_pass() as usize;
        c.both_pass += r.both_pass() as usize;
        c.errors += r.error.is_some() as usize;
    }
    c.fail_either = c.projects - c.both_pass;
    c
}

pub fn summarise(reports: Vec<ValidationReport>) -> ValidationSummary {
    let has = |m| reports.iter().any(|r| r.method == m);
    let scm = has(Method::Scm).then(|| count(&reports, Method::Scm));
    let ascm = has(Method::Ascm).then(|| count(&reports, Method::Ascm));
    let both_pass_overlap = (scm.is_some() && ascm.is_some()).then(|| {
        reports
            .iter()
            .filter(|r| r.method == Method::Ascm && r.both_pass())
            .filter(|a| {
                reports.iter().any(|s| {
                    s.method == Method::Scm && s.project_id == a.project_id && s.both_pass()
                })
            })
            .count()
    });
    ValidationSummary {
        reports,
        scm,
        ascm,
        both_pass_overlap,
    }
}

/// Resolves a project's window: an explicit override, else the meta
/// validation end with the pre-period halved.
pub fn window_for(project: &Project, overrides: &[(String, Window)]) -> Window {
    overrides
        .iter()
        .find(|(id, _)| id == project.id())
        .map(|(_, w)| *w)
        .unwrap_or_else(|| {
            Window::halved(
                project.panel.series.first_year(),
                project.meta.validation_end_year,
            )
        })
}

/// Fits and validates every project under every requested method. Per-project
/// failures become flagged rows.
pub fn validate_all(
    set: &PanelSet,
    base: &FitConfig,
    filter: &FilterConfig,
    methods: &[Method],
    overrides: &[(String, Window)],
    thresholds: &Thresholds,
) -> ValidationSummary {
    let jobs: Vec<(&Project, Method)> = set
        .projects
        .iter()
        .flat_map(|p| methods.iter().map(move |&m| (p, m)))
        .collect();
    let reports: Vec<ValidationReport> = jobs
        .par_iter()
        .map(|&(project, method)| {
            let window = window_for(project, overrides);
            let mut cfg = base.clone();
            cfg.method = method;
            cfg.train_end_year = window.train_end_year;
            let flagged = |msg: String| ValidationReport {
                project_id: project.id().to_string(),
                country: project.panel.country.clone(),
                method,
                window,
                final_gap: None,
                max_gap: None,
                rmspe_ratio: None,
                donors_used: 0,
                tolerance_used: None,
                filter_skipped: false,
                degenerate_training: false,
                error: Some(msg),
            };
            let chosen = match choose_donors(set, project, filter) {
                Ok(c) => c,
                Err(e) => return flagged(e.to_string()),
            };
            match fit(&project.panel, &chosen.donors, &cfg) {
                Ok(f) => {
                    let mut r = validate_fit(&f, project, &window, thresholds);
                    r.tolerance_used = chosen.selection.and_then(|s| s.tolerance_used);
                    r.filter_skipped = chosen.filter_skipped;
                    r
                }
                Err(e) => flagged(e.to_string()),
            }
        })
        .collect();
    summarise(reports)
}
