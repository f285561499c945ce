//! Post-treatment effects and their uncertainty.
//!
//! The effect on the treated (ATT) is the mean of the cumulative gap
//! `d_PA - d_SC` over the implementation period (start year through the last
//! observed year). Negative values mean less deforestation in the project
//! than in its synthetic control.
//!
//! # Jackknife+ bands
//!
//! The jackknife+ construction is defined for regression. For synthetic
//! controls it is adapted as follows:
//!
//! * the leave-one-out unit is a **donor**: the control is refitted once per
//!   donor with that donor removed;
//! * each refit yields a post-treatment gap path `g_{-j}(t)` and a
//!   conformity score `R_{-j}`, the RMSPE of that refit over the
//!   pre-treatment years;
//! * per post year the band is
//!   `[q-_alpha{g_{-j}(t) - R_{-j}}, q+_{1-alpha}{g_{-j}(t) + R_{-j}}]`,
//!   where `q+` is the `ceil((1 - alpha)(n + 1))`-th smallest value and `q-`
//!   the `floor(alpha (n + 1))`-th smallest.
//!
//! With fewer than `1/alpha - 1` donors those ranks fall outside `1..=n`; the
//! ranks are then clamped to the sample extremes and the result carries
//! `rank_clamped = true`. Unclamped, such bands would be infinite.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::donorpool::FilterConfig;
use crate::panel::{PanelSet, Project, SitePanel};
use crate::scsolver::{fit, FitConfig, FitError, Method, ScFit};
use crate::validation::choose_donors;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("project {0} has no post-treatment years")]
    NoPostYears(String),
    #[error("jackknife+ needs at least 3 donors, got {0}")]
    TooFewDonors(usize),
    #[error("year {0} outside the fitted domain")]
    YearOutOfDomain(i32),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterState {
    With,
    Without,
}

impl FilterState {
    pub fn name(self) -> &'static str {
        match self {
            FilterState::With => "with",
            FilterState::Without => "without",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub lower: BTreeMap<i32, f64>,
    pub upper: BTreeMap<i32, f64>,
    pub alpha: f64,
    pub n_loo: usize,
    pub rank_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttResult {
    pub project_id: String,
    pub method: Method,
    /// `d_PA - d_SC` on post-treatment years.
    pub gap_series: BTreeMap<i32, f64>,
    /// Mean of `gap_series`, in hectares.
    pub att: f64,
    pub bands: Option<Bands>,
    pub filter_state: FilterState,
}

/// Gap between project and fitted control over `years`.
pub fn gap_series(
    fit: &ScFit,
    project: &SitePanel,
    years: std::ops::RangeInclusive<i32>,
) -> Result<BTreeMap<i32, f64>, InferenceError> {
    years
        .map(|y| match (project.series.get(y), fit.fitted_series.get(y)) {
            (Some(a), Some(b)) => Ok((y, a - b)),
            _ => Err(InferenceError::YearOutOfDomain(y)),
        })
        .collect()
}

pub fn post_years(project: &Project) -> Result<std::ops::RangeInclusive<i32>, InferenceError> {
    let last = project.panel.series.last_year();
    if project.meta.start_year > last {
        return Err(InferenceError::NoPostYears(project.id().to_string()));
    }
    Ok(project.meta.start_year..=last)
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// ATT without uncertainty bands.
pub fn att(fit: &ScFit, project: &Project, filter_state: FilterState) -> Result<AttResult, InferenceError> {
    let years = post_years(project)?;
    let gaps = gap_series(fit, &project.panel, years)?;
    Ok(AttResult {
        project_id: project.id().to_string(),
        method: fit.method,
        att: mean(gaps.values().copied()),
        gap_series: gaps,
        bands: None,
        filter_state,
    })
}

/// Fit settings for post-treatment inference: weights trained on every
/// pre-treatment year.
pub fn inference_config(base: &FitConfig, method: Method, start_year: i32) -> FitConfig {
    let mut cfg = base.clone();
    cfg.method = method;
    cfg.train_end_year = start_year - 1;
    cfg
}

/// `k`-th smallest (1-based) of `values`.
fn order_stat(values: &mut [f64], k: usize) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    values[k - 1]
}

/// Jackknife+ bands from leave-one-donor-out refits.
pub fn jackknife_plus_bands(
    project: &SitePanel,
    donors: &[&SitePanel],
    cfg: &FitConfig,
    post_years: std::ops::RangeInclusive<i32>,
    alpha: f64,
) -> Result<Bands, InferenceError> {
    let n = donors.len();
    if n < 3 {
        return Err(InferenceError::TooFewDonors(n));
    }
    let pre_years = project.series.first_year()..=cfg.train_end_year;
    let loo: Vec<(BTreeMap<i32, f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let subset: Vec<&SitePanel> = donors
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, d)| *d)
                .collect();
            let f = fit(project, &subset, cfg)?;
            let pre = gap_series(&f, project, pre_years.clone())?;
            let score = (mean(pre.values().map(|g| g * g))).sqrt();
            let post = gap_series(&f, project, post_years.clone())?;
            Ok((post, score))
        })
        .collect::<Result<_, InferenceError>>()?;

    let raw_lo = (alpha * (n + 1) as f64).floor() as usize;
    let raw_hi = ((1.0 - alpha) * (n + 1) as f64).ceil() as usize;
    let k_lo = raw_lo.clamp(1, n);
    let k_hi = raw_hi.clamp(1, n);
    let rank_clamped = raw_lo != k_lo || raw_hi != k_hi;

    let mut lower = BTreeMap::new();
    let mut upper = BTreeMap::new();
    for year in post_years {
        let mut lo: Vec<f64> = loo.iter().map(|(g, r)| g[&year] - r).collect();
        let mut hi: Vec<f64> = loo.iter().map(|(g, r)| g[&year] + r).collect();
        lower.insert(year, order_stat(&mut lo, k_lo));
        upper.insert(year, order_stat(&mut hi, k_hi));
    }
    Ok(Bands {
        lower,
        upper,
        alpha,
        n_loo: n,
        rank_clamped,
    })
}

/// `100 (with - without) / with`; `None` when `with` is zero.
pub fn diff_pct(att_with: f64, att_without: f64) -> Option<f64> {
    (att_with != 0.0).then(|| 100.0 * (att_with - att_without) / att_with)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub project_id: String,
    pub country: String,
    pub method: Method,
    pub att_without: Option<f64>,
    pub att_with: Option<f64>,
    pub diff_pct: Option<f64>,
    /// The two filter states give effects of opposite sign.
    pub sign_reversal: bool,
    /// The buffer filter could not be applied (zero project buffer loss).
    pub filter_skipped: bool,
    pub error: Option<String>,
}

impl SensitivityRow {
    pub fn from_atts(project_id: &str, country: &str, method: Method, without: f64, with: f64) -> Self {
        Self {
            project_id: project_id.to_string(),
            country: country.to_string(),
            method,
            att_without: Some(without),
            att_with: Some(with),
            diff_pct: diff_pct(with, without),
            sign_reversal: with * without < 0.0,
            filter_skipped: false,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub rows: Vec<SensitivityRow>,
    pub sign_reversals: usize,
    /// Over rows with a defined difference.
    pub mean_abs_diff_pct: Option<f64>,
    pub median_abs_diff_pct: Option<f64>,
    pub undefined_rows: usize,
}

impl SensitivityTable {
    pub fn from_rows(rows: Vec<SensitivityRow>) -> Self {
        let mut abs: Vec<f64> = rows.iter().filter_map(|r| r.diff_pct).map(f64::abs).collect();
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let median = if abs.is_empty() {
            None
        } else if abs.len() % 2 == 1 {
            Some(abs[abs.len() / 2])
        } else {
            Some(0.5 * (abs[abs.len() / 2 - 1] + abs[abs.len() / 2]))
        };
        Self {
            sign_reversals: rows.iter().filter(|r| r.sign_reversal).count(),
            mean_abs_diff_pct: (!abs.is_empty()).then(|| mean(abs.iter().copied())),
            median_abs_diff_pct: median,
            undefined_rows: rows.iter().filter(|r| r.diff_pct.is_none()).count(),
            rows,
        }
    }
}

/// Everything computed for one project under one method and filter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectEffect {
    pub fit: ScFit,
    pub att: AttResult,
    pub filter_skipped: bool,
}

/// Fits a project on its pre-treatment years and computes its ATT, with
/// jackknife+ bands when `alpha` is given and the pool allows it.
pub fn project_effect(
    set: &PanelSet,
    project: &Project,
    base: &FitConfig,
    method: Method,
    filter: &FilterConfig,
    state: FilterState,
    alpha: Option<f64>,
) -> Result<ProjectEffect, String> {
    let filter = match state {
        FilterState::With => filter.clone(),
        FilterState::Without => FilterConfig {
            enabled: false,
            ..filter.clone()
        },
    };
    let chosen = choose_donors(set, project, &filter).map_err(|e| e.to_string())?;
    let cfg = inference_config(base, method, project.meta.start_year);
    let f = fit(&project.panel, &chosen.donors, &cfg).map_err(|e| e.to_string())?;
    let mut a = att(&f, project, state).map_err(|e| e.to_string())?;
    if let Some(alpha) = alpha {
        if chosen.donors.len() >= 3 {
            let years = post_years(project).map_err(|e| e.to_string())?;
            a.bands = Some(
                jackknife_plus_bands(&project.panel, &chosen.donors, &cfg, years, alpha)
                    .map_err(|e| e.to_string())?,
            );
        }
    }
    Ok(ProjectEffect {
        fit: f,
        att: a,
        filter_skipped: chosen.filter_skipped,
    })
}

/// ATT with and without the buffer filter for every project.
pub fn sensitivity_table(
    set: &PanelSet,
    base: &FitConfig,
    method: Method,
    filter: &FilterConfig,
) -> SensitivityTable {
    let rows = set
        .projects
        .par_iter()
        .map(|p| {
            let with = project_effect(set, p, base, method, filter, FilterState::With, None);
            let without = project_effect(set, p, base, method, filter, FilterState::Without, None);
            sensitivity_row(p, method, with, without)
        })
        .collect();
    SensitivityTable::from_rows(rows)
}

pub fn sensitivity_row(
    p: &Project,
    method: Method,
    with: Result<ProjectEffect, String>,
    without: Result<ProjectEffect, String>,
) -> SensitivityRow {
    match (with, without) {
        (Ok(w), Ok(wo)) => {
            let mut row = SensitivityRow::from_atts(p.id(), &p.panel.country, method, wo.att.att, w.att.att);
            row.filter_skipped = w.filter_skipped;
            if row.diff_pct.is_none() {
                row.error = Some("att with filter is zero; difference undefined".into());
            }
            row
        }
        (w, wo) => SensitivityRow {
            project_id: p.id().to_string(),
            country: p.panel.country.clone(),
            method,
            att_without: wo.as_ref().ok().map(|e| e.att.att),
            att_with: w.as_ref().ok().map(|e| e.att.att),
            diff_pct: None,
            sign_reversal: false,
            filter_skipped: false,
            error: Some(
                [w.err(), wo.err()]
                    .into_iter()
                    .flatten()
                    .collect::<Vec<_>>()
                    .join("; "),
            ),
        },
    }
}
