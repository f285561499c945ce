//! Synthetic-control weight fitting.
//!
//! Two estimators share one design matrix: one row per training year
//! (cumulative deforestation) plus, when `covariate_weight > 0`, one row per
//! covariate, standardised over the donor pool and scaled by
//! `sqrt(covariate_weight)`.
//!
//! * [`Method::Scm`] minimises the squared design-row mismatch over the
//!   probability simplex (non-negative weights summing to one).
//! * [`Method::Ascm`] adds a ridge correction to the SCM weights. With the
//!   design centred across donors (`Xc`) and SCM residual `r`, the correction
//!   is `Xc' (Xc Xc' + lambda I)^-1 r`. Centring keeps the weights summing to
//!   one; the correction may make individual weights negative, letting the
//!   synthetic control extrapolate outside the donor hull. The training
//!   residual becomes `lambda (Xc Xc' + lambda I)^-1 r`, never larger than
//!   the SCM residual, and vanishes back to SCM as `lambda` grows.
//!
//! `RidgeLambda::Auto` picks lambda by leave-one-year-out cross-validation on
//! the training window.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{SitePanel, YearSeries};
use crate::simplex::simplex_least_squares;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("no donors supplied")]
    NoDonors,
    #[error("training window {first}..={train_end} must contain at least 2 years inside the series")]
    InsufficientTraining { first: i32, train_end: i32 },
    #[error("donor {donor} has no value for year {year}")]
    DonorDomain { donor: String, year: i32 },
    #[error("solver stopped after {iterations} iterations with gap {gap:e}")]
    SolverDiverged { iterations: usize, gap: f64 },
    #[error("ridge system singular at lambda = {lambda}; raise ridge_lambda")]
    IllConditioned { lambda: f64 },
    #[error("year {0} outside the fitted domain")]
    YearOutOfDomain(i32),
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Scm,
    Ascm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Scm => "scm",
            Method::Ascm => "ascm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FitError;
    fn from_str(s: &str) -> Result<Self, FitError> {
        match s.to_ascii_lowercase().as_str() {
            "scm" => Ok(Method::Scm),
            "ascm" => Ok(Method::Ascm),
            other => Err(FitError::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RidgeLambda {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    /// Last year (inclusive) used to fit the weights.
    pub train_end_year: i32,
    pub covariate_weight: f64,
    pub ridge_lambda: RidgeLambda,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl FitConfig {
    pub fn new(method: Method, train_end_year: i32) -> Self {
        Self {
            method,
            train_end_year,
            covariate_weight: 0.0,
            ridge_lambda: RidgeLambda::Auto,
            solver_tol: 1e-9,
            max_iter: 10_000,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        if !(self.covariate_weight >= 0.0 && self.covariate_weight.is_finite()) {
            return Err(FitError::InvalidConfig("covariate_weight must be >= 0".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(FitError::InvalidConfig("solver_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(FitError::InvalidConfig("max_iter must be positive".into()));
        }
        if let RidgeLambda::Fixed(l) = self.ridge_lambda {
            if !(l >= 0.0) {
                return Err(FitError::InvalidConfig("ridge_lambda must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScFit {
    pub project_id: String,
    pub donor_ids: Vec<String>,
    /// Final weights (augmented for ASCM).
    pub weights: Vec<f64>,
    /// Simplex weights underlying an ASCM fit; `None` for SCM.
    pub scm_weights: Option<Vec<f64>>,
    pub method: Method,
    /// `sum_j weights[j] * donor_j(year)` over the project's year domain.
    pub fitted_series: YearSeries,
    pub train_rmspe: f64,
    /// Ridge penalty actually used (ASCM only).
    pub lambda: Option<f64>,
    /// Project and donors all zero on the training window; weights are uniform.
    pub degenerate_training: bool,
    pub iterations: usize,
    pub config: FitConfig,
}

impl ScFit {
    pub fn weight_of(&self, donor_id: &str) -> Option<f64> {
        self.donor_ids
            .iter()
            .position(|d| d == donor_id)
            .map(|i| self.weights[i])
    }

    /// Fitted counterfactual over `years`.
    pub fn predict_counterfactual(
        &self,
        years: RangeInclusive<i32>,
    ) -> Result<BTreeMap<i32, f64>, FitError> {
        years
            .map(|y| {
                self.fitted_series
                    .get(y)
                    .map(|v| (y, v))
                    .ok_or(FitError::YearOutOfDomain(y))
            })
            .collect()
    }
}

/// Design rows for a project against a set of donors.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    /// Rows: training years then covariates. Columns: donors.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Number of leading outcome rows.
    pub n_outcome: usize,
    /// Donor series over the project's domain (years x donors).
    pub donor_full: DMatrix<f64>,
}

fn shared_covariates(project: &SitePanel, donors: &[&SitePanel]) -> Vec<String> {
    project
        .covariates
        .keys()
        .filter(|k| donors.iter().all(|d| d.covariates.contains_key(*k)))
        .cloned()
        .collect()
}

pub(crate) fn build_design(
    project: &SitePanel,
    donors: &[&SitePanel],
    cfg: &FitConfig,
) -> Result<Design, FitError> {
    if donors.is_empty() {
        return Err(FitError::NoDonors);
    }
    let s = &project.series;
    let first = s.first_year();
    if s.is_empty() || cfg.train_end_year < first + 1 || cfg.train_end_year > s.last_year() {
        return Err(FitError::InsufficientTraining {
            first,
            train_end: cfg.train_end_year,
        });
    }
    let n_years = s.len();
    let j = donors.len();
    let mut donor_full = DMatrix::<f64>::zeros(n_years, j);
    for (c, d) in donors.iter().enumerate() {
        for (r, year) in s.years().enumerate() {
            donor_full[(r, c)] = d.series.get(year).ok_or_else(|| FitError::DonorDomain {
                donor: d.site_id.clone(),
                year,
            })?;
        }
    }

    let n_train = (cfg.train_end_year - first + 1) as usize;
    let covs = if cfg.covariate_weight > 0.0 {
        shared_covariates(project, donors)
    } else {
        Vec::new()
    };
    let mut rows_x: Vec<Vec<f64>> = (0..n_train)
        .map(|r| donor_full.row(r).iter().copied().collect())
        .collect();
    let mut rows_y: Vec<f64> = s.values()[..n_train].to_vec();

    let sqrt_cw = cfg.covariate_weight.sqrt();
    for name in &covs {
        let vals: Vec<f64> = donors.iter().map(|d| d.covariates[name]).collect();
        let mean = vals.iter().sum::<f64>() / j as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / j as f64).sqrt();
        if !(sd > 0.0) {
            continue;
        }
        rows_x.push(vals.iter().map(|v| sqrt_cw * (v - mean) / sd).collect());
        rows_y.push(sqrt_cw * (project.covariates[name] - mean) / sd);
    }
    let m = rows_x.len();
    let x = DMatrix::from_fn(m, j, |r, c| rows_x[r][c]);
    Ok(Design {
        x,
        y: DVector::from_vec(rows_y),
        n_outcome: n_train,
        donor_full,
    })
}

fn rmspe(resid: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = resid.fold((0.0, 0usize), |(s, n), r| (s + r * r, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn solve_scm(design: &Design, cfg: &FitConfig) -> Result<(Vec<f64>, usize, bool), FitError> {
    let j = design.x.ncols();
    let outcomes_zero = design.y.rows(0, design.n_outcome).iter().all(|&v| v == 0.0)
        && design.x.rows(0, design.n_outcome).iter().all(|&v| v == 0.0);
    if outcomes_zero {
        return Ok((vec![1.0 / j as f64; j], 0, true));
    }
    let sol = simplex_least_squares(&design.x, &design.y, cfg.solver_tol, cfg.max_iter);
    if !sol.converged {
        return Err(FitError::SolverDiverged {
            iterations: sol.iterations,
            gap: sol.gap,
        });
    }
    Ok((sol.weights, sol.iterations, false))
}

/// Centres each row of `x` across donors.
fn centre_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    xc
}

/// Ridge correction `Xc' (Xc Xc' + lambda I)^-1 r`.
pub(crate) fn ridge_correction(
    xc: &DMatrix<f64>,
    resid: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>, FitError> {
    let m = xc.nrows();
    let mut gram = xc * xc.transpose();
    for i in 0..m {
        gram[(i, i)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or(FitError::IllConditioned { lambda })?;
    let u = chol.solve(resid);
    if !u.iter().all(|v| v.is_finite()) {
        return Err(FitError::IllConditioned { lambda });
    }
    Ok(xc.transpose() * u)
}

/// Candidate penalties for cross-validation, relative to the largest
/// squared singular value of the centred design.
fn lambda_grid(xc: &DMatrix<f64>) -> Vec<f64> {
    let top = (xc * xc.transpose()).symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    (-12..=4).map(|k| top * 10f64.powf(k as f64 / 2.0)).collect()
}

fn drop_row(design: &Design, row: usize) -> Design {
    Design {
        x: design.x.clone().remove_row(row),
        y: design.y.clone().remove_row(row),
        n_outcome: design.n_outcome - 1,
        donor_full: design.donor_full.clone(),
    }
}

/// Leave-one-year-out choice of the ridge penalty.
fn cross_validate_lambda(design: &Design, cfg: &FitConfig) -> Result<f64, FitError> {
    let grid = lambda_grid(&centre_rows(&design.x));
    if design.n_outcome < 3 {
        // Not enough years to hold one out and still fit; fall back to the
        // most conservative grid value.
        return Ok(*grid.last().expect("nonempty grid"));
    }
    let mut sse = vec![0.0; grid.len()];
    let mut usable = vec![true; grid.len()];
    for t in 0..design.n_outcome {
        let sub = drop_row(design, t);
        let (w, _, _) = solve_scm(&sub, cfg)?;
        let w = DVector::from_vec(w);
        let xc = centre_rows(&sub.x);
        let resid = &sub.y - &sub.x * &w;
        let held_x = design.x.row(t);
        for (k, &lambda) in grid.iter().enumerate() {
            match ridge_correction(&xc, &resid, lambda) {
                Ok(c) => {
                    let pred = held_x.dot(&(&w + c).transpose());
                    sse[k] += (design.y[t] - pred).powi(2);
                }
                Err(_) => usable[k] = false,
            }
        }
    }
    // Ties resolve to the larger penalty (closer to SCM).
    let mut best: Option<(f64, f64)> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        if !usable[k] {
            continue;
        }
        match best {
            Some((_, b)) if sse[k] > b * (1.0 + 1e-12) => {}
            _ => best = Some((lambda, sse[k])),
        }
    }
    best.map(|(l, _)| l)
        .ok_or(FitError::IllConditioned { lambda: grid[0] })
}

fn assemble(
    project: &SitePanel,
    donors: &[&SitePanel],
    design: &Design,
    cfg: &FitConfig,
    weights: Vec<f64>,
    scm_weights: Option<Vec<f64>>,
    lambda: Option<f64>,
    degenerate: bool,
    iterations: usize,
) -> ScFit {
    let w = DVector::from_column_slice(&weights);
    let fitted = &design.donor_full * &w;
    let fitted_series = YearSeries::new(
        project.series.first_year(),
        fitted.iter().copied().collect(),
    );
    let train_rmspe = rmspe(
        project.series.values()[..design.n_outcome]
            .iter()
            .zip(fitted.iter())
            .map(|(a, b)| a - b),
    );
    ScFit {
        project_id: project.site_id.clone(),
        donor_ids: donors.iter().map(|d| d.site_id.clone()).collect(),
        weights,
        scm_weights,
        method: cfg.method,
        fitted_series,
        train_rmspe,
        lambda,
        degenerate_training: degenerate,
        iterations,
        config: cfg.clone(),
    }
}

/// Simplex-constrained synthetic control.
pub fn fit_scm(
    project: &SitePanel,
    donors: &[&SitePanel],
    cfg: &FitConfig,
) -> Result<ScFit, FitError> {
    cfg.validate()?;
    let design = build_design(project, donors, cfg)?;
    let (w, iters, degenerate) = solve_scm(&design, cfg)?;
    let mut cfg = cfg.clone();
    cfg.method = Method::Scm;
    Ok(assemble(project, donors, &design, &cfg, w, None, None, degenerate, iters))
}

/// Ridge-augmented synthetic control.
pub fn fit_ascm(
    project: &SitePanel,
    donors: &[&SitePanel],
    cfg: &FitConfig,
) -> Result<ScFit, FitError> {
    cfg.validate()?;
    let design = build_design(project, donors, cfg)?;
    let (w_scm, iters, degenerate) = solve_scm(&design, cfg)?;
    let mut cfg = cfg.clone();
    cfg.method = Method::Ascm;
    if degenerate {
        return Ok(assemble(
            project,
            donors,
            &design,
            &cfg,
            w_scm.clone(),
            Some(w_scm),
            None,
            true,
            iters,
        ));
    }
    let lambda = match cfg.ridge_lambda {
        RidgeLambda::Fixed(l) => l,
        RidgeLambda::Auto => cross_validate_lambda(&design, &cfg)?,
    };
    let w = DVector::from_column_slice(&w_scm);
    let resid = &design.y - &design.x * &w;
    let correction = ridge_correction(&centre_rows(&design.x), &resid, lambda)?;
    let w_aug: Vec<f64> = (&w + correction).iter().copied().collect();
    Ok(assemble(
        project,
        donors,
        &design,
        &cfg,
        w_aug,
        Some(w_scm),
        Some(lambda),
        false,
        iters,
    ))
}

/// Dispatches on `cfg.method`.
pub fn fit(project: &SitePanel, donors: &[&SitePanel], cfg: &FitConfig) -> Result<ScFit, FitError> {
    match cfg.method {
        Method::Scm => fit_scm(project, donors, cfg),
        Method::Ascm => fit_ascm(project, donors, cfg),
    }
}
