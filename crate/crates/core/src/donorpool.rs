//! Donor-pool filtering by buffer-zone deforestation similarity.
//!
//! A donor's similarity to a project is the relative deviation of their
//! cumulative buffer deforestation in the year before the project starts:
//! `|b_donor - b_proj| / b_proj`. The filter walks an increasing ladder of
//! tolerances and keeps the first rung that leaves at least `min_donors`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::SitePanel;

#[derive(Debug, Error, PartialEq)]
pub enum DonorError {
    #[error("donor pool is empty")]
    EmptyPool,
    #[error("project {0} has zero buffer deforestation before its start year; relative deviation is undefined")]
    ZeroProjectBuffer(String),
    #[error("site {site} has no buffer value for year {year}")]
    MissingBufferYear { site: String, year: i32 },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Strictly increasing fractional deviations in (0, 1].
    pub tolerance_ladder: Vec<f64>,
    pub min_donors: usize,
    pub enabled: bool,
    /// Covariate names whose values must match the project's exactly
    /// (categorical eligibility such as biome codes). Empty by default.
    #[serde(default)]
    pub exact_match: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tolerance_ladder: vec![0.10, 0.20, 0.30],
            min_donors: 4,
            enabled: true,
            exact_match: Vec::new(),
        }
    }
}

impl FilterConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DonorError> {
        if self.tolerance_ladder.is_empty() {
            return Err(DonorError::InvalidConfig("ladder is empty".into()));
        }
        if self.min_donors == 0 {
            return Err(DonorError::InvalidConfig("min_donors must be positive".into()));
        }
        for &t in &self.tolerance_ladder {
            if !(t > 0.0 && t <= 1.0) {
                return Err(DonorError::InvalidConfig(format!(
                    "ladder value {t} outside (0, 1]"
                )));
            }
        }
        if self.tolerance_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DonorError::InvalidConfig(
                "ladder must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorSelection {
    pub project_id: String,
    pub selected: Vec<String>,
    /// `None` when the filter is disabled.
    pub tolerance_used: Option<f64>,
    pub pool_size_before: usize,
    pub pool_size_after: usize,
    /// No rung reached `min_donors`; the whole pool was returned.
    pub insufficient_donors: bool,
}

fn buffer_at(site: &SitePanel, year: i32) -> Result<f64, DonorError> {
    site.buffer_series
        .get(year)
        .ok_or_else(|| DonorError::MissingBufferYear {
            site: site.site_id.clone(),
            year,
        })
}

/// Relative buffer deviation of each donor from the project at `start_year - 1`.
pub fn buffer_deviations(
    project: &SitePanel,
    start_year: i32,
    pool: &[&SitePanel],
) -> Result<Vec<f64>, DonorError> {
    let year = start_year - 1;
    let b_proj = buffer_at(project, year)?;
    if b_proj <= 0.0 {
        return Err(DonorError::ZeroProjectBuffer(project.site_id.clone()));
    }
    pool.iter()
        .map(|d| Ok((buffer_at(d, year)? - b_proj).abs() / b_proj))
        .collect()
}

fn exact_matches(project: &SitePanel, donor: &SitePanel, keys: &[String]) -> bool {
    keys.iter()
        .all(|k| match (project.covariates.get(k), donor.covariates.get(k)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        })
}

/// Selects donors for one project.
pub fn filter_donors(
    project: &SitePanel,
    start_year: i32,
    pool: &[&SitePanel],
    cfg: &FilterConfig,
) -> Result<DonorSelection, DonorError> {
    if pool.is_empty() {
        return Err(DonorError::EmptyPool);
    }
    let pool: Vec<&SitePanel> = pool
        .iter()
        .copied()
        .filter(|d| exact_matches(project, d, &cfg.exact_match))
        .collect();
    if pool.is_empty() {
        return Err(DonorError::EmptyPool);
    }
    let all_ids = || pool.iter().map(|d| d.site_id.clone()).collect::<Vec<_>>();

    if !cfg.enabled {
        return Ok(DonorSelection {
            project_id: project.site_id.clone(),
            selected: all_ids(),
            tolerance_used: None,
            pool_size_before: pool.len(),
            pool_size_after: pool.len(),
            insufficient_donors: false,
        });
    }
    cfg.validate()?;
    let dev = buffer_deviations(project, start_year, &pool)?;

    for &tol in &cfg.tolerance_ladder {
        let selected: Vec<String> = pool
            .iter()
            .zip(&dev)
            .filter(|(_, &d)| d <= tol)
            .map(|(s, _)| s.site_id.clone())
            .collect();
        if selected.len() >= cfg.min_donors {
            return Ok(DonorSelection {
                project_id: project.site_id.clone(),
                pool_size_before: pool.len(),
                pool_size_after: selected.len(),
                selected,
                tolerance_used: Some(tol),
                insufficient_donors: false,
            });
        }
    }
    Ok(DonorSelection {
        project_id: project.site_id.clone(),
        selected: all_ids(),
        tolerance_used: cfg.tolerance_ladder.last().copied(),
        pool_size_before: pool.len(),
        pool_size_after: pool.len(),
        insufficient_donors: true,
    })
}
