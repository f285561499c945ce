//! Deforestation panels: per-site cumulative series, project metadata and CSV I/O.
//!
//! Deforestation is stored cumulatively (hectares since the first year of
//! record). Annual increments are derived on demand with [`annual_increments`].
//! Years are contiguous calendar integers; a missing interior year is an
//! ingestion error, never interpolated.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("{file}: missing column '{column}'")]
    MissingColumn { file: String, column: String },
    #[error("site {site}: {which} series decreases at year {year}")]
    NonMonotoneSeries {
        site: String,
        which: &'static str,
        year: i32,
    },
    #[error("site {site}: deforestation {value} ha at year {year} outside [0, {area}]")]
    SeriesExceedsArea {
        site: String,
        year: i32,
        value: f64,
        area: f64,
    },
    #[error("site {site}: year {missing} missing between {first} and {last}")]
    YearGap {
        site: String,
        first: i32,
        last: i32,
        missing: i32,
    },
    #[error("duplicate site id {0}")]
    DuplicateSiteId(String),
    #[error("site {site}: year {year} listed twice")]
    DuplicateSiteYear { site: String, year: i32 },
    #[error("site {0}: area_ha must be positive")]
    NonPositiveArea(String),
    #[error("site {site}: negative buffer deforestation at year {year}")]
    NegativeBuffer { site: String, year: i32 },
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("unknown role '{role}' for site {site} (expected project|donor)")]
    UnknownRole { site: String, role: String },
    #[error("project {0} has no metadata row")]
    MissingMeta(String),
    #[error("project {project}: {reason}")]
    InvalidMeta { project: String, reason: String },
    #[error("project {project}: no donors in country {country}")]
    EmptyCountryPool { project: String, country: String },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PanelError>;

/// Contiguous annual series starting at `first_year`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSeries {
    first_year: i32,
    values: Vec<f64>,
}

impl YearSeries {
    pub fn new(first_year: i32, values: Vec<f64>) -> Self {
        Self { first_year, values }
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    /// Last year of the domain. Meaningless on an empty series.
    pub fn last_year(&self) -> i32 {
        self.first_year + self.values.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contains(&self, year: i32) -> bool {
        !self.values.is_empty() && year >= self.first_year && year <= self.last_year()
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        if self.contains(year) {
            Some(self.values[(year - self.first_year) as usize])
        } else {
            None
        }
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.values.len()).map(move |i| self.first_year + i as i32)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.first_year + i as i32, *v))
    }

    pub fn to_map(&self) -> BTreeMap<i32, f64> {
        self.iter().collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.first_year, self.values.iter().map(|&v| f(v)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Project,
    Donor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePanel {
    pub site_id: String,
    pub country: String,
    pub area_ha: f64,
    /// Cumulative deforestation (ha).
    pub series: YearSeries,
    /// Cumulative deforestation in the surrounding buffer zone (ha).
    pub buffer_series: YearSeries,
    pub covariates: BTreeMap<String, f64>,
}

impl SitePanel {
    /// Checks the cumulative-series invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.area_ha > 0.0 && self.area_ha.is_finite()) {
            return Err(PanelError::NonPositiveArea(self.site_id.clone()));
        }
        let mut prev: Option<f64> = None;
        for (year, v) in self.series.iter() {
            if !(0.0..=self.area_ha).contains(&v) {
                return Err(PanelError::SeriesExceedsArea {
                    site: self.site_id.clone(),
                    year,
                    value: v,
                    area: self.area_ha,
                });
            }
            if let Some(p) = prev {
                if v < p {
                    return Err(PanelError::NonMonotoneSeries {
                        site: self.site_id.clone(),
                        which: "deforestation",
                        year,
                    });
                }
            }
            prev = Some(v);
        }
        let mut prev: Option<f64> = None;
        for (year, v) in self.buffer_series.iter() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PanelError::NegativeBuffer {
                    site: self.site_id.clone(),
                    year,
                });
            }
            if let Some(p) = prev {
                if v < p {
                    return Err(PanelError::NonMonotoneSeries {
                        site: self.site_id.clone(),
                        which: "buffer",
                        year,
                    });
                }
            }
            prev = Some(v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub project_id: String,
    pub country: String,
    pub start_year: i32,
    /// Last year of the pre-treatment validation window.
    pub validation_end_year: i32,
    /// Ex-ante credits (Mg CO2).
    pub expected_credits: f64,
    /// Ex-post issued credits (Mg CO2).
    pub issued_credits: f64,
    /// Baseline including pre-project years (ha).
    pub baseline_deforestation_raw: f64,
    /// Baseline counting post-start years only (ha).
    pub baseline_deforestation_correct: f64,
}

impl ProjectMeta {
    fn invalid(&self, reason: impl Into<String>) -> PanelError {
        PanelError::InvalidMeta {
            project: self.project_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the invariants that do not depend on the panel.
    pub fn validate(&self) -> Result<()> {
        if self.validation_end_year >= self.start_year {
            return Err(self.invalid("validation_end_year must precede start_year"));
        }
        for (name, v) in [
            ("expected_credits", self.expected_credits),
            ("issued_credits", self.issued_credits),
            ("baseline_raw_ha", self.baseline_deforestation_raw),
            ("baseline_correct_ha", self.baseline_deforestation_correct),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(self.invalid(format!("{name} must be nonnegative")));
            }
        }
        if self.baseline_deforestation_correct > self.baseline_deforestation_raw {
            return Err(self.invalid("baseline_correct_ha exceeds baseline_raw_ha"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub panel: SitePanel,
    pub meta: ProjectMeta,
}

impl Project {
    pub fn id(&self) -> &str {
        &self.meta.project_id
    }
}

/// Immutable collection of projects and donor candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSet {
    pub projects: Vec<Project>,
    pub donors: Vec<SitePanel>,
}

impl PanelSet {
    /// Builds a set and checks every cross-record invariant.
    pub fn new(projects: Vec<Project>, donors: Vec<SitePanel>) -> Result<Self> {
        let mut seen = HashSet::new();
        for site in projects.iter().map(|p| &p.panel).chain(donors.iter()) {
            if !seen.insert(site.site_id.as_str()) {
                return Err(PanelError::DuplicateSiteId(site.site_id.clone()));
            }
            site.validate()?;
        }
        for p in &projects {
            p.meta.validate()?;
            let s = &p.panel.series;
            if p.meta.project_id != p.panel.site_id {
                return Err(p.meta.invalid("project_id does not match its site"));
            }
            if !(p.meta.start_year > s.first_year() && p.meta.start_year <= s.last_year()) {
                return Err(p.meta.invalid(format!(
                    "start_year {} not strictly inside series domain {}..={}",
                    p.meta.start_year,
                    s.first_year(),
                    s.last_year()
                )));
            }
            if p.meta.validation_end_year < s.first_year() {
                return Err(p.meta.invalid("validation_end_year precedes the series"));
            }
            if !donors.iter().any(|d| d.country == p.panel.country) {
                return Err(PanelError::EmptyCountryPool {
                    project: p.meta.project_id.clone(),
                    country: p.panel.country.clone(),
                });
            }
        }
        Ok(Self { projects, donors })
    }

    /// Donor candidates sharing the project's country, in file order.
    pub fn pool(&self, country: &str) -> Vec<&SitePanel> {
        self.donors.iter().filter(|d| d.country == country).collect()
    }

    pub fn project(&self, id: &str) -> Option<&Project> {
        self.projects.iter().find(|p| p.id() == id)
    }
}

/// Year-on-year differences of the cumulative series; the first year has no entry.
pub fn annual_increments(panel: &SitePanel) -> BTreeMap<i32, f64> {
    let v = panel.series.values();
    panel
        .series
        .years()
        .zip(v.iter())
        .skip(1)
        .zip(v.iter())
        .map(|((year, cur), prev)| (year, cur - prev))
        .collect()
}

/// Rebuilds a cumulative series from a starting level and increments.
pub fn cumulate(first_year: i32, initial: f64, increments: &[f64]) -> YearSeries {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = initial;
    out.push(acc);
    for inc in increments {
        acc += inc;
        out.push(acc);
    }
    YearSeries::new(first_year, out)
}

// ---------------------------------------------------------------------------
// CSV ingestion

#[derive(Debug, Deserialize, Serialize)]
struct SiteRow {
    site_id: String,
    country: String,
    role: String,
    area_ha: f64,
    year: i32,
    cum_defor_ha: f64,
    buffer_cum_defor_ha: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct CovariateRow {
    site_id: String,
    covariate_name: String,
    value: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct MetaRow {
    project_id: String,
    country: String,
    start_year: i32,
    validation_end_year: i32,
    expected_credits: f64,
    issued_credits: f64,
    baseline_raw_ha: f64,
    baseline_correct_ha: f64,
}

pub const SITE_COLUMNS: [&str; 7] = [
    "site_id",
    "country",
    "role",
    "area_ha",
    "year",
    "cum_defor_ha",
    "buffer_cum_defor_ha",
];
pub const COVARIATE_COLUMNS: [&str; 3] = ["site_id", "covariate_name", "value"];
pub const META_COLUMNS: [&str; 8] = [
    "project_id",
    "country",
    "start_year",
    "validation_end_year",
    "expected_credits",
    "issued_credits",
    "baseline_raw_ha",
    "baseline_correct_ha",
];

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

/// Opens a CSV reader and checks that every required column is present.
pub(crate) fn open_csv(path: &Path, required: &[&str]) -> Result<csv::Reader<File>> {
    let label = file_label(path);
    let file = File::open(path).map_err(|source| PanelError::Io {
        file: label.clone(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|source| PanelError::Csv {
            file: label.clone(),
            source,
        })?
        .clone();
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(PanelError::MissingColumn {
                file: label,
                column: (*col).to_string(),
            });
        }
    }
    Ok(rdr)
}

pub(crate) fn read_rows<T: serde::de::DeserializeOwned>(
    path: &Path,
    required: &[&str],
) -> Result<Vec<T>> {
    let label = file_label(path);
    let mut rdr = open_csv(path, required)?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|source| PanelError::Csv {
                file: label.clone(),
                source,
            })
        })
        .collect()
}

struct SiteAccum {
    country: String,
    role: Role,
    area_ha: f64,
    points: BTreeMap<i32, (f64, f64)>,
}

/// Reads the long-format sites file into panels, in order of first appearance.
pub fn load_sites(path: &Path) -> Result<Vec<(Role, SitePanel)>> {
    let rows: Vec<SiteRow> = read_rows(path, &SITE_COLUMNS)?;
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, SiteAccum> = HashMap::new();
    for row in rows {
        let role = match row.role.to_ascii_lowercase().as_str() {
            "project" => Role::Project,
            "donor" => Role::Donor,
            _ => {
                return Err(PanelError::UnknownRole {
                    site: row.site_id,
                    role: row.role,
                })
            }
        };
        let entry = acc.entry(row.site_id.clone()).or_insert_with(|| {
            order.push(row.site_id.clone());
            SiteAccum {
                country: row.country.clone(),
                role,
                area_ha: row.area_ha,
                points: BTreeMap::new(),
            }
        });
        if entry.country != row.country || entry.role != role || entry.area_ha != row.area_ha {
            return Err(PanelError::DuplicateSiteId(row.site_id));
        }
        if entry
            .points
            .insert(row.year, (row.cum_defor_ha, row.buffer_cum_defor_ha))
            .is_some()
        {
            return Err(PanelError::DuplicateSiteYear {
                site: row.site_id,
                year: row.year,
            });
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let a = acc.remove(&id).expect("site recorded in order list");
        let first = *a.points.keys().next().expect("at least one row per site");
        let last = *a.points.keys().next_back().expect("at least one row per site");
        if let Some(missing) = (first..=last).find(|y| !a.points.contains_key(y)) {
            return Err(PanelError::YearGap {
                site: id,
                first,
                last,
                missing,
            });
        }
        let (series, buffer): (Vec<f64>, Vec<f64>) = a.points.values().copied().unzip();
        let panel = SitePanel {
            site_id: id,
            country: a.country,
            area_ha: a.area_ha,
            series: YearSeries::new(first, series),
            buffer_series: YearSeries::new(first, buffer),
            covariates: BTreeMap::new(),
        };
        panel.validate()?;
        out.push((a.role, panel));
    }
    Ok(out)
}

pub fn load_meta(path: &Path) -> Result<Vec<ProjectMeta>> {
    let rows: Vec<MetaRow> = read_rows(path, &META_COLUMNS)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        if !seen.insert(r.project_id.clone()) {
            return Err(PanelError::DuplicateSiteId(r.project_id));
        }
        let meta = ProjectMeta {
            project_id: r.project_id,
            country: r.country,
            start_year: r.start_year,
            validation_end_year: r.validation_end_year,
            expected_credits: r.expected_credits,
            issued_credits: r.issued_credits,
            baseline_deforestation_raw: r.baseline_raw_ha,
            baseline_deforestation_correct: r.baseline_correct_ha,
        };
        meta.validate()?;
        out.push(meta);
    }
    Ok(out)
}

/// Loads sites, optional covariates and project metadata into a checked [`PanelSet`].
pub fn load_panels(
    sites_path: &Path,
    covariates_path: Option<&Path>,
    meta_path: &Path,
) -> Result<PanelSet> {
    let mut sites = load_sites(sites_path)?;
    if let Some(cov_path) = covariates_path {
        let rows: Vec<CovariateRow> = read_rows(cov_path, &COVARIATE_COLUMNS)?;
        let index: HashMap<String, usize> = sites
            .iter()
            .enumerate()
            .map(|(i, (_, s))| (s.site_id.clone(), i))
            .collect();
        for r in rows {
            let &i = index
                .get(&r.site_id)
                .ok_or_else(|| PanelError::UnknownSite(r.site_id.clone()))?;
            sites[i].1.covariates.insert(r.covariate_name, r.value);
        }
    }
    let metas = load_meta(meta_path)?;
    let mut meta_by_id: HashMap<String, ProjectMeta> =
        metas.into_iter().map(|m| (m.project_id.clone(), m)).collect();

    let mut projects = Vec::new();
    let mut donors = Vec::new();
    for (role, panel) in sites {
        match role {
            Role::Project => {
                let meta = meta_by_id
                    .remove(&panel.site_id)
                    .ok_or_else(|| PanelError::MissingMeta(panel.site_id.clone()))?;
                if meta.country != panel.country {
                    return Err(meta.invalid("country differs between meta and sites files"));
                }
                projects.push(Project { panel, meta });
            }
            Role::Donor => donors.push(panel),
        }
    }
    if let Some(id) = meta_by_id.into_keys().min() {
        return Err(PanelError::UnknownSite(id));
    }
    PanelSet::new(projects, donors)
}

// ---------------------------------------------------------------------------
// CSV output

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| PanelError::Io {
        file: file_label(path),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> PanelError + '_ {
    move |source| PanelError::Csv {
        file: file_label(path),
        source,
    }
}

/// Paths of the three panel files inside a directory.
pub fn panel_paths(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join("sites.csv"),
        dir.join("covariates.csv"),
        dir.join("meta.csv"),
    )
}

/// Writes `sites.csv`, `covariates.csv` and `meta.csv` into `dir`.
pub fn write_panels(set: &PanelSet, dir: &Path) -> Result<()> {
    let (sites_path, cov_path, meta_path) = panel_paths(dir);

    let mut w = csv_writer(&sites_path)?;
    let sites = set
        .projects
        .iter()
        .map(|p| (Role::Project, &p.panel))
        .chain(set.donors.iter().map(|d| (Role::Donor, d)));
    let mut cov_rows = Vec::new();
    for (role, s) in sites {
        for ((year, cum), buf) in s.series.iter().zip(s.buffer_series.values()) {
            w.serialize(SiteRow {
                site_id: s.site_id.clone(),
                country: s.country.clone(),
                role: match role {
                    Role::Project => "project".into(),
                    Role::Donor => "donor".into(),
                },
                area_ha: s.area_ha,
                year,
                cum_defor_ha: cum,
                buffer_cum_defor_ha: *buf,
            })
            .map_err(csv_err(&sites_path))?;
        }
        for (name, value) in &s.covariates {
            cov_rows.push(CovariateRow {
                site_id: s.site_id.clone(),
                covariate_name: name.clone(),
                value: *value,
            });
        }
    }
    w.flush().map_err(|source| PanelError::Io {
        file: file_label(&sites_path),
        source,
    })?;

    let mut w = csv_writer(&cov_path)?;
    if cov_rows.is_empty() {
        w.write_record(COVARIATE_COLUMNS).map_err(csv_err(&cov_path))?;
    }
    for r in cov_rows {
        w.serialize(r).map_err(csv_err(&cov_path))?;
    }
    w.flush().map_err(|source| PanelError::Io {
        file: file_label(&cov_path),
        source,
    })?;

    let mut w = csv_writer(&meta_path)?;
    for p in &set.projects {
        let m = &p.meta;
        w.serialize(MetaRow {
            project_id: m.project_id.clone(),
            country: m.country.clone(),
            start_year: m.start_year,
            validation_end_year: m.validation_end_year,
            expected_credits: m.expected_credits,
            issued_credits: m.issued_credits,
            baseline_raw_ha: m.baseline_deforestation_raw,
            baseline_correct_ha: m.baseline_deforestation_correct,
        })
        .map_err(csv_err(&meta_path))?;
    }
    let mut inner = w.into_inner().map_err(|e| PanelError::Io {
        file: file_label(&meta_path),
        source: e.into_error(),
    })?;
    inner.flush().map_err(|source| PanelError::Io {
        file: file_label(&meta_path),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(series: Vec<f64>) -> SitePanel {
        let n = series.len();
        SitePanel {
            site_id: "s".into(),
            country: "c".into(),
            area_ha: 100.0,
            series: YearSeries::new(2000, series),
            buffer_series: YearSeries::new(2000, vec![0.0; n]),
            covariates: BTreeMap::new(),
        }
    }

    #[test]
    fn increments_of_flat_then_step() {
        let inc = annual_increments(&panel(vec![0.0, 5.0, 5.0]));
        assert_eq!(inc, BTreeMap::from([(2001, 5.0), (2002, 0.0)]));
    }

    #[test]
    fn increments_hand_differenced() {
        let inc = annual_increments(&panel(vec![1.0, 4.0, 9.0]));
        assert_eq!(inc, BTreeMap::from([(2001, 3.0), (2002, 5.0)]));
    }

    #[test]
    fn constant_series_has_zero_increments() {
        let inc = annual_increments(&panel(vec![7.0; 5]));
        assert!(inc.values().all(|&v| v == 0.0));
        assert_eq!(inc.len(), 4);
    }

    #[test]
    fn validate_rejects_decrease_and_overflow() {
        assert!(matches!(
            panel(vec![10.0, 9.0]).validate(),
            Err(PanelError::NonMonotoneSeries { year: 2001, .. })
        ));
        assert!(matches!(
            panel(vec![0.0, 120.0]).validate(),
            Err(PanelError::SeriesExceedsArea { year: 2001, .. })
        ));
    }

    #[test]
    fn year_series_lookup() {
        let s = YearSeries::new(2005, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.last_year(), 2007);
        assert_eq!(s.get(2006), Some(2.0));
        assert_eq!(s.get(2004), None);
        assert_eq!(s.get(2008), None);
    }

    #[test]
    fn meta_invariants() {
        let mut m = ProjectMeta {
            project_id: "p".into(),
            country: "c".into(),
            start_year: 2010,
            validation_end_year: 2009,
            expected_credits: 1.0,
            issued_credits: 1.0,
            baseline_deforestation_raw: 10.0,
            baseline_deforestation_correct: 8.0,
        };
        assert!(m.validate().is_ok());
        m.validation_end_year = 2010;
        assert!(m.validate().is_err());
        m.validation_end_year = 2008;
        m.baseline_deforestation_correct = 11.0;
        assert!(m.validate().is_err());
    }
}
