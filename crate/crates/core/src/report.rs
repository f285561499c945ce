//! CSV and JSON writers for the report tables and plot data.
//!
//! Numbers are written at full precision; rounding is left to the reader.
//! Rows keep input order, so identical inputs give byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::credits::{CreditLedgerRow, LedgerTotals, PercentReal};
use crate::inference::{AttResult, SensitivityTable};
use crate::scsolver::{Method, ScFit};
use crate::validation::ValidationReport;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, ReportError> {
    csv::Writer::from_path(path).map_err(|source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    let err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn label(p: &Option<PercentReal>) -> String {
    p.as_ref().map(PercentReal::label).unwrap_or_default()
}

#[derive(Serialize)]
struct OffsetsRow<'a> {
    project: &'a str,
    country: &'a str,
    avoided_deforestation_ha: Option<f64>,
    baseline_raw_ha: Option<f64>,
    baseline_correct_ha: Option<f64>,
    expected_credits: Option<f64>,
    per_ha_raw: Option<f64>,
    per_ha_correct: Option<f64>,
    offsets_raw: f64,
    offsets_correct: f64,
}

/// Offsets per hectare and SC offsets under both baselines, with a `Sum` row.
pub fn write_offsets_table(path: &Path, rows: &[CreditLedgerRow], totals: &LedgerTotals) -> Result<(), ReportError> {
    let body = rows.iter().map(|r| OffsetsRow {
        project: &r.project_id,
        country: &r.country,
        avoided_deforestation_ha: Some(r.avoided_defor_ha),
        baseline_raw_ha: Some(r.baseline_raw_ha),
        baseline_correct_ha: Some(r.baseline_correct_ha),
        expected_credits: Some(r.expected_credits),
        per_ha_raw: Some(r.per_ha_raw),
        per_ha_correct: Some(r.per_ha_correct),
        offsets_raw: r.offsets_raw,
        offsets_correct: r.offsets_correct,
    });
    let sum = OffsetsRow {
        project: "Sum",
        country: "",
        avoided_deforestation_ha: None,
        baseline_raw_ha: None,
        baseline_correct_ha: None,
        expected_credits: None,
        per_ha_raw: None,
        per_ha_correct: None,
        offsets_raw: totals.total_offsets_raw,
        offsets_correct: totals.total_offsets_correct,
    };
    write_rows(path, body.chain(std::iter::once(sum)))
}

#[derive(Serialize)]
struct RealShareRow<'a> {
    project: &'a str,
    country: &'a str,
    expected_credits: f64,
    issued_credits: f64,
    offsets_raw: f64,
    offsets_correct: f64,
    pct_real_raw: Option<f64>,
    pct_real_correct: Option<f64>,
    pct_real_raw_label: String,
    pct_real_correct_label: String,
}

/// Share of credits backed by SC-estimated avoided deforestation, with a `TOTAL` row.
pub fn write_real_share_table(path: &Path, rows: &[CreditLedgerRow], totals: &LedgerTotals) -> Result<(), ReportError> {
    let body = rows.iter().map(|r| RealShareRow {
        project: &r.project_id,
        country: &r.country,
        expected_credits: r.expected_credits,
        issued_credits: r.issued_credits,
        offsets_raw: r.offsets_raw,
        offsets_correct: r.offsets_correct,
        pct_real_raw: r.pct_real_raw.map(|p| p.fraction),
        pct_real_correct: r.pct_real_correct.map(|p| p.fraction),
        pct_real_raw_label: label(&r.pct_real_raw),
        pct_real_correct_label: label(&r.pct_real_correct),
    });
    let total = RealShareRow {
        project: "TOTAL",
        country: "",
        expected_credits: totals.total_expected,
        issued_credits: totals.total_issued,
        offsets_raw: totals.total_offsets_raw,
        offsets_correct: totals.total_offsets_correct,
        pct_real_raw: Some(totals.pct_real_raw),
        pct_real_correct: Some(totals.pct_real_correct),
        pct_real_raw_label: format!("{:.2}%", 100.0 * totals.pct_real_raw),
        pct_real_correct_label: format!("{:.2}%", 100.0 * totals.pct_real_correct),
    };
    write_rows(path, body.chain(std::iter::once(total)))
}

/// Reports grouped by project in first-seen order, one slot per method.
fn by_project(reports: &[ValidationReport]) -> Vec<(Option<&ValidationReport>, Option<&ValidationReport>)> {
    let mut ids: Vec<&str> = Vec::new();
    for r in reports {
        if !ids.contains(&r.project_id.as_str()) {
            ids.push(&r.project_id);
        }
    }
    ids.into_iter()
        .map(|id| {
            let find = |m| reports.iter().find(|r| r.project_id == id && r.method == m);
            (find(Method::Ascm), find(Method::Scm))
        })
        .collect()
}

fn any<'a>(pair: &(Option<&'a ValidationReport>, Option<&'a ValidationReport>)) -> &'a ValidationReport {
    pair.0.or(pair.1).expect("at least one method per project")
}

#[derive(Serialize)]
struct FinalGapRow<'a> {
    country: &'a str,
    project_id: &'a str,
    end_of_validation_period: i32,
    ascm_diff_ha: Option<f64>,
    ascm_diff_pct: Option<f64>,
    ascm_pass: Option<bool>,
    scm_diff_ha: Option<f64>,
    scm_diff_pct: Option<f64>,
    scm_pass: Option<bool>,
}

/// Final validation-year gap as a share of project area.
pub fn write_final_gap_table(path: &Path, reports: &[ValidationReport]) -> Result<(), ReportError> {
    let rows: Vec<_> = by_project(reports)
        .into_iter()
        .map(|pair| {
            let r = any(&pair);
            let final_gap = |o: Option<&ValidationReport>| o.and_then(|r| r.final_gap);
            let (a, s) = (final_gap(pair.0), final_gap(pair.1));
            FinalGapRow {
                country: &r.country,
                project_id: &r.project_id,
                end_of_validation_period: r.window.validation_end_year,
                ascm_diff_ha: a.map(|w| w.diff_ha),
                ascm_diff_pct: a.map(|w| w.diff_pct_area),
                ascm_pass: pair.0.map(|r| r.final_gap_pass()),
                scm_diff_ha: s.map(|w| w.diff_ha),
                scm_diff_pct: s.map(|w| w.diff_pct_area),
                scm_pass: pair.1.map(|r| r.final_gap_pass()),
            }
        })
        .collect();
    write_rows(path, rows)
}

#[derive(Serialize)]
struct RmspeRow<'a> {
    country: &'a str,
    project_id: &'a str,
    ascm_rmspe_ratio: Option<f64>,
    ascm_pass: Option<bool>,
    scm_rmspe_ratio: Option<f64>,
    scm_pass: Option<bool>,
    perfect_fit: bool,
}

/// Validation over training RMSPE ratio.
pub fn write_rmspe_ratio_table(path: &Path, reports: &[ValidationReport]) -> Result<(), ReportError> {
    let rows: Vec<_> = by_project(reports)
        .into_iter()
        .map(|pair| {
            let r = any(&pair);
            let ratio = |o: Option<&ValidationReport>| o.and_then(|r| r.rmspe_ratio);
            let (a, s) = (ratio(pair.0), ratio(pair.1));
            RmspeRow {
                country: &r.country,
                project_id: &r.project_id,
                ascm_rmspe_ratio: a.map(|e| e.ratio),
                ascm_pass: pair.0.map(|r| r.rmspe_ratio_pass()),
                scm_rmspe_ratio: s.map(|e| e.ratio),
                scm_pass: pair.1.map(|r| r.rmspe_ratio_pass()),
                perfect_fit: a.is_some_and(|e| e.perfect_fit) || s.is_some_and(|e| e.perfect_fit),
            }
        })
        .collect();
    write_rows(path, rows)
}

#[derive(Serialize)]
struct MaxGapRow<'a> {
    country: &'a str,
    project_id: &'a str,
    years: String,
    ascm_diff_ha: Option<f64>,
    ascm_diff_pct: Option<f64>,
    ascm_pass: Option<bool>,
    scm_diff_ha: Option<f64>,
    scm_diff_pct: Option<f64>,
    scm_pass: Option<bool>,
    zero_final_deforestation: bool,
    error: String,
}

/// Largest validation-window gap as a share of final-year deforestation.
pub fn write_max_gap_table(path: &Path, reports: &[ValidationReport]) -> Result<(), ReportError> {
    let rows: Vec<_> = by_project(reports)
        .into_iter()
        .map(|pair| {
            let r = any(&pair);
            let max_gap = |o: Option<&ValidationReport>| o.and_then(|r| r.max_gap);
            let (a, s) = (max_gap(pair.0), max_gap(pair.1));
            let errors: Vec<String> = [pair.0, pair.1]
                .into_iter()
                .flatten()
                .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.method)))
                .collect();
            MaxGapRow {
                country: &r.country,
                project_id: &r.project_id,
                years: format!("{}-{}", r.window.train_end_year + 1, r.window.validation_end_year),
                ascm_diff_ha: a.map(|e| e.max_abs_diff_ha),
                ascm_diff_pct: a.map(|e| 100.0 * e.ratio),
                ascm_pass: pair.0.map(|r| r.max_gap_pass()),
                scm_diff_ha: s.map(|e| e.max_abs_diff_ha),
                scm_diff_pct: s.map(|e| 100.0 * e.ratio),
                scm_pass: pair.1.map(|r| r.max_gap_pass()),
                zero_final_deforestation: a.is_some_and(|e| e.zero_final_deforestation)
                    || s.is_some_and(|e| e.zero_final_deforestation),
                error: errors.join("; "),
            }
        })
        .collect();
    write_rows(path, rows)
}

#[derive(Serialize)]
struct SensitivityRow<'a> {
    country: &'a str,
    project_id: &'a str,
    method: Method,
    without_filter: Option<f64>,
    with_filter: Option<f64>,
    difference_pct: Option<f64>,
    sign_reversal: bool,
    filter_skipped: bool,
    error: &'a str,
}

pub fn write_sensitivity_table(path: &Path, table: &SensitivityTable) -> Result<(), ReportError> {
    write_rows(
        path,
        table.rows.iter().map(|r| SensitivityRow {
            country: &r.country,
            project_id: &r.project_id,
            method: r.method,
            without_filter: r.att_without,
            with_filter: r.att_with,
            difference_pct: r.diff_pct,
            sign_reversal: r.sign_reversal,
            filter_skipped: r.filter_skipped,
            error: r.error.as_deref().unwrap_or(""),
        }),
    )
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    project_id: &'a str,
    method: Method,
    filter: &'a str,
    year: i32,
    project_ha: Option<f64>,
    synthetic_ha: f64,
    gap_ha: f64,
    lower_ha: Option<f64>,
    upper_ha: Option<f64>,
}

/// Project, synthetic control and gap for every fitted year, with bands on
/// post-treatment years when they were computed.
pub fn write_gap_series(
    path: &Path,
    effects: &[(&ScFit, &AttResult, &crate::panel::SitePanel)],
) -> Result<(), ReportError> {
    let mut rows = Vec::new();
    for (fit, att, site) in effects {
        for (year, synthetic) in fit.fitted_series.iter() {
            let project = site.series.get(year);
            let band = |side: &dyn Fn(&crate::inference::Bands) -> Option<f64>| att.bands.as_ref().and_then(side);
            rows.push(SeriesRow {
                project_id: &att.project_id,
                method: att.method,
                filter: att.filter_state.name(),
                year,
                project_ha: project,
                synthetic_ha: synthetic,
                gap_ha: project.map_or(f64::NAN, |p| p - synthetic),
                lower_ha: band(&|b| b.lower.get(&year).copied()),
                upper_ha: band(&|b| b.upper.get(&year).copied()),
            });
        }
    }
    write_rows(path, rows)
}

#[derive(Serialize)]
struct WeightRow<'a> {
    project_id: &'a str,
    method: Method,
    donor_id: &'a str,
    weight: f64,
    scm_weight: Option<f64>,
}

pub fn write_weights(path: &Path, fits: &[&ScFit]) -> Result<(), ReportError> {
    let rows = fits.iter().flat_map(|f| {
        f.donor_ids.iter().enumerate().map(move |(j, d)| WeightRow {
            project_id: &f.project_id,
            method: f.method,
            donor_id: d,
            weight: f.weights[j],
            scm_weight: f.scm_weights.as_ref().map(|w| w[j]),
        })
    });
    write_rows(path, rows)
}

#[derive(Serialize)]
struct AttRow<'a> {
    project_id: &'a str,
    method: Method,
    filter: &'a str,
    att_ha: f64,
    avoided_ha: f64,
}

/// One ATT per project; `avoided_ha` is the final-year shortfall of the
/// project below its synthetic control (never negative), suitable as the
/// credits input.
pub fn write_att(path: &Path, atts: &[(&AttResult, f64)]) -> Result<(), ReportError> {
    write_rows(
        path,
        atts.iter().map(|(a, avoided)| AttRow {
            project_id: &a.project_id,
            method: a.method,
            filter: a.filter_state.name(),
            att_ha: a.att,
            avoided_ha: *avoided,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credits::{build_ledger, ledger_totals, CreditInput};

    #[test]
    fn s2_has_total_row() {
        let inputs = vec![CreditInput {
            project_id: "958".into(),
            country: "Peru".into(),
            avoided_ha: 2223.0,
            baseline_raw_ha: 2924.0,
            baseline_correct_ha: 1525.0,
            expected_credits: 630_937.0,
            issued_credits: 566_843.0,
            inflation_excluded: false,
        }];
        let rows = build_ledger(&inputs).unwrap();
        let totals = ledger_totals(&rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s2.csv");
        write_real_share_table(&p, &rows, &totals).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains(">100%"));
        assert!(lines[2].starts_with("TOTAL"));
    }
}
