//! Carbon-credit ledger recomputation.
//!
//! Each project's expected (ex-ante) credits are spread over its baseline
//! deforestation to get a fixed carbon value per hectare. Two baselines are
//! carried side by side:
//!
//! * `raw`: the reported figure, which adds deforestation from before the project
//!   started;
//! * `correct`: post-start deforestation only.
//!
//! Avoided deforestation from a synthetic-control analysis times the
//! per-hectare value gives the offsets that analysis supports. "Percent real"
//! divides those offsets by expected credits for the raw column and by
//! credits actually issued for the corrected column.
//!
//! All quantities stay at full precision; rounding happens only when tables
//! are printed.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{read_rows, PanelError};

#[derive(Debug, Error)]
pub enum CreditError {
    #[error("project {0}: baseline deforestation must be positive")]
    ZeroBaseline(String),
    #[error("credit denominator must be positive")]
    ZeroDenominator,
    #[error("project {0}: no avoided-deforestation value")]
    MissingAvoided(String),
    #[error("project {project}: {field} must be nonnegative")]
    Negative { project: String, field: &'static str },
    #[error("ledger is empty")]
    Empty,
    #[error(transparent)]
    Input(#[from] PanelError),
}

pub fn per_hectare_factor(expected_credits: f64, baseline_ha: f64) -> Result<f64, CreditError> {
    if !(baseline_ha > 0.0) {
        return Err(CreditError::ZeroBaseline(String::new()));
    }
    Ok(expected_credits / baseline_ha)
}

pub fn offsets_from_sc(avoided_ha: f64, per_ha: f64) -> f64 {
    avoided_ha * per_ha
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentReal {
    pub fraction: f64,
    /// Printed as ">100%".
    pub over_100: bool,
}

impl PercentReal {
    /// Whole-percent label as printed in ledgers.
    pub fn label(&self) -> String {
        if self.over_100 {
            ">100%".to_string()
        } else {
            format!("{}%", round_half_away(100.0 * self.fraction, 0))
        }
    }
}

pub fn percent_real(offsets_sc: f64, denominator_credits: f64) -> Result<PercentReal, CreditError> {
    if !(denominator_credits > 0.0) {
        return Err(CreditError::ZeroDenominator);
    }
    let fraction = offsets_sc / denominator_credits;
    Ok(PercentReal {
        fraction,
        over_100: fraction > 1.0,
    })
}

/// Rounds half away from zero to `digits` decimals.
pub fn round_half_away(x: f64, digits: i32) -> f64 {
    let m = 10f64.powi(digits);
    (x * m).round() / m
}

/// One project's credit inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditInput {
    pub project_id: String,
    pub country: String,
    pub avoided_ha: f64,
    pub baseline_raw_ha: f64,
    pub baseline_correct_ha: f64,
    pub expected_credits: f64,
    pub issued_credits: f64,
    /// Excluded from baseline-inflation statistics (known source-document error).
    pub inflation_excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditLedgerRow {
    pub project_id: String,
    pub country: String,
    pub avoided_defor_ha: f64,
    pub baseline_raw_ha: f64,
    pub baseline_correct_ha: f64,
    pub expected_credits: f64,
    pub issued_credits: f64,
    pub per_ha_raw: f64,
    pub per_ha_correct: f64,
    pub offsets_raw: f64,
    pub offsets_correct: f64,
    /// Against expected credits; `None` when there are none.
    pub pct_real_raw: Option<PercentReal>,
    /// Against issued credits; `None` when none were issued.
    pub pct_real_correct: Option<PercentReal>,
    pub inflation_excluded: bool,
}

impl CreditLedgerRow {
    pub fn compute(input: &CreditInput) -> Result<Self, CreditError> {
        let id = &input.project_id;
        for (field, v) in [
            ("avoided_ha", input.avoided_ha),
            ("expected_credits", input.expected_credits),
            ("issued_credits", input.issued_credits),
        ] {
            if !(v >= 0.0) {
                return Err(CreditError::Negative {
                    project: id.clone(),
                    field,
                });
            }
        }
        let with_id = |e: CreditError| match e {
            CreditError::ZeroBaseline(_) => CreditError::ZeroBaseline(id.clone()),
            other => other,
        };
        let per_ha_raw =
            per_hectare_factor(input.expected_credits, input.baseline_raw_ha).map_err(with_id)?;
        let per_ha_correct =
            per_hectare_factor(input.expected_credits, input.baseline_correct_ha).map_err(with_id)?;
        let offsets_raw = offsets_from_sc(input.avoided_ha, per_ha_raw);
        let offsets_correct = offsets_from_sc(input.avoided_ha, per_ha_correct);
        Ok(Self {
            project_id: input.project_id.clone(),
            country: input.country.clone(),
            avoided_defor_ha: input.avoided_ha,
            baseline_raw_ha: input.baseline_raw_ha,
            baseline_correct_ha: input.baseline_correct_ha,
            expected_credits: input.expected_credits,
            issued_credits: input.issued_credits,
            per_ha_raw,
            per_ha_correct,
            offsets_raw,
            offsets_correct,
            pct_real_raw: percent_real(offsets_raw, input.expected_credits).ok(),
            pct_real_correct: percent_real(offsets_correct, input.issued_credits).ok(),
            inflation_excluded: input.inflation_excluded,
        })
    }
}

pub fn build_ledger(inputs: &[CreditInput]) -> Result<Vec<CreditLedgerRow>, CreditError> {
    inputs.iter().map(CreditLedgerRow::compute).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub total_expected: f64,
    pub total_issued: f64,
    pub total_offsets_raw: f64,
    pub total_offsets_correct: f64,
    /// Total raw-baseline offsets over total expected credits.
    pub pct_real_raw: f64,
    /// Total corrected offsets over total issued credits.
    pub pct_real_correct: f64,
    /// `pct_real_correct / pct_real_raw - 1`; `None` when the raw share is zero.
    pub relative_increase: Option<f64>,
}

/// Ordered sums over the ledger.
pub fn ledger_totals(rows: &[CreditLedgerRow]) -> Result<LedgerTotals, CreditError> {
    if rows.is_empty() {
        return Err(CreditError::Empty);
    }
    let sum = |f: fn(&CreditLedgerRow) -> f64| rows.iter().map(f).sum::<f64>();
    let total_expected = sum(|r| r.expected_credits);
    let total_issued = sum(|r| r.issued_credits);
    let total_offsets_raw = sum(|r| r.offsets_raw);
    let total_offsets_correct = sum(|r| r.offsets_correct);
    let pct_real_raw = percent_real(total_offsets_raw, total_expected)?.fraction;
    let pct_real_correct = percent_real(total_offsets_correct, total_issued)?.fraction;
    Ok(LedgerTotals {
        total_expected,
        total_issued,
        total_offsets_raw,
        total_offsets_correct,
        pct_real_raw,
        pct_real_correct,
        relative_increase: (pct_real_raw > 0.0).then(|| pct_real_correct / pct_real_raw - 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineInflation {
    /// Unweighted mean over rows of `baseline_raw / baseline_correct - 1`, in percent.
    pub mean_pct: f64,
    /// Mean of the same ratios weighted by raw-baseline SC offsets; equals the
    /// relative increase in total SC offsets when switching baselines.
    /// `None` when no row has offsets.
    pub offset_weighted_mean_pct: Option<f64>,
    pub min_pct: f64,
    pub max_pct: f64,
    pub rows_used: usize,
}

/// Inflation of the raw baseline over the corrected one, skipping excluded rows.
pub fn baseline_inflation_stats(rows: &[CreditLedgerRow]) -> Result<BaselineInflation, CreditError> {
    let used: Vec<&CreditLedgerRow> = rows.iter().filter(|r| !r.inflation_excluded).collect();
    if used.is_empty() {
        return Err(CreditError::Empty);
    }
    let pct: Vec<f64> = used
        .iter()
        .map(|r| 100.0 * (r.baseline_raw_ha / r.baseline_correct_ha - 1.0))
        .collect();
    let weight: f64 = used.iter().map(|r| r.offsets_raw).sum();
    let weighted = used
        .iter()
        .zip(&pct)
        .map(|(r, p)| r.offsets_raw * p)
        .sum::<f64>();
    Ok(BaselineInflation {
        mean_pct: pct.iter().sum::<f64>() / pct.len() as f64,
        offset_weighted_mean_pct: (weight > 0.0).then(|| weighted / weight),
        min_pct: pct.iter().copied().fold(f64::INFINITY, f64::min),
        max_pct: pct.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rows_used: used.len(),
    })
}

#[derive(Debug, Deserialize)]
struct CreditMetaRow {
    project_id: String,
    #[serde(default)]
    country: String,
    expected_credits: f64,
    issued_credits: f64,
    baseline_raw_ha: f64,
    baseline_correct_ha: f64,
    #[serde(default)]
    inflation_excluded: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct AvoidedRow {
    project_id: String,
    avoided_ha: f64,
}

pub const AVOIDED_COLUMNS: [&str; 2] = ["project_id", "avoided_ha"];

/// Reads credit inputs from a meta file (year columns may be blank) and an
/// avoided-deforestation file.
pub fn load_credit_inputs(meta_path: &Path, avoided_path: &Path) -> Result<Vec<CreditInput>, CreditError> {
    let meta: Vec<CreditMetaRow> = read_rows(
        meta_path,
        &[
            "project_id",
            "expected_credits",
            "issued_credits",
            "baseline_raw_ha",
            "baseline_correct_ha",
        ],
    )?;
    let avoided: Vec<AvoidedRow> = read_rows(avoided_path, &AVOIDED_COLUMNS)?;
    let avoided: HashMap<String, f64> = avoided.into_iter().map(|r| (r.project_id, r.avoided_ha)).collect();
    meta.into_iter()
        .map(|m| {
            let avoided_ha = *avoided
                .get(&m.project_id)
                .ok_or_else(|| CreditError::MissingAvoided(m.project_id.clone()))?;
            Ok(CreditInput {
                project_id: m.project_id,
                country: m.country,
                avoided_ha,
                baseline_raw_ha: m.baseline_raw_ha,
                baseline_correct_ha: m.baseline_correct_ha,
                expected_credits: m.expected_credits,
                issued_credits: m.issued_credits,
                inflation_excluded: m.inflation_excluded.unwrap_or(false),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(avoided: f64, raw: f64, correct: f64, expected: f64, issued: f64) -> CreditInput {
        CreditInput {
            project_id: "p".into(),
            country: "X".into(),
            avoided_ha: avoided,
            baseline_raw_ha: raw,
            baseline_correct_ha: correct,
            expected_credits: expected,
            issued_credits: issued,
            inflation_excluded: false,
        }
    }

    #[test]
    fn per_hectare_values() {
        assert_eq!(round_half_away(per_hectare_factor(630_937.0, 1_525.0).unwrap(), 0), 414.0);
        assert_eq!(round_half_away(per_hectare_factor(630_937.0, 2_924.0).unwrap(), 0), 216.0);
        assert_eq!(per_hectare_factor(0.0, 10.0).unwrap(), 0.0);
        assert!(matches!(per_hectare_factor(1.0, 0.0), Err(CreditError::ZeroBaseline(_))));
    }

    #[test]
    fn offsets_need_unrounded_factor() {
        let v = offsets_from_sc(4_727.0, 4_817_471.0 / 11_893.0);
        assert_eq!(round_half_away(v, 0), 1_914_755.0);
        // The rounded factor (405) would give 1 914 435.
        assert_ne!(round_half_away(4_727.0 * 405.0, 0), 1_914_755.0);
        let v = offsets_from_sc(2_223.0, 630_937.0 / 1_525.0);
        assert_eq!(round_half_away(v, 0), 919_720.0);
        assert_eq!(offsets_from_sc(0.0, 123.0), 0.0);
    }

    #[test]
    fn percent_real_values() {
        let p = percent_real(854_408.0, 5_282_313.0).unwrap();
        assert_eq!(p.label(), "16%");
        let p = percent_real(600_976.0, 567_286.0).unwrap();
        assert!(p.over_100);
        assert_eq!(p.label(), ">100%");
        assert_eq!(percent_real(0.0, 10.0).unwrap().fraction, 0.0);
        assert!(matches!(percent_real(1.0, 0.0), Err(CreditError::ZeroDenominator)));
    }

    #[test]
    fn single_zero_row_totals() {
        let rows = build_ledger(&[input(0.0, 10.0, 8.0, 100.0, 50.0)]).unwrap();
        let t = ledger_totals(&rows).unwrap();
        assert_eq!(t.total_expected, 100.0);
        assert_eq!(t.total_offsets_raw, 0.0);
        assert_eq!(t.relative_increase, None);
    }

    #[test]
    fn inflation_arithmetic() {
        let rows = build_ledger(&[input(1.0, 120.0, 100.0, 1.0, 1.0)]).unwrap();
        let s = baseline_inflation_stats(&rows).unwrap();
        assert!((s.mean_pct - 20.0).abs() < 1e-12);
        let rows = build_ledger(&[input(1.0, 100.0, 100.0, 1.0, 1.0)]).unwrap();
        assert_eq!(baseline_inflation_stats(&rows).unwrap().mean_pct, 0.0);
    }

    #[test]
    fn weighted_inflation_matches_offset_growth() {
        let rows = build_ledger(&[
            input(10.0, 150.0, 100.0, 1000.0, 800.0),
            input(30.0, 110.0, 100.0, 2000.0, 900.0),
            input(0.0, 300.0, 100.0, 500.0, 100.0),
        ])
        .unwrap();
        let s = baseline_inflation_stats(&rows).unwrap();
        let t = ledger_totals(&rows).unwrap();
        let growth = 100.0 * (t.total_offsets_correct / t.total_offsets_raw - 1.0);
        assert!((s.offset_weighted_mean_pct.unwrap() - growth).abs() < 1e-9);
    }

    #[test]
    fn corrected_offsets_dominate() {
        let r = CreditLedgerRow::compute(&input(5.0, 120.0, 100.0, 1000.0, 900.0)).unwrap();
        assert!(r.offsets_correct >= r.offsets_raw);
    }
}
