//! Randomised invariants shared by the property tests and the acceptance run.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::Config;

use reddcheck::biascorrect::BiasModel;
use reddcheck::credits::{CreditInput, CreditLedgerRow};
use reddcheck::donorpool::{filter_donors, FilterConfig};
use reddcheck::inference::{diff_pct, jackknife_plus_bands, SensitivityRow, SensitivityTable};
use reddcheck::panel::{annual_increments, cumulate, load_panels, panel_paths, write_panels, SitePanel, YearSeries};
use reddcheck::scsolver::{fit, FitConfig, Method, RidgeLambda, ScFit};
use reddcheck::simgen::{generate, IncrementProcess, ScenarioSpec, SensorMode};
use reddcheck::simplex::{project_simplex, simplex_least_squares};
use reddcheck::validation::{max_gap_test, rmspe_ratio_test, final_gap_test, Thresholds, Window};

pub const CASES: u32 = 256;
const FIRST: i32 = 2001;

fn site(id: &str, cum: Vec<f64>, buffer_factor: f64) -> SitePanel {
    let area = cum.last().copied().unwrap_or(0.0) * 10.0 + 1000.0;
    SitePanel {
        site_id: id.to_string(),
        country: "X".into(),
        area_ha: area,
        buffer_series: YearSeries::new(FIRST, cum.iter().map(|v| v * buffer_factor).collect()),
        series: YearSeries::new(FIRST, cum),
        covariates: BTreeMap::new(),
    }
}

fn cumsum(inc: &[f64]) -> Vec<f64> {
    inc.iter()
        .scan(0.0, |a, x| {
            *a += x;
            Some(*a)
        })
        .collect()
}

/// A project and donors over `years` years; the project is a noisy convex
/// combination of the donors, so fits are nontrivial but well posed.
#[derive(Debug, Clone)]
struct Case {
    project: SitePanel,
    donors: Vec<SitePanel>,
    years: usize,
}

fn case_strategy() -> impl Strategy<Value = Case> {
    (2usize..=5, 8usize..=14).prop_flat_map(|(n, years)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..50.0, years), n),
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(-3.0f64..3.0, years),
            prop::collection::vec(1.0f64..4.0, n + 1),
        )
            .prop_map(move |(incs, raw_w, noise, bufs)| {
                let donors: Vec<SitePanel> = incs
                    .iter()
                    .enumerate()
                    .map(|(j, inc)| site(&format!("D{j}"), cumsum(inc), bufs[j]))
                    .collect();
                let s: f64 = raw_w.iter().sum();
                let proj_inc: Vec<f64> = (0..years)
                    .map(|t| {
                        let v: f64 = incs.iter().zip(&raw_w).map(|(i, w)| i[t] * w / s).sum();
                        (v + noise[t]).max(0.0)
                    })
                    .collect();
                Case {
                    project: site("P", cumsum(&proj_inc), bufs[n]),
                    donors,
                    years,
                }
            })
    })
}

fn refs(v: &[SitePanel]) -> Vec<&SitePanel> {
    v.iter().collect()
}

fn scaled(s: &SitePanel, c: f64, scale_area: bool) -> SitePanel {
    SitePanel {
        series: s.series.map(|v| v * c),
        buffer_series: s.buffer_series.map(|v| v * c),
        area_ha: if scale_area { s.area_ha * c } else { s.area_ha },
        ..s.clone()
    }
}

fn train_end(c: &Case) -> i32 {
    FIRST + (c.years as i32) / 2
}

fn window(c: &Case) -> Window {
    Window {
        train_end_year: train_end(c),
        validation_end_year: FIRST + c.years as i32 - 1,
    }
}

fn scm(c: &Case) -> ScFit {
    fit(&c.project, &refs(&c.donors), &FitConfig::new(Method::Scm, train_end(c))).unwrap()
}

fn sup_diff(a: &YearSeries, b: &YearSeries) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn series_scale(c: &Case) -> f64 {
    c.donors
        .iter()
        .chain(std::iter::once(&c.project))
        .flat_map(|s| s.series.values().iter().copied())
        .fold(1.0, f64::max)
}

fn config() -> Config {
    Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    }
}

// --- panel ---

pub fn increments_then_cumulate_is_identity() {
    proptest!(config(), |(inc in prop::collection::vec(0.0f64..100.0, 1..30), start in 0.0f64..50.0)| {
        let mut cum = cumsum(&inc);
        cum.iter_mut().for_each(|v| *v += start);
        let s = site("S", cum.clone(), 2.0);
        let d = annual_increments(&s);
        let back = cumulate(FIRST, cum[0], &d.values().copied().collect::<Vec<_>>());
        for (a, b) in back.values().iter().zip(&cum) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    });
}

pub fn csv_round_trip() {
    proptest!(config(), |(seed in any::<u64>(), n in 1usize..6, noise in 0.0f64..0.8)| {
        let spec = ScenarioSpec {
            seed,
            n_donors: n,
            donor_process: IncrementProcess { noise, ..IncrementProcess::default() },
            ..ScenarioSpec::default()
        };
        let set = generate(&spec).unwrap().panels;
        let dir = tempfile::tempdir().unwrap();
        write_panels(&set, dir.path()).unwrap();
        let (s, c, m) = panel_paths(dir.path());
        let back = load_panels(&s, Some(&c), &m).unwrap();
        prop_assert_eq!(back, set);
    });
}

// --- donorpool ---

pub fn filter_is_nested_and_deterministic() {
    proptest!(config(), |(c in case_strategy(), t1 in 0.001f64..1.0, u in 0.0f64..1.0)| {
        let dt = u * (1.0 - t1);
        let pool = refs(&c.donors);
        let start = FIRST + c.years as i32 - 2;
        prop_assume!(c.project.buffer_series.get(start - 1).unwrap() > 0.0);
        let sel = |t: f64| {
            let cfg = FilterConfig { tolerance_ladder: vec![t], min_donors: 1, ..FilterConfig::default() };
            filter_donors(&c.project, start, &pool, &cfg).unwrap()
        };
        let (a, b) = (sel(t1), sel(t1 + dt));
        if !a.insufficient_donors {
            prop_assert!(!b.insufficient_donors);
            prop_assert!(a.selected.iter().all(|d| b.selected.contains(d)));
        }
        prop_assert_eq!(sel(t1), a);
    });
}

// --- scsolver ---

pub fn simplex_feasible() {
    proptest!(config(), |(c in case_strategy())| {
        let f = scm(&c);
        let tol = f.config.solver_tol;
        let sum: f64 = f.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= tol, "sum {}", sum);
        prop_assert!(f.weights.iter().all(|&w| w >= -tol));
    });
}

pub fn simplex_projection_feasible() {
    proptest!(config(), |(v in prop::collection::vec(-100.0f64..100.0, 1..12))| {
        let p = project_simplex(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    });
}

pub fn raw_solver_feasible() {
    proptest!(config(), |(rows in 2usize..10, cols in 1usize..8, seed in prop::collection::vec(-10.0f64..10.0, 100))| {
        let x = DMatrix::from_fn(rows, cols, |i, j| seed[(i * 7 + j * 3) % 100]);
        let y = DVector::from_fn(rows, |i, _| seed[(i * 11 + 5) % 100]);
        let s = simplex_least_squares(&x, &y, 1e-9, 10_000);
        prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(s.weights.iter().all(|&w| w >= -1e-9));
    });
}

pub fn permutation_equivariance() {
    proptest!(config(), |(c in case_strategy(), rot in 1usize..5)| {
        let base = scm(&c);
        let mut donors = c.donors.clone();
        let k = rot % donors.len();
        donors.rotate_left(k);
        let perm = fit(&c.project, &refs(&donors), &FitConfig::new(Method::Scm, train_end(&c))).unwrap();
        let scale = series_scale(&c);
        prop_assert!(sup_diff(&base.fitted_series, &perm.fitted_series) <= 1e-6 * scale);
        for (id, w) in perm.donor_ids.iter().zip(&perm.weights) {
            prop_assert!((base.weight_of(id).unwrap() - w).abs() <= 1e-5, "{} {} {:?}", id, w, base.weights);
        }
    });
}

pub fn scale_equivariance() {
    proptest!(config(), |(c in case_strategy(), k in -3i32..4, m in 1.0f64..2.0)| {
        let factor = m * 10f64.powi(k);
        let base = scm(&c);
        let sc = Case {
            project: scaled(&c.project, factor, true),
            donors: c.donors.iter().map(|d| scaled(d, factor, true)).collect(),
            years: c.years,
        };
        let f = scm(&sc);
        for (a, b) in base.weights.iter().zip(&f.weights) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
        let expect = base.fitted_series.map(|v| v * factor);
        prop_assert!(sup_diff(&expect, &f.fitted_series) <= 1e-6 * series_scale(&sc));
    });
}

/// Training-window L2 distance to SCM shrinks for every penalty; the sup norm
/// over all years only once the penalty dominates the data scale.
pub fn ascm_approaches_scm_as_lambda_grows() {
    proptest!(config(), |(c in case_strategy())| {
        let s = scm(&c);
        let scale = series_scale(&c);
        let n_train = (train_end(&c) - FIRST + 1) as usize;
        let (mut prev_l2, mut prev_sup) = (f64::INFINITY, f64::INFINITY);
        for k in -2..=7 {
            let mut cfg = FitConfig::new(Method::Ascm, train_end(&c));
            cfg.ridge_lambda = RidgeLambda::Fixed(scale * scale * 10f64.powi(k));
            let a = fit(&c.project, &refs(&c.donors), &cfg).unwrap();
            let l2 = a.fitted_series.values()[..n_train]
                .iter()
                .zip(s.fitted_series.values())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            prop_assert!(l2 <= prev_l2 + 1e-7 * scale, "k={} l2={} prev={}", k, l2, prev_l2);
            prev_l2 = l2;
            let d = sup_diff(&a.fitted_series, &s.fitted_series);
            if k >= 2 {
                prop_assert!(d <= prev_sup + 1e-7 * scale, "k={} d={} prev={}", k, d, prev_sup);
            }
            prev_sup = d;
        }
    });
}

// --- validation ---

pub fn validation_scale_invariance() {
    proptest!(config(), |(c in case_strategy(), k in -3i32..4, m in 1.0f64..2.0)| {
        let factor = m * 10f64.powi(k);
        let f = scm(&c);
        let w = window(&c);
        let t = Thresholds::default();
        let p2 = scaled(&c.project, factor, true);
        let mut f2 = f.clone();
        f2.fitted_series = f.fitted_series.map(|v| v * factor);

        let (a3, b3) = (max_gap_test(&f, &c.project, &w, &t).unwrap(), max_gap_test(&f2, &p2, &w, &t).unwrap());
        prop_assert_eq!(a3.pass, b3.pass);
        prop_assert!(a3.ratio.is_nan() && b3.ratio.is_nan() || (a3.ratio - b3.ratio).abs() <= 1e-9 * a3.ratio.abs().max(1.0));
        let (a4, b4) = (rmspe_ratio_test(&f, &c.project, &w, &t).unwrap(), rmspe_ratio_test(&f2, &p2, &w, &t).unwrap());
        prop_assert_eq!(a4.pass, b4.pass);
        if a4.ratio.is_finite() {
            prop_assert!((a4.ratio - b4.ratio).abs() <= 1e-6 * a4.ratio.max(1.0));
        }
        let (aw, bw) = (final_gap_test(&f, &c.project, &w, &t).unwrap(), final_gap_test(&f2, &p2, &w, &t).unwrap());
        prop_assert_eq!(aw.pass, bw.pass);
    });
}

pub fn max_gap_dominates_final_year() {
    proptest!(config(), |(c in case_strategy())| {
        let f = scm(&c);
        let w = window(&c);
        let t = Thresholds::default();
        let e3 = max_gap_test(&f, &c.project, &w, &t).unwrap();
        let fg = final_gap_test(&f, &c.project, &w, &t).unwrap();
        let final_defor = c.project.series.get(w.validation_end_year).unwrap();
        if final_defor > 0.0 {
            prop_assert!(e3.ratio >= fg.diff_ha.abs() / final_defor);
        } else {
            prop_assert!(!e3.pass && e3.zero_final_deforestation);
        }
    });
}

pub fn worse_validation_fit_never_passes_rmspe_ratio() {
    proptest!(config(), |(c in case_strategy(), offset in 0.0f64..100.0)| {
        let f = scm(&c);
        let w = window(&c);
        let t = Thresholds::default();
        let before = rmspe_ratio_test(&f, &c.project, &w, &t).unwrap();
        let mut worse = f.clone();
        let mut vals = f.fitted_series.values().to_vec();
        for y in w.validation_years() {
            let i = (y - FIRST) as usize;
            let gap = c.project.series.get(y).unwrap() - vals[i];
            vals[i] -= offset * if gap >= 0.0 { 1.0 } else { -1.0 };
        }
        worse.fitted_series = YearSeries::new(FIRST, vals);
        let after = rmspe_ratio_test(&worse, &c.project, &w, &t).unwrap();
        prop_assert!(after.rmspe_valid >= before.rmspe_valid - 1e-9);
        if !before.pass {
            prop_assert!(!after.pass);
        }
    });
}

// --- inference ---

pub fn jackknife_bands_are_ordered() {
    proptest!(config(), |(c in case_strategy(), alpha in 0.01f64..0.49)| {
        prop_assume!(c.donors.len() >= 3);
        let cfg = FitConfig::new(Method::Scm, FIRST + c.years as i32 - 4);
        let post = (FIRST + c.years as i32 - 3)..=(FIRST + c.years as i32 - 1);
        let b = jackknife_plus_bands(&c.project, &refs(&c.donors), &cfg, post.clone(), alpha).unwrap();
        for y in post {
            prop_assert!(b.lower[&y] <= b.upper[&y]);
        }
    });
}

pub fn reversal_count_symmetric() {
    proptest!(config(), |(pairs in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..20))| {
        let rows = |swap: bool| -> Vec<SensitivityRow> {
            pairs.iter().enumerate().map(|(i, &(a, b))| {
                let (wo, w) = if swap { (b, a) } else { (a, b) };
                SensitivityRow::from_atts(&i.to_string(), "X", Method::Scm, wo, w)
            }).collect()
        };
        let t = SensitivityTable::from_rows(rows(false));
        let s = SensitivityTable::from_rows(rows(true));
        prop_assert_eq!(t.sign_reversals, s.sign_reversals);
    });
}

pub fn diff_pct_scale_free() {
    proptest!(config(), |(with in -1e4f64..1e4, without in -1e4f64..1e4, c in 0.01f64..100.0)| {
        prop_assume!(with.abs() > 1e-6);
        let a = diff_pct(with, without).unwrap();
        let b = diff_pct(with * c, without * c).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    });
}

pub fn att_linear_in_gaps() {
    proptest!(config(), |(c in case_strategy(), factor in 0.01f64..100.0)| {
        let f = scm(&c);
        let years = (FIRST + c.years as i32 - 3)..=(FIRST + c.years as i32 - 1);
        let att = |p: &SitePanel, s: &YearSeries| -> f64 {
            let g: Vec<f64> = years.clone().map(|y| p.series.get(y).unwrap() - s.get(y).unwrap()).collect();
            g.iter().sum::<f64>() / g.len() as f64
        };
        let base = att(&c.project, &f.fitted_series);
        let p2 = scaled(&c.project, factor, false);
        let s2 = f.fitted_series.map(|v| v * factor);
        prop_assert!((att(&p2, &s2) - factor * base).abs() <= 1e-9 * series_scale(&c) * factor);
    });
}

// --- biascorrect ---

pub fn bias_round_trip() {
    proptest!(config(), |(rf in 0.0f64..0.5, gap in 0.01f64..0.5, diff in -1e6f64..1e6)| {
        let m = BiasModel::new((rf + gap).min(1.0), rf).unwrap();
        let back = m.correct_difference(diff * m.correction_factor());
        prop_assert!((back - diff).abs() <= 4.0 * f64::EPSILON * diff.abs().max(1.0));
    });
}

pub fn sensor_difference_consistency() {
    proptest!(config(), |(rf in 0.0f64..0.5, gap in 0.01f64..0.5, area in 1.0f64..1e6, u1 in 0.0f64..1.0, u2 in 0.0f64..1.0)| {
        let m = BiasModel::new((rf + gap).min(1.0), rf).unwrap();
        let (d1, d2) = (u1 * area, u2 * area);
        let lhs = m.predicted_deforestation(area, d1).unwrap() - m.predicted_deforestation(area, d2).unwrap();
        let rhs = (d1 - d2) * m.correction_factor();
        prop_assert!((lhs - rhs).abs() <= 8.0 * f64::EPSILON * area);
        if d1 >= d2 {
            prop_assert!(lhs >= 0.0);
        }
    });
}

// --- credits ---

pub fn credits_linear_and_consistent() {
    proptest!(config(), |(avoided in 0.0f64..5e3, raw in 100.0f64..1e5, frac in 0.1f64..1.0, expected in 1e4f64..1e7, issued in 1e4f64..1e7)| {
        let input = CreditInput {
            project_id: "p".into(),
            country: "X".into(),
            avoided_ha: avoided,
            baseline_raw_ha: raw,
            baseline_correct_ha: raw * frac,
            expected_credits: expected,
            issued_credits: issued,
            inflation_excluded: false,
        };
        let a = CreditLedgerRow::compute(&input).unwrap();
        let b = CreditLedgerRow::compute(&CreditInput { avoided_ha: 2.0 * avoided, ..input }).unwrap();
        prop_assert!((b.offsets_raw - 2.0 * a.offsets_raw).abs() <= 1e-9 * a.offsets_raw.max(1.0));
        prop_assert!((b.offsets_correct - 2.0 * a.offsets_correct).abs() <= 1e-9 * a.offsets_correct.max(1.0));
        let (pa, pb) = (a.pct_real_raw.unwrap(), b.pct_real_raw.unwrap());
        if !pb.over_100 {
            prop_assert!((pb.fraction - 2.0 * pa.fraction).abs() <= 1e-12);
        }
        if avoided > 0.0 {
            prop_assert!(a.offsets_correct >= a.offsets_raw);
        }
    });
}

// --- simgen ---

pub fn simgen_reproducible() {
    proptest!(config(), |(seed in any::<u64>(), stochastic in any::<bool>())| {
        let spec = ScenarioSpec {
            seed,
            sensor: Some(BiasModel::new(0.83, 0.002).unwrap()),
            sensor_mode: if stochastic { SensorMode::Stochastic } else { SensorMode::Deterministic },
            ..ScenarioSpec::default()
        };
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    });
}

pub fn sensor_round_trip() {
    proptest!(config(), |(seed in any::<u64>(), delta in 0.0f64..20.0, rf in 0.0f64..0.3, gap in 0.05f64..0.7)| {
        let m = BiasModel::new((rf + gap).min(1.0), rf).unwrap();
        let spec = ScenarioSpec {
            seed,
            treatment_effect_ha_per_yr: -delta,
            sensor: Some(m),
            ..ScenarioSpec::default()
        };
        let Ok(sc) = generate(&spec) else { return Ok(()) };
        prop_assume!(!sc.truth.clamp_triggered);
        let p = &sc.panels.projects[0].panel;
        for (&y, &true_gap) in &sc.truth.true_gap {
            let observed_sc: f64 = sc.panels.donors.iter().zip(&sc.truth.weights_true)
                .map(|(d, w)| w * d.series.get(y).unwrap()).sum();
            let observed_gap = p.series.get(y).unwrap() - observed_sc;
            let corrected = m.correct_difference(observed_gap);
            prop_assert!((corrected - true_gap).abs() <= 0.01 * true_gap.abs() + 1e-6 * spec.area_ha);
        }
    });
}

/// Every invariant, by name.
#[allow(dead_code)]
pub const ALL: &[(&str, fn())] = &[
    ("increments_then_cumulate_is_identity", increments_then_cumulate_is_identity),
    ("csv_round_trip", csv_round_trip),
    ("filter_is_nested_and_deterministic", filter_is_nested_and_deterministic),
    ("simplex_feasible", simplex_feasible),
    ("simplex_projection_feasible", simplex_projection_feasible),
    ("raw_solver_feasible", raw_solver_feasible),
    ("permutation_equivariance", permutation_equivariance),
    ("scale_equivariance", scale_equivariance),
    ("ascm_approaches_scm_as_lambda_grows", ascm_approaches_scm_as_lambda_grows),
    ("validation_scale_invariance", validation_scale_invariance),
    ("max_gap_dominates_final_year", max_gap_dominates_final_year),
    ("worse_validation_fit_never_passes_rmspe_ratio", worse_validation_fit_never_passes_rmspe_ratio),
    ("jackknife_bands_are_ordered", jackknife_bands_are_ordered),
    ("reversal_count_symmetric", reversal_count_symmetric),
    ("diff_pct_scale_free", diff_pct_scale_free),
    ("att_linear_in_gaps", att_linear_in_gaps),
    ("bias_round_trip", bias_round_trip),
    ("sensor_difference_consistency", sensor_difference_consistency),
    ("credits_linear_and_consistent", credits_linear_and_consistent),
    ("simgen_reproducible", simgen_reproducible),
    ("sensor_round_trip", sensor_round_trip),
];
