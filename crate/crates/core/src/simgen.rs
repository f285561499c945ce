//! Synthetic deforestation panels with known ground truth.
//!
//! Donor increments follow a nonnegative process with a per-donor rate
//! multiplier and linear trend; yearly draws are gamma distributed around the
//! rate (deterministic when `noise` is zero). The project's counterfactual is
//! an exact convex combination of the donors, optionally scaled by
//! `project_scale` to push it outside the donor hull. A constant treatment
//! effect is then added to the project's annual increments from
//! `effect_start_year`, clamped at zero.
//!
//! With a sensor model, every site's cumulative loss `D(t)` is observed as
//! `r_f (A - D(t)) + r_d D(t)` (all sites share the area `A`), so observed
//! gaps between sites are true gaps shrunk by `r_d - r_f`. The stochastic
//! mode replaces that expectation with binomial draws that have the same mean.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biascorrect::BiasModel;
use crate::panel::{PanelError, PanelSet, Project, ProjectMeta, SitePanel, YearSeries};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("treatment effect clamped by {clamped_ha:.3} ha of {injected_ha:.3} ha injected; ground truth would be distorted")]
    InfeasibleEffect { clamped_ha: f64, injected_ha: f64 },
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementProcess {
    /// Mean annual loss in the first year (ha).
    pub base_rate: f64,
    /// Log-scale spread of per-donor rate multipliers.
    pub rate_spread: f64,
    /// Relative change in rate per year.
    pub trend: f64,
    /// Half-width of the uniform per-donor perturbation of `trend`.
    pub trend_spread: f64,
    /// Coefficient of variation of yearly draws; 0 gives deterministic increments.
    pub noise: f64,
}

impl Default for IncrementProcess {
    fn default() -> Self {
        Self {
            base_rate: 50.0,
            rate_spread: 0.5,
            trend: 0.05,
            trend_spread: 0.05,
            noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorMode {
    #[default]
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_donors: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub area_ha: f64,
    pub donor_process: IncrementProcess,
    /// Drawn from a flat Dirichlet when absent.
    pub true_weights: Option<Vec<f64>>,
    /// Multiplies the project's counterfactual; values above 1 leave the donor hull.
    #[serde(default = "one")]
    pub project_scale: f64,
    /// Added to project increments from `effect_start_year` (usually <= 0).
    pub treatment_effect_ha_per_yr: f64,
    pub effect_start_year: i32,
    /// Defaults to the year before `effect_start_year`.
    pub validation_end_year: Option<i32>,
    /// Buffer-zone loss as a multiple of the site's own loss.
    #[serde(default = "three")]
    pub buffer_factor: f64,
    pub sensor: Option<BiasModel>,
    #[serde(default)]
    pub sensor_mode: SensorMode,
    /// Largest tolerated clamped share of the injected effect.
    #[serde(default = "one_percent")]
    pub max_clamp_fraction: f64,
    #[serde(default = "default_country")]
    pub country: String,
}

fn one() -> f64 {
    1.0
}
fn three() -> f64 {
    3.0
}
fn one_percent() -> f64 {
    0.01
}
fn default_country() -> String {
    "SIM".to_string()
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_donors: 4,
            first_year: 2001,
            last_year: 2020,
            area_ha: 100_000.0,
            donor_process: IncrementProcess::default(),
            true_weights: None,
            project_scale: 1.0,
            treatment_effect_ha_per_yr: 0.0,
            effect_start_year: 2013,
            validation_end_year: None,
            buffer_factor: 3.0,
            sensor: None,
            sensor_mode: SensorMode::Deterministic,
            max_clamp_fraction: 0.01,
            country: default_country(),
        }
    }
}

impl ScenarioSpec {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if self.n_donors == 0 {
            return bad("n_donors must be positive");
        }
        if self.last_year <= self.first_year + 1 {
            return bad("need at least three years");
        }
        if !(self.effect_start_year > self.first_year + 1 && self.effect_start_year <= self.last_year) {
            return bad("effect_start_year must leave two pre-treatment years and one post year");
        }
        if let Some(v) = self.validation_end_year {
            if v < self.first_year || v >= self.effect_start_year {
                return bad("validation_end_year must lie before effect_start_year");
            }
        }
        if !(self.area_ha > 0.0) {
            return bad("area_ha must be positive");
        }
        let p = &self.donor_process;
        if !(p.base_rate >= 0.0 && p.noise >= 0.0 && p.rate_spread >= 0.0 && p.trend_spread >= 0.0) {
            return bad("increment process parameters must be nonnegative");
        }
        if !(self.project_scale > 0.0) {
            return bad("project_scale must be positive");
        }
        if let Some(w) = &self.true_weights {
            if w.len() != self.n_donors {
                return bad("true_weights length differs from n_donors");
            }
            if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("true_weights must be nonnegative and sum to 1");
            }
        }
        Ok(())
    }

    pub fn n_years(&self) -> usize {
        (self.last_year - self.first_year + 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub weights_true: Vec<f64>,
    pub donor_ids: Vec<String>,
    /// Mean true cumulative gap over `effect_start_year..=last_year`.
    pub att_true: f64,
    /// True (unobserved) cumulative gap, project minus counterfactual.
    pub true_gap: BTreeMap<i32, f64>,
    /// True project counterfactual (cumulative, ha).
    pub counterfactual: BTreeMap<i32, f64>,
    pub clamp_triggered: bool,
    pub clamped_ha: f64,
    /// Some cumulative series hit the site area and were capped.
    pub area_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub panels: PanelSet,
    pub truth: GroundTruth,
}

fn cumsum(inc: &[f64]) -> Vec<f64> {
    inc.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Caps a cumulative path at `area`, reporting whether the cap bound.
fn cap(mut cum: Vec<f64>, area: f64) -> (Vec<f64>, bool) {
    let mut capped = false;
    for v in cum.iter_mut() {
        if *v > area {
            *v = area;
            capped = true;
        }
    }
    (cum, capped)
}

fn observe(
    cum: &[f64],
    area: f64,
    sensor: &BiasModel,
    mode: SensorMode,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let r_d = sensor.detection_rate();
    let r_f = sensor.false_alarm_rate();
    match mode {
        SensorMode::Deterministic => cum.iter().map(|&d| r_f * (area - d) + r_d * d).collect(),
        SensorMode::Stochastic => {
            let draw = |rng: &mut ChaCha8Rng, n: f64, p: f64| -> f64 {
                let n = n.max(0.0).round() as u64;
                if n == 0 || p <= 0.0 {
                    0.0
                } else {
                    Binomial::new(n, p.min(1.0)).expect("valid binomial").sample(rng) as f64
                }
            };
            let mut out = Vec::with_capacity(cum.len());
            let mut acc = draw(rng, area - cum[0], r_f) + draw(rng, cum[0], r_d);
            out.push(acc.min(area));
            for w in cum.windows(2) {
                acc += draw(rng, w[1] - w[0], r_d - r_f);
                out.push(acc.min(area));
            }
            out
        }
    }
}

/// Builds a scenario from its spec. Identical specs give identical output.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_years = spec.n_years();
    let p = &spec.donor_process;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut area_capped = false;
    let mut donor_cum: Vec<Vec<f64>> = Vec::with_capacity(spec.n_donors);
    for _ in 0..spec.n_donors {
        let multiplier = (p.rate_spread * std_normal.sample(&mut rng)).exp();
        let trend = p.trend + p.trend_spread * (2.0 * rng.random::<f64>() - 1.0);
        let inc: Vec<f64> = (0..n_years)
            .map(|t| {
                let rate = (p.base_rate * multiplier * (1.0 + trend * t as f64)).max(0.0);
                if p.noise > 0.0 && rate > 0.0 {
                    let shape = 1.0 / (p.noise * p.noise);
                    Gamma::new(shape, rate / shape)
                        .expect("positive gamma parameters")
                        .sample(&mut rng)
                } else {
                    rate
                }
            })
            .collect();
        let (cum, c) = cap(cumsum(&inc), spec.area_ha);
        area_capped |= c;
        donor_cum.push(cum);
    }

    let weights = match &spec.true_weights {
        Some(w) => w.clone(),
        None => {
            let g = Gamma::new(1.0, 1.0).expect("unit gamma");
            let draws: Vec<f64> = (0..spec.n_donors).map(|_| g.sample(&mut rng)).collect();
            let s: f64 = draws.iter().sum();
            draws.iter().map(|d| d / s).collect()
        }
    };

    let counterfactual: Vec<f64> = (0..n_years)
        .map(|t| {
            spec.project_scale
                * weights
                    .iter()
                    .zip(&donor_cum)
                    .map(|(w, d)| w * d[t])
                    .sum::<f64>()
        })
        .collect();
    let (counterfactual, c) = cap(counterfactual, spec.area_ha);
    area_capped |= c;

    // Treatment effect on increments.
    let effect_idx = (spec.effect_start_year - spec.first_year) as usize;
    let mut project_inc: Vec<f64> = counterfactual
        .iter()
        .enumerate()
        .map(|(t, &v)| if t == 0 { v } else { v - counterfactual[t - 1] })
        .collect();
    let mut clamped_ha = 0.0;
    let mut injected_ha = 0.0;
    for inc in project_inc.iter_mut().skip(effect_idx) {
        let target = *inc + spec.treatment_effect_ha_per_yr;
        injected_ha += spec.treatment_effect_ha_per_yr.abs();
        let (lo, hi) = (0.0, spec.area_ha);
        let clamped = target.clamp(lo, hi);
        clamped_ha += (clamped - target).abs();
        *inc = clamped;
    }
    if injected_ha > 0.0 && clamped_ha > spec.max_clamp_fraction * injected_ha {
        return Err(SimError::InfeasibleEffect {
            clamped_ha,
            injected_ha,
        });
    }
    let (project_cum, c) = cap(cumsum(&project_inc), spec.area_ha);
    area_capped |= c;

    let years: Vec<i32> = (spec.first_year..=spec.last_year).collect();
    let true_gap: BTreeMap<i32, f64> = years
        .iter()
        .enumerate()
        .map(|(t, &y)| (y, project_cum[t] - counterfactual[t]))
        .collect();
    let post: Vec<f64> = years[effect_idx..].iter().map(|y| true_gap[y]).collect();
    let att_true = post.iter().sum::<f64>() / post.len() as f64;

    let observe_all = |cum: &[f64], rng: &mut ChaCha8Rng| match &spec.sensor {
        Some(m) => observe(cum, spec.area_ha, m, spec.sensor_mode, rng),
        None => cum.to_vec(),
    };
    let site = |id: String, cum_true: &[f64], rng: &mut ChaCha8Rng| {
        let observed = observe_all(cum_true, rng);
        SitePanel {
            site_id: id,
            country: spec.country.clone(),
            area_ha: spec.area_ha,
            series: YearSeries::new(spec.first_year, observed),
            buffer_series: YearSeries::new(
                spec.first_year,
                cum_true.iter().map(|v| v * spec.buffer_factor).collect(),
            ),
            covariates: BTreeMap::new(),
        }
    };

    let donor_ids: Vec<String> = (0..spec.n_donors).map(|j| format!("SIM-D{:02}", j + 1)).collect();
    let donors: Vec<SitePanel> = donor_ids
        .iter()
        .zip(&donor_cum)
        .map(|(id, cum)| site(id.clone(), cum, &mut rng))
        .collect();
    let project_panel = site("SIM-P".to_string(), &project_cum, &mut rng);
    let meta = ProjectMeta {
        project_id: "SIM-P".to_string(),
        country: spec.country.clone(),
        start_year: spec.effect_start_year,
        validation_end_year: spec.validation_end_year.unwrap_or(spec.effect_start_year - 1),
        expected_credits: 0.0,
        issued_credits: 0.0,
        baseline_deforestation_raw: 0.0,
        baseline_deforestation_correct: 0.0,
    };
    let panels = PanelSet::new(
        vec![Project {
            panel: project_panel,
            meta,
        }],
        donors,
    )?;
    Ok(Scenario {
        panels,
        truth: GroundTruth {
            weights_true: weights,
            donor_ids,
            att_true,
            true_gap,
            counterfactual: years.iter().copied().zip(counterfactual).collect(),
            clamp_triggered: clamped_ha > 0.0,
            clamped_ha,
            area_capped,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(n: usize) -> ScenarioSpec {
        ScenarioSpec {
            n_donors: n,
            donor_process: IncrementProcess {
                noise: 0.0,
                ..IncrementProcess::default()
            },
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn same_seed_same_panels() {
        let s = ScenarioSpec::default();
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = ScenarioSpec { seed: 1, ..s.clone() };
        assert_ne!(generate(&s).unwrap().panels, generate(&other).unwrap().panels);
    }

    #[test]
    fn arithmetic_series_att() {
        let delta = 2.0;
        let spec = ScenarioSpec {
            treatment_effect_ha_per_yr: -delta,
            ..quiet(3)
        };
        let sc = generate(&spec).unwrap();
        let k = (spec.last_year - spec.effect_start_year + 1) as f64;
        assert!(!sc.truth.clamp_triggered);
        assert!((sc.truth.att_true - (-delta * (k + 1.0) / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn perfect_sensor_is_transparent() {
        let base = ScenarioSpec::default();
        let with = ScenarioSpec {
            sensor: Some(BiasModel::perfect()),
            ..base.clone()
        };
        let a = generate(&base).unwrap();
        let b = generate(&with).unwrap();
        assert_eq!(a.panels, b.panels);
    }

    #[test]
    fn oversized_effect_is_rejected() {
        let spec = ScenarioSpec {
            treatment_effect_ha_per_yr: -1e6,
            ..ScenarioSpec::default()
        };
        assert!(matches!(generate(&spec), Err(SimError::InfeasibleEffect { .. })));
    }

    #[test]
    fn stochastic_sensor_keeps_invariants() {
        let spec = ScenarioSpec {
            sensor: Some(BiasModel::new(0.19, 0.08).unwrap()),
            sensor_mode: SensorMode::Stochastic,
            ..ScenarioSpec::default()
        };
        let sc = generate(&spec).unwrap();
        for s in sc.panels.donors.iter().chain(sc.panels.projects.iter().map(|p| &p.panel)) {
            s.validate().unwrap();
        }
    }

    #[test]
    fn bad_weights_rejected() {
        let spec = ScenarioSpec {
            true_weights: Some(vec![0.5, 0.6]),
            ..quiet(2)
        };
        assert!(matches!(generate(&spec), Err(SimError::InvalidSpec(_))));
    }
}
