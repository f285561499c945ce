//! Command-line front end and batch pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biascorrect::{BiasError, BiasModel, BiasPreset};
use crate::credits::{
    baseline_inflation_stats, build_ledger, ledger_totals, load_credit_inputs, BaselineInflation, CreditError,
    CreditInput, CreditLedgerRow, LedgerTotals,
};
use crate::donorpool::FilterConfig;
use crate::inference::{project_effect, sensitivity_table, FilterState, ProjectEffect, SensitivityTable};
use crate::panel::{load_panels, read_rows, write_panels, PanelError, PanelSet};
use crate::report::{self, ReportError};
use crate::scsolver::{FitConfig, Method, RidgeLambda};
use crate::simgen::{generate, ScenarioSpec, SimError};
use crate::validation::{validate_all, MethodCounts, Thresholds, ValidationSummary, Window};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INGEST: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_WRITE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ingestion failed: {0}")]
    Ingest(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("writing output failed: {0}")]
    Write(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Ingest(_) => EXIT_INGEST,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Write(_) => EXIT_WRITE,
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Write(e.to_string())
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        CliError::Ingest(e.to_string())
    }
}

impl From<BiasError> for CliError {
    fn from(e: BiasError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "reddcheck", version, about = "Synthetic-control checks for avoided-deforestation credits")]
pub struct Cli {
    /// Worker threads for per-project work (defaults to all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check input panels and write them back out in canonical form.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit synthetic controls on pre-treatment years; writes weights and series.
    Fit(PipelineArgs),
    /// Run the three validation tests on each project's training/validation split.
    Validate(PipelineArgs),
    /// Treatment effects with jackknife+ bands.
    Att(PipelineArgs),
    /// Effects with and without the buffer filter.
    Sensitivity(PipelineArgs),
    /// Sensor-error correction factors, optionally applied to an effects file.
    Bias {
        #[command(flatten)]
        bias: BiasArgs,
        /// Effects file written by `att`.
        #[arg(long)]
        att: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Credit ledgers from metadata and avoided deforestation.
    Credits {
        #[arg(long)]
        meta: PathBuf,
        /// CSV with project_id, avoided_ha.
        #[arg(long)]
        avoided: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic panel with known ground truth.
    Simulate {
        /// Scenario JSON; defaults are used for missing fields.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: every table, plot series and a run summary.
    Report {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        bias: BiasArgs,
        /// Use these avoided-deforestation figures for the credit ledgers
        /// instead of the fitted effects.
        #[arg(long)]
        avoided: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub meta: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Scm,
    Ascm,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Scm => vec![Method::Scm],
            MethodChoice::Ascm => vec![Method::Ascm],
            MethodChoice::Both => vec![Method::Scm, Method::Ascm],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub method: MethodChoice,
    #[arg(long, value_enum, default_value = "on")]
    pub filter: OnOff,
    #[arg(long, value_delimiter = ',', default_value = "0.10,0.20,0.30")]
    pub ladder: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    pub min_donors: usize,
    /// CSV with project_id, train_end_year, validation_end_year.
    #[arg(long)]
    pub split_overrides: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub covariate_weight: f64,
    /// Fixed ridge penalty for ASCM; chosen by cross-validation when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Miscoverage level of the jackknife+ bands.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BiasArgs {
    #[arg(long, conflicts_with_all = ["rd", "rf"])]
    pub bias_preset: Option<BiasPreset>,
    /// Detection rate.
    #[arg(long, requires = "rf")]
    pub rd: Option<f64>,
    /// False-alarm rate.
    #[arg(long, requires = "rd")]
    pub rf: Option<f64>,
}

impl BiasArgs {
    pub fn model(&self) -> Result<Option<BiasModel>, BiasError> {
        match (self.bias_preset, self.rd, self.rf) {
            (Some(p), _, _) => Ok(Some(p.model())),
            (None, Some(rd), Some(rf)) => BiasModel::new(rd, rf).map(Some),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOverride {
    pub project_id: String,
    pub train_end_year: i32,
    pub validation_end_year: i32,
}

/// Fully resolved settings for one run; written to `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sites: PathBuf,
    pub covariates: Option<PathBuf>,
    pub meta: PathBuf,
    pub methods: Vec<Method>,
    pub filter: FilterConfig,
    /// Method and training end are set per project.
    pub fit: FitConfig,
    pub thresholds: Thresholds,
    pub alpha: f64,
    pub bias: Option<BiasModel>,
    pub avoided: Option<PathBuf>,
    pub overrides: Vec<WindowOverride>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_args(a: &PipelineArgs) -> Result<Self, CliError> {
        let filter = FilterConfig {
            tolerance_ladder: a.ladder.clone(),
            min_donors: a.min_donors,
            enabled: a.filter == OnOff::On,
            ..FilterConfig::default()
        };
        filter.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(a.alpha > 0.0 && a.alpha < 0.5) {
            return Err(CliError::Config(format!("alpha must lie in (0, 0.5), got {}", a.alpha)));
        }
        let mut fit = FitConfig::new(Method::Scm, 0);
        fit.covariate_weight = a.covariate_weight;
        fit.ridge_lambda = match a.lambda {
            Some(l) => RidgeLambda::Fixed(l),
            None => RidgeLambda::Auto,
        };
        let overrides = match &a.split_overrides {
            Some(p) => read_rows(p, &["project_id", "train_end_year", "validation_end_year"])?,
            None => Vec::new(),
        };
        Ok(Self {
            sites: a.input.sites.clone(),
            covariates: a.input.covariates.clone(),
            meta: a.input.meta.clone(),
            methods: a.method.methods(),
            filter,
            fit,
            thresholds: Thresholds::default(),
            alpha: a.alpha,
            bias: None,
            avoided: None,
            overrides,
            out: a.out.clone(),
        })
    }

    fn windows(&self) -> Vec<(String, Window)> {
        self.overrides
            .iter()
            .map(|o| {
                (
                    o.project_id.clone(),
                    Window {
                        train_end_year: o.train_end_year,
                        validation_end_year: o.validation_end_year,
                    },
                )
            })
            .collect()
    }

    fn filter_state(&self) -> FilterState {
        if self.filter.enabled {
            FilterState::With
        } else {
            FilterState::Without
        }
    }

    pub fn ingest(&self) -> Result<PanelSet, CliError> {
        Ok(load_panels(&self.sites, self.covariates.as_deref(), &self.meta)?)
    }
}

/// Outcome of fitting one project under one method.
#[derive(Debug, Clone)]
pub struct EffectOutcome {
    pub project_id: String,
    pub method: Method,
    pub result: Result<ProjectEffect, String>,
}

pub fn compute_effects(set: &PanelSet, cfg: &RunConfig, alpha: Option<f64>) -> Vec<EffectOutcome> {
    let jobs: Vec<_> = set
        .projects
        .iter()
        .flat_map(|p| cfg.methods.iter().map(move |&m| (p, m)))
        .collect();
    jobs.par_iter()
        .map(|&(p, m)| EffectOutcome {
            project_id: p.id().to_string(),
            method: m,
            result: project_effect(set, p, &cfg.fit, m, &cfg.filter, cfg.filter_state(), alpha),
        })
        .collect()
}

/// Final-year shortfall of the project below its synthetic control.
pub fn avoided_ha(effect: &ProjectEffect) -> f64 {
    effect
        .att
        .gap_series
        .values()
        .next_back()
        .map_or(0.0, |g| (-g).max(0.0))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Write(format!("{}: {e}", dir.display())))
}

fn all_failed(outcomes: &[EffectOutcome]) -> Option<String> {
    if outcomes.is_empty() || outcomes.iter().any(|o| o.result.is_ok()) {
        return None;
    }
    outcomes.iter().find_map(|o| o.result.as_ref().err().cloned())
}

fn write_effects(dir: &Path, set: &PanelSet, outcomes: &[EffectOutcome], with_att: bool) -> Result<(), CliError> {
    let ok: Vec<&ProjectEffect> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let fits: Vec<_> = ok.iter().map(|e| &e.fit).collect();
    report::write_weights(&dir.join("weights.csv"), &fits)?;
    let series: Vec<_> = ok
        .iter()
        .filter_map(|e| {
            set.project(&e.att.project_id)
                .map(|p| (&e.fit, &e.att, &p.panel))
        })
        .collect();
    report::write_gap_series(&dir.join("gap_series.csv"), &series)?;
    if with_att {
        let atts: Vec<_> = ok.iter().map(|e| (&e.att, avoided_ha(e))).collect();
        report::write_att(&dir.join("att.csv"), &atts)?;
    }
    let failures: BTreeMap<String, String> = outcomes
        .iter()
        .filter_map(|o| {
            o.result
                .as_ref()
                .err()
                .map(|e| (format!("{}/{}", o.project_id, o.method), e.clone()))
        })
        .collect();
    report::write_json(&dir.join("fit_errors.json"), &failures)?;
    Ok(())
}

fn write_validation(dir: &Path, summary: &ValidationSummary) -> Result<(), CliError> {
    report::write_final_gap_table(&dir.join("validation_final_gap.csv"), &summary.reports)?;
    report::write_rmspe_ratio_table(&dir.join("validation_rmspe_ratio.csv"), &summary.reports)?;
    report::write_max_gap_table(&dir.join("validation_max_gap.csv"), &summary.reports)?;
    report::write_json(&dir.join("validation.json"), summary)?;
    Ok(())
}

fn run_sensitivity(set: &PanelSet, cfg: &RunConfig) -> SensitivityTable {
    let rows = cfg
        .methods
        .iter()
        .flat_map(|&m| sensitivity_table(set, &cfg.fit, m, &cfg.filter).rows)
        .collect();
    SensitivityTable::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditSummary {
    pub source: String,
    pub totals: LedgerTotals,
    pub baseline_inflation: Option<BaselineInflation>,
}

/// Ledger rows and totals; write them with [`write_credit_tables`].
fn credit_tables(inputs: &[CreditInput]) -> Result<(Vec<CreditLedgerRow>, LedgerTotals), CreditError> {
    let rows = build_ledger(inputs)?;
    let totals = ledger_totals(&rows)?;
    Ok((rows, totals))
}

fn write_credit_tables(
    dir: &Path,
    rows: &[CreditLedgerRow],
    totals: LedgerTotals,
    source: &str,
) -> Result<CreditSummary, CliError> {
    report::write_offsets_table(&dir.join("credit_offsets.csv"), rows, &totals)?;
    report::write_real_share_table(&dir.join("credit_real_share.csv"), rows, &totals)?;
    Ok(CreditSummary {
        source: source.to_string(),
        totals,
        baseline_inflation: baseline_inflation_stats(rows).ok(),
    })
}

/// Credit inputs derived from fitted effects; SCM preferred when both methods ran.
fn derived_credit_inputs(set: &PanelSet, outcomes: &[EffectOutcome]) -> Vec<CreditInput> {
    let preferred = if outcomes.iter().any(|o| o.method == Method::Scm) {
        Method::Scm
    } else {
        Method::Ascm
    };
    set.projects
        .iter()
        .filter_map(|p| {
            let effect = outcomes
                .iter()
                .find(|o| o.project_id == p.id() && o.method == preferred)?
                .result
                .as_ref()
                .ok()?;
            Some(CreditInput {
                project_id: p.id().to_string(),
                country: p.panel.country.clone(),
                avoided_ha: avoided_ha(effect),
                baseline_raw_ha: p.meta.baseline_deforestation_raw,
                baseline_correct_ha: p.meta.baseline_deforestation_correct,
                expected_credits: p.meta.expected_credits,
                issued_credits: p.meta.issued_credits,
                inflation_excluded: false,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub project_id: String,
    pub method: String,
    pub filter: String,
    pub att_observed_ha: f64,
    pub att_corrected_ha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub r_d: f64,
    pub r_f: f64,
    pub correction_factor: f64,
    pub understatement: f64,
}

impl From<&BiasModel> for BiasSummary {
    fn from(m: &BiasModel) -> Self {
        Self {
            r_d: m.detection_rate(),
            r_f: m.false_alarm_rate(),
            correction_factor: m.correction_factor(),
            understatement: m.understatement(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub projects: usize,
    pub donors: usize,
    pub validation_scm: Option<MethodCounts>,
    pub validation_ascm: Option<MethodCounts>,
    pub both_pass_overlap: Option<usize>,
    pub effects_ok: usize,
    pub effects_failed: usize,
    pub sign_reversals: usize,
    pub mean_abs_diff_pct: Option<f64>,
    pub median_abs_diff_pct: Option<f64>,
    pub credits: Option<CreditSummary>,
    /// Why the credit ledgers were not produced, when they were not.
    pub credits_skipped: Option<String>,
    pub bias: Option<BiasSummary>,
}

/// Runs every stage and writes all outputs into `cfg.out`. Nothing is written
/// when ingestion fails.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let set = cfg.ingest()?;
    let credit_file_inputs = match &cfg.avoided {
        Some(a) => Some(load_credit_inputs(&cfg.meta, a).map_err(|e| CliError::Ingest(e.to_string()))?),
        None => None,
    };

    let validation = validate_all(&set, &cfg.fit, &cfg.filter, &cfg.methods, &cfg.windows(), &cfg.thresholds);
    let outcomes = compute_effects(&set, cfg, Some(cfg.alpha));
    let sensitivity = run_sensitivity(&set, cfg);
    if let Some(e) = all_failed(&outcomes) {
        return Err(CliError::Solver(e));
    }

    prepare_out(&cfg.out)?;
    report::write_json(&cfg.out.join("run_config.json"), cfg)?;
    write_validation(&cfg.out, &validation)?;
    write_effects(&cfg.out, &set, &outcomes, true)?;
    report::write_sensitivity_table(&cfg.out.join("filter_sensitivity.csv"), &sensitivity)?;

    let (inputs, source) = match credit_file_inputs {
        Some(i) => (i, "avoided file"),
        None => (derived_credit_inputs(&set, &outcomes), "fitted effects"),
    };
    let (credits, credits_skipped) = match credit_tables(&inputs) {
        Ok((rows, totals)) => (Some(write_credit_tables(&cfg.out, &rows, totals, source)?), None),
        Err(e) => (None, Some(e.to_string())),
    };

    if let Some(m) = &cfg.bias {
        let rows: Vec<BiasRow> = outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok())
            .map(|e| BiasRow {
                project_id: e.att.project_id.clone(),
                method: e.att.method.to_string(),
                filter: e.att.filter_state.name().to_string(),
                att_observed_ha: e.att.att,
                att_corrected_ha: m.correct_difference(e.att.att),
            })
            .collect();
        write_bias_rows(&cfg.out.join("bias_corrected.csv"), &rows)?;
    }

    let summary = RunSummary {
        projects: set.projects.len(),
        donors: set.donors.len(),
        validation_scm: validation.scm.clone(),
        validation_ascm: validation.ascm.clone(),
        both_pass_overlap: validation.both_pass_overlap,
        effects_ok: outcomes.iter().filter(|o| o.result.is_ok()).count(),
        effects_failed: outcomes.iter().filter(|o| o.result.is_err()).count(),
        sign_reversals: sensitivity.sign_reversals,
        mean_abs_diff_pct: sensitivity.mean_abs_diff_pct,
        median_abs_diff_pct: sensitivity.median_abs_diff_pct,
        credits,
        credits_skipped,
        bias: cfg.bias.as_ref().map(BiasSummary::from),
    };
    report::write_json(&cfg.out.join("run_summary.json"), &summary)?;
    Ok(summary)
}

fn write_bias_rows(path: &Path, rows: &[BiasRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Write(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Write(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Write(e.to_string()))
}

#[derive(Debug, Deserialize)]
struct AttFileRow {
    project_id: String,
    method: String,
    filter: String,
    att_ha: f64,
}

pub fn simulate(scenario: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut spec: ScenarioSpec = match scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Ingest(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Ingest(format!("{}: {e}", p.display())))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let sc = generate(&spec).map_err(|e| match e {
        SimError::Panel(p) => CliError::Ingest(p.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    prepare_out(out)?;
    write_panels(&sc.panels, out).map_err(|e| CliError::Write(e.to_string()))?;
    report::write_json(&out.join("scenario.json"), &spec)?;
    report::write_json(&out.join("ground_truth.json"), &sc.truth)?;
    Ok(())
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        // Ignored if a pool already exists (e.g. when called twice in-process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Ingest { input, out } => {
            let set = load_panels(&input.sites, input.covariates.as_deref(), &input.meta)?;
            prepare_out(&out)?;
            write_panels(&set, &out).map_err(|e| CliError::Write(e.to_string()))
        }
        Command::Fit(a) => {
            let cfg = RunConfig::from_args(&a)?;
            let set = cfg.ingest()?;
            let outcomes = compute_effects(&set, &cfg, None);
            if let Some(e) = all_failed(&outcomes) {
                return Err(CliError::Solver(e));
            }
            prepare_out(&cfg.out)?;
            report::write_json(&cfg.out.join("run_config.json"), &cfg)?;
            write_effects(&cfg.out, &set, &outcomes, false)
        }
        Command::Validate(a) => {
            let cfg = RunConfig::from_args(&a)?;
            let set = cfg.ingest()?;
            let summary = validate_all(&set, &cfg.fit, &cfg.filter, &cfg.methods, &cfg.windows(), &cfg.thresholds);
            prepare_out(&cfg.out)?;
            report::write_json(&cfg.out.join("run_config.json"), &cfg)?;
            write_validation(&cfg.out, &summary)
        }
        Command::Att(a) => {
            let cfg = RunConfig::from_args(&a)?;
            let set = cfg.ingest()?;
            let outcomes = compute_effects(&set, &cfg, Some(cfg.alpha));
            if let Some(e) = all_failed(&outcomes) {
                return Err(CliError::Solver(e));
            }
            prepare_out(&cfg.out)?;
            report::write_json(&cfg.out.join("run_config.json"), &cfg)?;
            write_effects(&cfg.out, &set, &outcomes, true)
        }
        Command::Sensitivity(a) => {
            let cfg = RunConfig::from_args(&a)?;
            let set = cfg.ingest()?;
            let table = run_sensitivity(&set, &cfg);
            prepare_out(&cfg.out)?;
            report::write_json(&cfg.out.join("run_config.json"), &cfg)?;
            report::write_sensitivity_table(&cfg.out.join("filter_sensitivity.csv"), &table)?;
            Ok(())
        }
        Command::Bias { bias, att, out } => {
            let model = bias
                .model()?
                .ok_or_else(|| CliError::Config("give --bias-preset or both --rd and --rf".into()))?;
            let summary = BiasSummary::from(&model);
            let rows = match &att {
                Some(p) => {
                    let rows: Vec<AttFileRow> = read_rows(p, &["project_id", "method", "filter", "att_ha"])?;
                    rows.into_iter()
                        .map(|r| BiasRow {
                            att_corrected_ha: model.correct_difference(r.att_ha),
                            project_id: r.project_id,
                            method: r.method,
                            filter: r.filter,
                            att_observed_ha: r.att_ha,
                        })
                        .collect()
                }
                None => Vec::new(),
            };
            match out {
                Some(dir) => {
                    prepare_out(&dir)?;
                    report::write_json(&dir.join("bias.json"), &summary)?;
                    if att.is_some() {
                        write_bias_rows(&dir.join("bias_corrected.csv"), &rows)?;
                    }
                    Ok(())
                }
                None => {
                    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Write(e.to_string()))?;
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Credits { meta, avoided, out } => {
            let inputs = load_credit_inputs(&meta, &avoided).map_err(|e| CliError::Ingest(e.to_string()))?;
            let (rows, totals) = credit_tables(&inputs).map_err(|e| CliError::Ingest(e.to_string()))?;
            prepare_out(&out)?;
            let summary = write_credit_tables(&out, &rows, totals, "avoided file")?;
            report::write_json(&out.join("credits_summary.json"), &summary)?;
            Ok(())
        }
        Command::Simulate { scenario, seed, out } => simulate(scenario.as_deref(), seed, &out),
        Command::Report {
            pipeline,
            bias,
            avoided,
        } => {
            let mut cfg = RunConfig::from_args(&pipeline)?;
            cfg.bias = bias.model()?;
            cfg.avoided = avoided;
            run_pipeline(&cfg).map(|_| ())
        }
    }
}
