use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reddcheck::cli::{EXIT_CONFIG, EXIT_INGEST};
use reddcheck::simgen::GroundTruth;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reddcheck"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn reddcheck")
}

fn small_report(out: &Path, extra: &[&str]) -> Output {
    let sites = fixture("small/sites.csv");
    let cov = fixture("small/covariates.csv");
    let meta = fixture("small/meta.csv");
    let mut args = vec![
        "report",
        "--sites",
        sites.to_str().unwrap(),
        "--covariates",
        cov.to_str().unwrap(),
        "--meta",
        meta.to_str().unwrap(),
        "--min-donors",
        "2",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn report_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = small_report(&out, &["--bias-preset", "mcnicol2018"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "run_config.json",
        "run_summary.json",
        "credit_offsets.csv",
        "credit_real_share.csv",
        "validation_final_gap.csv",
        "validation_rmspe_ratio.csv",
        "validation_max_gap.csv",
        "filter_sensitivity.csv",
        "gap_series.csv",
        "weights.csv",
        "att.csv",
        "bias_corrected.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("run_summary.json"))).unwrap();
    assert_eq!(summary["validation_scm"]["both_pass"], 1);
    assert_eq!(summary["validation_ascm"]["both_pass"], 1);
    // -8 ha/yr over four post years.
    let att = read(&out.join("att.csv"));
    let scm_line = att.lines().find(|l| l.contains(",scm,")).unwrap();
    let value: f64 = scm_line.split(',').nth(3).unwrap().parse().unwrap();
    assert!((value + 20.0).abs() < 1e-6, "{value}");
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_report(&a, &[]).status.success());
    assert!(small_report(&b, &["--workers", "1"]).status.success());
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if Path::new(&name).extension().is_some_and(|e| e == "csv") {
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
    }
}

#[test]
fn filter_toggle_leaves_external_ledger_alone() {
    let dir = tempfile::tempdir().unwrap();
    let avoided = dir.path().join("avoided.csv");
    std::fs::write(&avoided, "project_id,avoided_ha\nP1,25\n").unwrap();
    let (on, off) = (dir.path().join("on"), dir.path().join("off"));
    let av = avoided.to_str().unwrap();
    assert!(small_report(&on, &["--avoided", av]).status.success());
    assert!(small_report(&off, &["--avoided", av, "--filter", "off"]).status.success());
    for f in ["credit_offsets.csv", "credit_real_share.csv"] {
        assert_eq!(read(&on.join(f)), read(&off.join(f)), "{f}");
    }
    assert_ne!(read(&on.join("weights.csv")), read(&off.join("weights.csv")));
}

#[test]
fn missing_meta_is_an_ingest_failure_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let sites = fixture("small/sites.csv");
    let o = run(&[
        "report",
        "--sites",
        sites.to_str().unwrap(),
        "--meta",
        "/nonexistent/meta.csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_INGEST));
    assert!(!out.exists());
}

#[test]
fn malformed_inputs_are_ingest_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let good_sites = fixture("small/sites.csv");
    let good_meta = fixture("small/meta.csv");
    for (sites, meta) in [
        (fixture("bad/non_monotone_sites.csv"), good_meta.clone()),
        (good_sites.clone(), fixture("bad/meta_missing_column.csv")),
        (good_sites.clone(), fixture("bad/start_outside_series.csv")),
    ] {
        let o = run(&[
            "validate",
            "--sites",
            sites.to_str().unwrap(),
            "--meta",
            meta.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(EXIT_INGEST), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
    }
}

#[test]
fn bad_rates_are_config_errors() {
    let o = run(&["bias", "--rd", "0.1", "--rf", "0.2"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let o = run(&["bias", "--bias-preset", "hansen-wet-tropics"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["correction_factor"], 0.828);
}

#[test]
fn credits_only_run_needs_no_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("credits");
    let meta = fixture("credits_meta.csv");
    let avoided = fixture("credits_avoided.csv");
    let o = run(&[
        "credits",
        "--meta",
        meta.to_str().unwrap(),
        "--avoided",
        avoided.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s2 = read(&out.join("credit_real_share.csv"));
    assert_eq!(s2.lines().count(), 19);
    assert!(s2.lines().last().unwrap().contains("6.06%,9.79%"));
}

#[test]
fn simulate_then_report_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"seed": 11, "n_donors": 4, "first_year": 2001, "last_year": 2020, "area_ha": 100000.0,
            "donor_process": {"base_rate": 60.0, "rate_spread": 0.5, "trend": 0.05, "trend_spread": 0.05, "noise": 0.3},
            "treatment_effect_ha_per_yr": -5.0, "effect_start_year": 2013}"#,
    )
    .unwrap();
    let o = run(&["simulate", "--scenario", spec.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth: GroundTruth = serde_json::from_str(&read(&sim.join("ground_truth.json"))).unwrap();

    let out = dir.path().join("rep");
    let o = run(&[
        "report",
        "--sites",
        sim.join("sites.csv").to_str().unwrap(),
        "--meta",
        sim.join("meta.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("run_summary.json"))).unwrap();
    for m in ["validation_scm", "validation_ascm"] {
        assert_eq!(summary[m]["both_pass"], 1, "{summary}");
        assert_eq!(summary[m]["final_gap_pass"], 1);
    }
    let att = read(&out.join("att.csv"));
    for line in att.lines().skip(1) {
        let v: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((v - truth.att_true).abs() < 1e-4 * truth.att_true.abs(), "{v} vs {}", truth.att_true);
    }
}

#[test]
fn simulate_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(run(&["simulate", "--seed", "42", "--out", d.to_str().unwrap()]).status.success());
    }
    assert_eq!(read(&a.join("sites.csv")), read(&b.join("sites.csv")));
}

#[test]
fn split_overrides_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let ov = dir.path().join("splits.csv");
    std::fs::write(&ov, "project_id,train_end_year,validation_end_year\nP1,2004,2007\n").unwrap();
    let out = dir.path().join("v");
    let o = run(&[
        "validate",
        "--sites",
        fixture("small/sites.csv").to_str().unwrap(),
        "--meta",
        fixture("small/meta.csv").to_str().unwrap(),
        "--split-overrides",
        ov.to_str().unwrap(),
        "--method",
        "scm",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s3 = read(&out.join("validation_final_gap.csv"));
    assert!(s3.lines().nth(1).unwrap().starts_with("Xland,P1,2007,"));
    let s5 = read(&out.join("validation_max_gap.csv"));
    assert!(s5.contains("2005-2007"));
}
