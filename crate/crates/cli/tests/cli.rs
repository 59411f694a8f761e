use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fiberlin_cli::config::RunConfig;
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fiberlin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiberlin"))
        .args(args)
        .output()
        .expect("spawn fiberlin")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn constants_on_mobius_gives_the_norm_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("mobius_example.json");
    let out = fiberlin(&[
        "constants",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("constants.csv")).unwrap();
    assert!(
        csv.lines()
            .any(|l| l == "l_norm_bound,4.0000000000000000e0"),
        "{csv}"
    );
    let r = report(dir.path());
    assert!(r["timestamp"].is_u64());
    assert!(r["solver"].is_null());
}

#[test]
fn holder_on_a_base_independent_family_is_exact_in_b() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("koenigs_example.json");
    let out = fiberlin(&[
        "holder",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(dir.path());
    assert_eq!(r["holder"]["exact_in_b"], Value::Bool(true));
    assert!(r["timestamp"].is_null());
    assert_eq!(r["oracle"]["kind"], "koenigs");
    assert!(dir.path().join("holder_table.csv").exists());
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let cfg = configs().join("mobius_example.json");
    let out = fiberlin(&[
        "linearize",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--nb",
        "8",
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r1 = report(&first);
    // rerun from the embedded config alone
    let embedded: RunConfig = serde_json::from_value(r1["config"].clone()).unwrap();
    assert_eq!(embedded.solver.n_b, 8);
    let path = dir.path().join("effective.json");
    std::fs::write(&path, serde_json::to_string(&embedded).unwrap()).unwrap();
    let second = dir.path().join("second");
    let out = fiberlin(&[
        "linearize",
        path.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r2 = report(&second);
    assert_eq!(r1["solver"], r2["solver"]);
    assert_eq!(r1["conjugacy_residual"], r2["conjugacy_residual"]);
    assert_eq!(
        std::fs::read(first.join("h.bin")).unwrap(),
        std::fs::read(second.join("h.bin")).unwrap()
    );
}

#[test]
fn globalize_only_reports_the_cut() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("globalized_example.json");
    let out = fiberlin(&[
        "globalize-only",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(dir.path());
    assert!(
        r["globalization"]["sup_lambda_globalized"]
            .as_f64()
            .unwrap()
            < 1.0
    );
    assert!(r["validation"].is_null());
    let plain = configs().join("mobius_example.json");

    // the file already has a cut, so overriding a radius needs no --globalize
    let out = fiberlin(&[
        "globalize-only",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--r-inner",
        "0.08",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        report(dir.path())["config"]["globalization"]["r_inner"].as_f64(),
        Some(0.08)
    );

    let out = fiberlin(&[
        "globalize-only",
        plain.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--r-inner",
        "0.08",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let plain = configs().join("mobius_example.json");
    let out = fiberlin(&[
        "globalize-only",
        plain.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn globalize_flag_rescues_a_hot_family() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.json");
    std::fs::write(
        &cfg,
        r#"{"fiber": {"family": "custom", "expr": "(0.85 - 0.35*cos(2*pi*b1))*x + 0.1*x^2*(1 - x)"},
            "solver": {"n_b": 16, "n_x": 9}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = fiberlin(&[
        "globalize-only",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = fiberlin(&[
        "globalize-only",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--globalize",
        "--r-inner",
        "0.05",
        "--r-outer",
        "0.2",
        "--center",
        "0,0",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(&out_dir);
    assert_eq!(r["config"]["globalization"]["r_inner"].as_f64(), Some(0.05));
}

#[test]
fn errors_are_json_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"base": [[1, 1], [0, 1]]}"#).unwrap();
    let out = fiberlin(&[
        "linearize",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let diag: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(diag["kind"], "not_hyperbolic");
    assert_eq!(diag["exit_code"], 2);

    std::fs::write(&bad, "{not json").unwrap();
    let out = fiberlin(&["linearize", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let out = fiberlin(&["linearize", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(
        &bad,
        r#"{"fiber": {"family": "custom", "expr": "0.5*x + x^2*(1 -"}}"#,
    )
    .unwrap();
    let out = fiberlin(&["linearize", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_monotone_fibers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fold.json");
    std::fs::write(
        &cfg,
        r#"{"fiber": {"family": "custom", "expr": "0.5*x - 2*x^2"}}"#,
    )
    .unwrap();
    let out = fiberlin(&[
        "linearize",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model_violation"));
}

#[test]
fn strict_mode_is_quiet_without_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("mobius_example.json");
    let out = fiberlin(&[
        "constants",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--strict",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(dir.path())["enforced_violations"], 0);
}
