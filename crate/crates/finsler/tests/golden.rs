//! Golden-file regression fixtures: one per subcommand. Each case runs the
//! CLI entry point against a fixed output path (so the echoed configuration
//! is stable), strips the wall-time field, and compares against the checked-
//! in fixture byte for byte. Set `GOLDEN_UPDATE=1` to regenerate.

use std::fs;
use std::path::{Path, PathBuf};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn normalize_json(text: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(text).expect("valid JSON");
    let obj = v.as_object_mut().unwrap();
    obj.remove("wall_time_ms");
    // The output path is machine-specific; the rest of the config echo is
    // part of the fixture.
    obj.get_mut("config").unwrap()["out"] = serde_json::Value::String("<out>".into());
    let mut out = serde_json::to_string_pretty(&v).unwrap();
    out.push('\n');
    out
}

fn run_case(name: &str, args: &[&str], expect_exit: i32, json: bool) {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join(format!("golden-{name}.out"));
    let mut argv: Vec<String> = vec!["finsler".into()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out".into());
    argv.push(out_path.to_str().unwrap().into());

    let code = finsler::cli::run(argv);
    assert_eq!(code, expect_exit, "exit code for {name}");

    let raw = fs::read_to_string(&out_path).expect("output written");
    let actual = if json { normalize_json(&raw) } else { raw };
    let fixture = fixture_dir().join(format!("{name}.golden"));

    if std::env::var("GOLDEN_UPDATE").as_deref() == Ok("1") {
        fs::create_dir_all(fixture_dir()).unwrap();
        fs::write(&fixture, &actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&fixture).unwrap_or_else(|_| {
        panic!(
            "missing fixture {}; run with GOLDEN_UPDATE=1",
            fixture.display()
        )
    });
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

#[test]
fn golden_curvature_certify() {
    run_case(
        "curvature-certify",
        &[
            "curvature-certify",
            "--metric",
            "quadric",
            "--p",
            "0.4,0.9",
            "--samples",
            "12",
            "--seed",
            "7",
            "--c",
            "1",
        ],
        0,
        true,
    );
}

#[test]
fn golden_geodesic_trace() {
    run_case(
        "geodesic-trace",
        &[
            "geodesic-trace",
            "--metric",
            "quadric",
            "--p",
            "0.4,0.9",
            "--length",
            "6.283185307179586",
            "--step",
            "0.005",
        ],
        0,
        true,
    );
}

#[test]
fn golden_quadric_eval() {
    run_case(
        "quadric-eval",
        &[
            "quadric-eval",
            "--p",
            "0.4,0.9",
            "--samples",
            "60",
            "--seed",
            "3",
        ],
        0,
        true,
    );
}

#[test]
fn golden_hilbert_eval() {
    run_case(
        "hilbert-eval",
        &[
            "hilbert-eval",
            "--body",
            "ball",
            "--samples",
            "25",
            "--seed",
            "5",
        ],
        0,
        true,
    );
}

#[test]
fn golden_zoll_check() {
    run_case(
        "zoll-check",
        &[
            "zoll-check",
            "--h-coeffs",
            "0.2",
            "--grid",
            "32",
            "--step",
            "0.002",
        ],
        0,
        true,
    );
}

#[test]
fn golden_beta_geodesic() {
    run_case(
        "beta-geodesic",
        &[
            "beta-geodesic",
            "--h-coeffs",
            "0.2",
            "--heading",
            "0.7",
            "--length",
            "6.5",
            "--step",
            "0.002",
        ],
        0,
        true,
    );
}

#[test]
fn golden_beta_geodesic_csv() {
    run_case(
        "beta-geodesic-csv",
        &[
            "beta-geodesic",
            "--h-coeffs",
            "0.2",
            "--heading",
            "0.7",
            "--length",
            "1.0",
            "--step",
            "0.01",
            "--format",
            "csv",
        ],
        0,
        false,
    );
}

#[test]
fn golden_structure_residual() {
    run_case(
        "structure-residual",
        &[
            "structure-residual",
            "--h-coeffs",
            "0.2",
            "--grids",
            "32,64",
        ],
        0,
        true,
    );
}

#[test]
fn golden_cartan_characters() {
    run_case(
        "cartan-characters",
        &["cartan-characters", "--n", "2"],
        0,
        true,
    );
}

#[test]
fn golden_reversibility() {
    run_case(
        "reversibility",
        &[
            "reversibility",
            "--metric",
            "quadric",
            "--p",
            "0.4,0.9",
            "--samples",
            "30",
            "--seed",
            "7",
        ],
        0,
        true,
    );
}

#[test]
fn usage_errors_exit_with_code_two() {
    // unsorted phases
    let code = finsler::cli::run([
        "finsler",
        "curvature-certify",
        "--metric",
        "quadric",
        "--p",
        "0.9,0.4",
        "--samples",
        "5",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 2);

    // phase beyond the open bound
    let code = finsler::cli::run([
        "finsler",
        "curvature-certify",
        "--metric",
        "quadric",
        "--p",
        "0.4,3.2",
        "--samples",
        "5",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 2);

    // missing seed on a sampled computation
    let code = finsler::cli::run([
        "finsler",
        "reversibility",
        "--metric",
        "round-sphere",
        "--samples",
        "5",
    ]);
    assert_eq!(code, 2);

    // unknown subcommand
    let code = finsler::cli::run(["finsler", "no-such-command"]);
    assert_eq!(code, 2);
}

#[test]
fn verdict_failures_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_buf = dir.path().join("failing-run.out");
    let out = out_buf.to_str().unwrap();
    // The flat metric has K ≡ 0; asserting c = 1 must fail the verdict.
    let code = finsler::cli::run([
        "finsler",
        "curvature-certify",
        "--metric",
        "flat",
        "--samples",
        "5",
        "--seed",
        "1",
        "--c",
        "1",
        "--out",
        out,
    ]);
    assert_eq!(code, 1);
    let _ = std::fs::remove_file(out);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "n": 3, "n_max": 6 }"#).unwrap();
    let out = dir.path().join("out.json");
    let code = finsler::cli::run([
        "finsler",
        "cartan-characters",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["payload"]["table"]["n"], 3);
    assert_eq!(v["payload"]["identities_checked_up_to"], 6);

    // flag overrides the file
    let code = finsler::cli::run([
        "finsler",
        "cartan-characters",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["payload"]["table"]["n"], 4);
}

#[test]
fn empty_config_with_flags_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(&cfg, "{}").unwrap();
    let out = dir.path().join("out.json");
    let code = finsler::cli::run([
        "finsler",
        "cartan-characters",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
}

#[test]
fn unknown_config_fields_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "phase_vector": "0.4" }"#).unwrap();
    let code = finsler::cli::run([
        "finsler",
        "cartan-characters",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn tolerance_overrides_change_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out_buf = dir.path().join("tol-override.out");
    let out = out_buf.to_str().unwrap();
    // Tighten the closure tolerance beyond reach: the same run must now fail.
    let code = finsler::cli::run([
        "finsler",
        "geodesic-trace",
        "--metric",
        "quadric",
        "--p",
        "0.4,0.9",
        "--length",
        "6.283185307179586",
        "--step",
        "0.005",
        "--tol",
        "closure=1e-16",
        "--out",
        out,
    ]);
    assert_eq!(code, 1);
    let _ = std::fs::remove_file(out);
}

#[test]
fn invalid_profile_is_a_usage_error() {
    let code = finsler::cli::run(["finsler", "zoll-check", "--h-coeffs", "5.0"]);
    assert_eq!(code, 2);
}

#[test]
fn config_file_tolerances_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{ "metric": "quadric", "p": "0.4,0.9", "length": 6.283185307179586,
             "step": 0.005, "tolerances": { "closure": 1e-16 } }"#,
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let code = finsler::cli::run([
        "finsler",
        "geodesic-trace",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        code, 1,
        "unreachable closure tolerance must fail the verdict"
    );
}
