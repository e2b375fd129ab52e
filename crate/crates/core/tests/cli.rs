//! End-to-end runs of the `qnnv` binary.

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn qnnv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnnv")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn report(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("report.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn status(v: &Value) -> &str {
    v["verdict"]["status"].as_str().unwrap()
}

fn fake_solver(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

#[test]
fn safe_toy_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let o = qnnv(&[
        "verify",
        "--model",
        &fixture("toy_relu.json"),
        "--property",
        &fixture("toy_safe.prop"),
        "--quant",
        "fxp:3.4",
        "--solver",
        "z3",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(out.path());
    assert_eq!(r.len(), 1);
    assert_eq!(status(&r[0]), "SAFE");
    assert!(r[0]["timing"]["solve"].as_f64().unwrap() > 0.0);
    let table = std::fs::read_to_string(out.path().join("report.txt")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("toy_safe") && l.contains("SAFE")));
}

#[test]
fn unsafe_toy_writes_counterexample() {
    let out = tempfile::tempdir().unwrap();
    let o = qnnv(&[
        "verify",
        "--model",
        &fixture("toy_relu.json"),
        "--property",
        &fixture("toy_unsafe.prop"),
        "--property",
        &fixture("toy_safe.prop"),
        "--quant",
        "fxp:3.4",
        "--solver",
        "z3",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 10);
    let r = report(out.path());
    assert_eq!(r.iter().map(status).collect::<Vec<_>>(), ["UNSAFE", "SAFE"]);
    let cex: Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("toy_unsafe.z3.cex.json")).unwrap()).unwrap();
    let x: Vec<f64> = cex["input_values"].as_array().unwrap().iter().map(|v| v["value"].as_f64().unwrap()).collect();
    // y = x0 + x1 + relu(x0 - x1) on the unit box exceeds 1.5 here.
    let y = x[0] + x[1] + (x[0] - x[1]).max(0.0);
    assert!(y > 1.5, "witness {x:?}");
    let layers = cex["trace"]["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 2);
    assert_eq!(layers[1][0]["post"]["value"].as_f64().unwrap(), y);
}

#[test]
fn emit_spawns_no_solver() {
    let out = tempfile::tempdir().unwrap();
    let bin = tempfile::tempdir().unwrap();
    let witness = bin.path().join("spawned");
    let spy = fake_solver(bin.path(), "spy", &format!("touch {}; echo unsat", witness.display()));
    let o = qnnv(&[
        "emit",
        "--model",
        &fixture("toy_relu.json"),
        "--property",
        &fixture("toy_safe.prop"),
        "--quant",
        "fxp:3.4",
        "--solver",
        &format!("spy={}", spy.display()),
        "--emit",
        "smt2",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let smt = std::fs::read_to_string(out.path().join("toy_safe.smt2")).unwrap();
    assert!(smt.starts_with("(set-logic QF_BV)"));
    assert!(smt.contains("(check-sat)"));
    assert!(!witness.exists());
    assert!(report(out.path())[0]["verdict"].is_null());
}

#[test]
fn timeout_and_solver_error_codes() {
    let out = tempfile::tempdir().unwrap();
    let bin = tempfile::tempdir().unwrap();
    let hang = fake_solver(bin.path(), "hang", "exec sleep 30");
    let crash = fake_solver(bin.path(), "crash", "echo boom >&2; exit 3");
    let base = [
        "verify",
        "--model",
        &fixture("toy_relu.json"),
        "--property",
        &fixture("toy_safe.prop"),
        "--quant",
        "fxp:3.4",
        "--timeout",
        "0.3",
        "--out",
        out.path().to_str().unwrap(),
        "--solver",
    ]
    .map(String::from);
    let run = |solver: String| {
        let mut args: Vec<String> = base.to_vec();
        args.push(solver);
        Command::new(env!("CARGO_BIN_EXE_qnnv")).args(&args).output().unwrap()
    };
    let o = run(format!("hang={}", hang.display()));
    assert_eq!(code(&o), 20);
    assert_eq!(status(&report(out.path())[0]), "TIMEOUT");
    let o = run(format!("crash={}", crash.display()));
    assert_eq!(code(&o), 2);
    let r = report(out.path());
    assert_eq!(status(&r[0]), "SOLVER_ERROR");
    assert!(r[0]["verdict"]["diagnostics"].as_str().unwrap().contains("boom"));
}

#[test]
fn usage_errors_exit_one() {
    let model = fixture("toy_relu.json");
    let prop = fixture("toy_safe.prop");
    let cases: Vec<Vec<&str>> = vec![
        vec!["verify", "--model", &model, "--property", &prop, "--quant", "fxp:banana", "--solver", "z3"],
        vec!["verify", "--property", &prop, "--solver", "z3"],
        vec!["verify", "--model", &model, "--solver", "z3"],
        vec!["verify", "--model", &model, "--property", &prop],
        vec!["verify", "--model", &model, "--property", &prop, "--solver", "no-such-solver-xyz"],
        vec!["verify", "--bogus-flag"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = qnnv(&args);
        assert_eq!(code(&o), 1, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&qnnv(&["--help"])), 0);
    assert_eq!(code(&qnnv(&["--version"])), 0);
}

#[test]
fn bad_inputs_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bad_prop = dir.path().join("bad.prop");
    std::fs::write(&bad_prop, "assume x[0] >= 0;\nassert y[7] <= 1;\n").unwrap();
    let o = qnnv(&[
        "emit",
        "--model",
        &fixture("toy_relu.json"),
        "--property",
        bad_prop.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Property stage"));
    let bad_model = dir.path().join("bad.json");
    std::fs::write(&bad_model, "{\"format_version\": 1, \"layers\": []").unwrap();
    let o = qnnv(&[
        "emit",
        "--model",
        bad_model.to_str().unwrap(),
        "--property",
        &fixture("toy_safe.prop"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Model stage"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "model = {:?}\nproperties = [{:?}]\nquant = \"fxp:banana\"\nsolvers = [\"z3\"]\nout = {:?}\n",
            fixture("toy_relu.json"),
            fixture("toy_unsafe.prop"),
            out.display().to_string()
        ),
    )
    .unwrap();
    let o = qnnv(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "the file's quant is invalid");
    let o = qnnv(&["verify", "--config", cfg.to_str().unwrap(), "--quant", "fxp:3.4"]);
    assert_eq!(code(&o), 10, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(status(&report(&out)[0]), "UNSAFE");

    std::fs::write(&cfg, "model = \"x\"\nsolver_typo = [\"z3\"]\n").unwrap();
    assert_eq!(code(&qnnv(&["verify", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn oracle_matches_verify_on_robustness() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let common = [
        "--model",
        &fixture("toy_classifier.json"),
        "--robustness",
        &fixture("points.csv"),
        "--radius",
        "0.125",
        "--target",
        "0",
        "--quant",
        "fxp:3.4",
    ];
    let mut v = vec!["verify", "--solver", "z3", "--out", a.path().to_str().unwrap()];
    v.extend(common);
    let mut w = vec!["oracle", "--out", b.path().to_str().unwrap()];
    w.extend(common);
    let (ov, ow) = (qnnv(&v), qnnv(&w));
    assert_eq!(code(&ov), code(&ow));
    let sv: Vec<String> = report(a.path()).iter().map(|e| status(e).to_string()).collect();
    let sw: Vec<String> = report(b.path()).iter().map(|e| status(e).to_string()).collect();
    assert_eq!(sv.len(), 2);
    assert_eq!(sv, sw);

    let mut big = vec!["oracle", "--grid-limit", "10", "--out", b.path().to_str().unwrap()];
    big.extend(common);
    assert_eq!(code(&qnnv(&big)), 1);
}

#[test]
fn lut_build_then_verify_with_custom_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("tanh.lut");
    let o = qnnv(&[
        "lut-build",
        "--activation",
        "tanh",
        "--lo",
        "-3",
        "--hi",
        "3",
        "--epsilon",
        "0.01",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lut = qnnv::lut::LookupTable::from_text(&std::fs::read_to_string(&table).unwrap()).unwrap();
    assert!(lut.audit(f64::tanh, 100_000).max_error <= 0.01);

    let model = dir.path().join("tanh.json");
    std::fs::write(
        &model,
        r#"{"format_version": 1, "layers": [
            {"type": "dense", "weights": [[1.0]], "bias": [0.0], "activation": "tanh"},
            {"type": "dense", "weights": [[1.0]], "bias": [0.0], "activation": "linear"}]}"#,
    )
    .unwrap();
    let prop = dir.path().join("p.prop");
    std::fs::write(&prop, "assume x[0] >= -1 && x[0] <= 1;\nassert y[0] <= 1;\n").unwrap();
    let o = qnnv(&[
        "verify",
        "--model",
        model.to_str().unwrap(),
        "--property",
        prop.to_str().unwrap(),
        "--lut",
        table.to_str().unwrap(),
        "--quant",
        "fxp:2.6",
        "--solver",
        "z3",
        "--keep-artifacts",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let raw = std::fs::read_to_string(dir.path().join("p.z3.out")).unwrap();
    assert_eq!(raw.lines().next(), Some("unsat"));
}

#[test]
fn nnet_emission_writes_all_targets() {
    let out = tempfile::tempdir().unwrap();
    let o = qnnv(&[
        "emit",
        "--model",
        &fixture("acasxu_style.nnet"),
        "--property",
        &fixture("acasxu_box.prop"),
        "--quant",
        "float32",
        "--emit",
        "smt2,c,invariants",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for ext in ["smt2", "c", "invariants.txt"] {
        assert!(out.path().join(format!("acasxu_box.{ext}")).exists(), "{ext}");
    }
    let inv = std::fs::read_to_string(out.path().join("acasxu_box.invariants.txt")).unwrap();
    assert!(!inv.contains("unbounded"));
    assert!(report(out.path())[0]["invariant_mean_width"].as_f64().unwrap().is_finite());
}
