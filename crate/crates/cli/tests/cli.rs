//! End-to-end runs of the `dyncfg` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dyncfg(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dyncfg"));
    c.args(args).env_remove("DYNCFG_SEED");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn suite() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = dyncfg(&["gen-bench", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn strip_seconds(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("seconds");
            m.values_mut().for_each(strip_seconds);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_seconds),
        _ => {}
    }
}

#[test]
fn eval_reports_full_detection() {
    let dir = suite();
    let o = dyncfg(&["eval", s(dir.path()), "--jobs", "4", "--format", "json"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["precision"], 1.0);
    assert_eq!(v["recall"], 1.0);
    assert_eq!(v["benchmarks"].as_array().unwrap().len(), 16);
    let table = dyncfg(&["eval", s(dir.path())], &[]);
    assert_eq!(code(&table), 0);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("benchmark")), "{text}");
    assert!(text.contains("precision"), "{text}");
}

#[test]
fn json_output_repeats_apart_from_timing() {
    let dir = suite();
    let b = dir.path().join("network_socket");
    let (main, libs, witness) = (b.join("main.sbf"), b.join("libs"), b.join("witness.json"));
    let args = ["analyze", s(&main), "--lib-path", s(&libs), "--witness", s(&witness), "--format", "json"];
    let runs: Vec<Value> = (0..2)
        .map(|_| {
            let o = dyncfg(&args, &[]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
            strip_seconds(&mut v);
            v
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0]["validation"], "pass");
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = suite();
    let b = dir.path().join("environment_path");
    let (main, libs) = (b.join("main.sbf"), b.join("libs"));
    let base = ["analyze", s(&main), "--lib-path", s(&libs), "--format", "json"];
    let bad = dyncfg(&base, &[("DYNCFG_SEED", "not-a-seed")]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("DYNCFG_SEED"));
    let json = |o: Output| {
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
        strip_seconds(&mut v);
        v
    };
    let from_env = json(dyncfg(&base, &[("DYNCFG_SEED", "12345")]));
    let mut flagged = base.to_vec();
    flagged.extend(["--seed", "0x3039"]);
    assert_eq!(from_env, json(dyncfg(&flagged, &[])));
    // The variable wins over the flag.
    let mut overridden = base.to_vec();
    overridden.extend(["--seed", "99"]);
    assert_eq!(from_env, json(dyncfg(&overridden, &[("DYNCFG_SEED", "0x3039")])));
}

#[test]
fn exit_codes() {
    let dir = suite();
    let missing = dir.path().join("missing.sbf");
    assert_eq!(code(&dyncfg(&["analyze", s(&missing)], &[])), 1);
    let lib = dir.path().join("simple_dlopen/libs/libpayload.so");
    assert_eq!(code(&dyncfg(&["analyze", s(&lib)], &[])), 1, "library given as the main binary");
    let main = dir.path().join("simple_dlopen/main.sbf");
    assert_eq!(code(&dyncfg(&["analyze", s(&main), "--max-states", "0"], &[])), 3);
    assert_eq!(code(&dyncfg(&["analyze", s(&main), "--steps", "0"], &[])), 3);
    assert_eq!(code(&dyncfg(&["eval", s(dir.path()), "--jobs", "0"], &[])), 3);
    assert_eq!(code(&dyncfg(&["frobnicate"], &[])), 3);
    assert_eq!(code(&dyncfg(&["--help"], &[])), 0);
    assert_eq!(code(&dyncfg(&["--version"], &[])), 0);
    // A witness that sends the wrong bytes loads nothing the analysis found.
    let b = dir.path().join("network_socket");
    let wrong = dir.path().join("wrong.json");
    std::fs::write(&wrong, r#"{"network_hex": "00"}"#).unwrap();
    let o = dyncfg(
        &["analyze", s(&b.join("main.sbf")), "--lib-path", s(&b.join("libs")), "--witness", s(&wrong)],
        &[],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn dot_output_is_a_digraph() {
    let dir = suite();
    let b = dir.path().join("simple_dlopen");
    for phase in ["static", "module"] {
        let out = dir.path().join(format!("{phase}.dot"));
        let o = dyncfg(
            &["dot", s(&b.join("main.sbf")), "--lib-path", s(&b.join("libs")), "--phase", phase, "--out", s(&out)],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("digraph cfg {\n") && text.ends_with("}\n"), "{text}");
        let body: Vec<&str> = text.lines().skip(1).take_while(|l| *l != "}").collect();
        assert!(body.iter().all(|l| l.starts_with("  ") && l.ends_with(';')), "{text}");
        assert_eq!(text.matches('{').count(), text.matches('}').count());
        assert!(body.iter().any(|l| l.contains(" -> ")), "{phase}: no edges");
    }
    let st = std::fs::read_to_string(dir.path().join("static.dot")).unwrap();
    let md = std::fs::read_to_string(dir.path().join("module.dot")).unwrap();
    assert!(md.lines().count() > st.lines().count());
}
