use std::path::Path;
use std::process::{Command, Output};

fn homoscale(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_homoscale"));
    c.args(args).env_remove("HOMOSCALE_BUDGET");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn effective_writes_versioned_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = homoscale(&["effective", "--out", out, "--seed", "5", "--threads", "1"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS C2"));
    let v = json(&dir.path().join("effective.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["provenance"][0]["seed"], 5);
    let hash = v["provenance"][0]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for f in ["effective.csv", "effective_verdicts.csv", "effective_constants.csv"] {
        let csv = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(csv.lines().skip(1).all(|l| l.contains(&hash)), "{f}");
    }
    let head = std::fs::read_to_string(dir.path().join("effective.csv")).unwrap();
    assert!(head.starts_with("experiment,config_hash,seed,epsilon,key,metric,value"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[eps]\nladdr = [0.1]\n").unwrap();
    let o = homoscale(&["audit", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));
    assert_eq!(homoscale(&["advise", "--config", "/nonexistent.toml"], &[]).status.code(), Some(2));
    assert_eq!(homoscale(&["advise", "--alpha", "-1"], &[]).status.code(), Some(2));
    assert_eq!(homoscale(&["advise"], &[("HOMOSCALE_BUDGET", "lots")]).status.code(), Some(2));
    assert_eq!(homoscale(&["frobnicate"], &[]).status.code(), Some(2));
}

#[test]
fn budget_abort_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = homoscale(&["rate", "--out", dir.path().to_str().unwrap()], &[("HOMOSCALE_BUDGET", "1000")]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds the budget 1000"));
}

#[test]
fn report_merges_and_propagates_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(homoscale(&["effective", "--out", out], &[]).status.code(), Some(0));
    assert_eq!(homoscale(&["advise", "--out", out], &[]).status.code(), Some(0));
    let merged = dir.path().join("merged");
    let inputs = [dir.path().join("effective.json"), dir.path().join("advise.json")];
    let o = homoscale(&["report", inputs[0].to_str().unwrap(), inputs[1].to_str().unwrap(), "--out", merged.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    let m = json(&merged.join("merged.json"));
    assert_eq!(m["provenance"].as_array().unwrap().len(), 1);

    let failing = dir.path().join("failing.json");
    let text = std::fs::read_to_string(&inputs[0]).unwrap().replacen("\"passed\": true", "\"passed\": false", 1);
    std::fs::write(&failing, text).unwrap();
    let o = homoscale(&["report", failing.to_str().unwrap(), "--out", merged.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL C2"));
}

#[test]
fn advise_respects_alpha_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(homoscale(&["advise", "--out", out, "--alpha", "3"], &[]).status.code(), Some(0));
    let a3 = std::fs::read_to_string(dir.path().join("advise_advice.csv")).unwrap();
    assert_eq!(homoscale(&["advise", "--out", out], &[]).status.code(), Some(0));
    let a1 = std::fs::read_to_string(dir.path().join("advise_advice.csv")).unwrap();
    assert_ne!(a1, a3);
}
