use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn linpoison(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linpoison")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn gen(dir: &Path, family: &str, name: &str) {
    let o = linpoison(
        dir,
        &["gen", "--family", family, "--seed", "1", "--states", "2", "--actions", "2", "--horizon", "2", "--dim", "3", "-o", &format!("{name}.json"), "--target", &format!("{name}_pi.json")],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_then_characterize() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "attackable", "a");
    let o = linpoison(dir.path(), &["characterize", "a.json", "a_pi.json"]);
    assert_eq!(code(&o), 0);
    let cert: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cert["verdict"], "attackable");
    assert_eq!(cert["mode"], "norm");
    assert!(cert["solver"]["iterations"].as_u64().unwrap() > 0);
    assert_eq!(cert["theta_dagger"].as_array().unwrap().len(), 2);

    let o = linpoison(dir.path(), &["characterize", "a.json", "a_pi.json", "--mode", "delta:0.2"]);
    assert_eq!(code(&o), 0);
    let cert: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cert["mode"], "delta:0.2");

    // singleton permissible sets reproduce the single-target certificate
    let pi: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a_pi.json")).unwrap()).unwrap();
    let actions = pi["actions"].as_array().unwrap();
    let sets: Vec<Vec<Vec<u64>>> = actions
        .iter()
        .map(|row| row.as_array().unwrap().iter().map(|a| vec![a.as_u64().unwrap()]).collect())
        .collect();
    fs::write(dir.path().join("sets.json"), serde_json::to_string(&sets).unwrap()).unwrap();
    let o = linpoison(dir.path(), &["characterize", "a.json", "a_pi.json", "--set", "sets.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validation_failures_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "attackable", "a");
    assert_eq!(code(&linpoison(dir.path(), &["characterize", "a.json", "missing.json"])), 2);
    assert_eq!(code(&linpoison(dir.path(), &["characterize", "a.json", "a_pi.json", "--mode", "delta:-1"])), 2);
    fs::write(dir.path().join("bad.json"), "{\"H\": 2}").unwrap();
    assert_eq!(code(&linpoison(dir.path(), &["characterize", "bad.json", "a_pi.json"])), 2);
    assert_eq!(code(&linpoison(dir.path(), &["gen", "--family", "nope", "-o", "x.json"])), 2);
    assert_eq!(code(&linpoison(dir.path(), &["report", "."])), 2);

    // a white-box attack on a robust instance is refused
    gen(dir.path(), "robust", "r");
    let scenario = r#"{"mdp": {"file": "r.json"}, "target": {"file": "r_pi.json"}, "attacker": {"kind": "whitebox"}, "episodes": 700}"#;
    fs::write(dir.path().join("r_scn.json"), scenario).unwrap();
    let o = linpoison(dir.path(), &["attack", "--config", "r_scn.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("refusing"));
}

#[test]
fn attack_simulate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "attackable", "a");
    let scenario = r#"{"mdp": {"file": "a.json"}, "target": {"file": "a_pi.json"},
        "attacker": {"kind": "whitebox"}, "episodes": 1500, "trials": 2, "base_seed": 3, "output_dir": "wb"}"#;
    fs::write(dir.path().join("scn.json"), scenario).unwrap();
    let o = linpoison(dir.path(), &["attack", "--config", "scn.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("wb");
    for f in ["trial_000.csv", "trial_001.csv", "summary.json", "cost.svg", "agreement.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let first = fs::read(out.join("trial_000.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 1501);

    // rerun: identical CSVs
    assert_eq!(code(&linpoison(dir.path(), &["attack", "--config", "scn.json"])), 0);
    assert_eq!(fs::read(out.join("trial_000.csv")).unwrap(), first);

    // report rebuilds the summary from the CSVs
    let before: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    fs::remove_file(out.join("agreement.svg")).unwrap();
    let o = linpoison(dir.path(), &["report", "wb"]);
    assert_eq!(code(&o), 0);
    let after: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(before["m2_success_pct"], after["m2_success_pct"]);
    assert!(out.join("agreement.svg").exists());

    // simulate ignores the attacker
    let o = linpoison(dir.path(), &["simulate", "--config", "scn.json"]);
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["trials"].as_array().unwrap().iter().all(|t| t["total_cost"] == 0.0));
    assert!(summary.get("certificate").is_none());
}
