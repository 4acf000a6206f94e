use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mfglab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfglab")).current_dir(dir).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, json: &str) -> String {
    fs::write(dir.join(name), json).unwrap();
    name.to_string()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#""grid": {"nx": [33], "nt": 65}"#;

#[test]
fn zero_coupling_converges_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "z.json", &format!(r#"{{"problem": {{"scenario": "zero_coupling"}}, {SMALL}}}"#));
    let out = mfglab(dir.path(), &["forward", "--config", &c, "--out", "z"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let prov = read_json(&dir.path().join("z/provenance.json"));
    assert_eq!(prov["convergence"]["iterations"], 1);
    assert_eq!(fs::read_to_string(dir.path().join("z/history.csv")).unwrap().lines().count(), 2);
    for f in ["u.csv", "m.csv", "k.csv", "f.csv", "grid.json"] {
        assert!(dir.path().join("z").join(f).exists(), "{f}");
    }
}

#[test]
fn undamped_strong_coupling_exits_two_with_history() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(
        dir.path(),
        "s.json",
        &format!(r#"{{"problem": {{"scenario": "strong_coupling"}}, "solver": {{"theta": 1.0, "max_iter": 40}}, {SMALL}}}"#),
    );
    let out = mfglab(dir.path(), &["forward", "--config", &c, "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
    let history = fs::read_to_string(dir.path().join("s/history.csv")).unwrap();
    assert!(history.lines().count() > 1);
    assert!(dir.path().join("s/provenance.json").exists());
}

#[test]
fn forward_is_byte_identical_and_rerunnable_from_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "m.json", &format!("{{{SMALL}}}"));
    assert!(mfglab(dir.path(), &["forward", "--config", &c, "--out", "a"]).status.success());
    assert!(mfglab(dir.path(), &["forward", "--config", &c, "--out", "b"]).status.success());
    assert!(mfglab(dir.path(), &["forward", "--config", "a/provenance.json", "--out", "c"]).status.success());
    for f in ["u.csv", "m.csv", "k.csv", "f.csv", "history.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn huge_lambda_is_a_numeric_range_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfglab(dir.path(), &["carleman", "--lambda-grid", "1e6", "--out", "c"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn epsilon_outside_the_window_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfglab(dir.path(), &["sweep", "--rho", "0.9", "--epsilon", "0.02"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("window") && err.contains("0.02565"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn params_only_prints_the_parameters_without_solving() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfglab(dir.path(), &["sweep", "--params-only"]);
    assert!(out.status.success());
    let p: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((p["beta"].as_f64().unwrap() - 33.0 / 7.0).abs() < 1e-12);
    assert!((p["alpha"].as_f64().unwrap() - 1000.0 / 7.0).abs() < 1e-10);
    assert!((p["d"].as_f64().unwrap() - 132.0 / 7.0).abs() < 1e-12);
    assert!((p["delta0"].as_f64().unwrap() / (-264.0f64 / 7.0).exp() - 1.0).abs() < 1e-12);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_keys_and_bad_values_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "bad.json", r#"{"solver": {"theta": 0.0}}"#);
    let out = mfglab(dir.path(), &["forward", "--config", &c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.theta"));
    let c = config(dir.path(), "typo.json", r#"{"sovler": {}}"#);
    assert_eq!(mfglab(dir.path(), &["forward", "--config", &c]).status.code(), Some(1));
    let c = config(dir.path(), "even.json", r#"{"grid": {"nx": [33], "nt": 64}}"#);
    let out = mfglab(dir.path(), &["forward", "--config", &c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));
    assert_eq!(mfglab(dir.path(), &["nonsense"]).status.code(), Some(1));
}

#[test]
fn carleman_writes_constants_that_make_every_row_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfglab(dir.path(), &["carleman", "--out", "c"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let k = read_json(&dir.path().join("c/constants.json"));
    for c in k["constants"].as_array().unwrap() {
        assert_eq!(c["all_pass"], true);
        assert!(c["c0"].as_f64().unwrap() > 0.0);
    }
    assert_eq!(k["negligible_decay"]["pass"], true);
    let csv = fs::read_to_string(dir.path().join("c/carleman_plus.csv")).unwrap();
    assert!(csv.starts_with("member,lambda,lhs,main,boundary,negligible,pass"));
    assert_eq!(csv.lines().count(), 1 + 20 * 4);
}

#[test]
fn restricted_carleman_runs_on_the_compliant_family() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "r.json", r#"{"carleman": {"restricted": true, "members": 5}}"#);
    let out = mfglab(dir.path(), &["carleman", "--config", &c, "--out", "r"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let k = read_json(&dir.path().join("r/constants.json"));
    assert_eq!(k["boundary"], "restricted");
    assert!(k["constants"].as_array().unwrap().iter().all(|c| c["all_pass"] == true));
}

#[test]
fn lemmas_report_slopes_and_fubini() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "l.json", r#"{"grid": {"nx": [65], "nt": 1025}}"#);
    let out = mfglab(dir.path(), &["lemmas", "--config", &c, "--out", "l"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&dir.path().join("l/lemmas.json"));
    for m in s["time-integral"]["members"].as_array().unwrap() {
        assert!((m["slope"].as_f64().unwrap() + 1.0).abs() <= 0.15);
    }
    assert_eq!(s["separable"]["all_pass"], true);
    assert!(s["fubini_residual"].as_f64().unwrap() <= 1e-10);
    for l in ["time-integral", "separable", "causal"] {
        assert!(dir.path().join(format!("l/lemma_{l}.csv")).exists());
    }
}

#[test]
fn sweep_writes_a_fit_meeting_the_rate() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "w.json", &format!("{{{SMALL}}}"));
    let out = mfglab(dir.path(), &["sweep", "--config", &c, "--out", "w"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = read_json(&dir.path().join("w/fit.json"));
    assert!(fit["slope"].as_f64().unwrap() >= 1.0 - 0.5 - 0.15);
    for f in ["sweep.csv", "params.json", "provenance.json"] {
        assert!(dir.path().join("w").join(f).exists());
    }
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mfglab"))
        .current_dir(dir.path())
        .env("MFGLAB_THREADS", "zero")
        .args(["params"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_mfglab"))
        .current_dir(dir.path())
        .env("MFGLAB_THREADS", "1")
        .args(["params"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
