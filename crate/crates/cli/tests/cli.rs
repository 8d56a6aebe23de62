use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use attnguard_core::engine::{EngineConfig, OverrideCmd};
use attnguard_core::forest::ForestModel;
use attnguard_core::service::{Session, SessionMode};
use attnguard_core::signal::{parse_trace, EventKind};
use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnguard"))
        .args(args)
        .current_dir(dir)
        .env_remove("ATTNGUARD_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn copy_demo(dir: &Path, names: &[&str]) {
    for n in names {
        std::fs::copy(repo().join("demo").join(n), dir.join(n)).unwrap();
    }
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["simulate", "--duration", "600", "--seed", "42", "--out", "trace.jsonl"];
    ok(a.path(), &args);
    ok(b.path(), &args);
    for f in ["trace.jsonl", "trace.truth.jsonl", "trace.meta.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    ok(b.path(), &["simulate", "--duration", "600", "--seed", "43", "--out", "trace.jsonl"]);
    assert_ne!(
        std::fs::read(a.path().join("trace.jsonl")).unwrap(),
        std::fs::read(b.path().join("trace.jsonl")).unwrap()
    );

    let meta = json(&a.path().join("trace.meta.json"));
    assert_eq!(meta["tool"], "attnguard");
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(meta["seed"], 42);
    assert_eq!(meta["command"]["simulate"]["duration"], 600);
}

#[test]
fn generated_seed_is_recorded_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--duration", "400", "--out", "a.jsonl"]);
    let meta = json(&dir.path().join("a.meta.json"));
    assert!(meta["global"]["seed"].is_null());
    let seed = meta["seed"].as_u64().expect("generated seed recorded");
    ok(dir.path(), &["simulate", "--duration", "400", "--seed", &seed.to_string(), "--out", "b.jsonl"]);
    // the session id is the file stem, so compare after normalizing it
    let a = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a.replace("\"sid\":\"a\"", "\"sid\":\"b\""), b);
}

#[test]
fn eval_on_separable_profile_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let profile = data("separable.toml");
    ok(
        dir.path(),
        &[
            "simulate",
            "--profile",
            profile.to_str().unwrap(),
            "--sessions",
            "10",
            "--duration",
            "1800",
            "--seed",
            "5",
            "--out",
            "data",
        ],
    );
    let table = ok(
        dir.path(),
        &["eval", "--data", "data", "--folds", "5", "--trees", "30", "--seed", "2", "--report", "report.json"],
    );
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["accuracy"], 1.0, "{table}");
    assert_eq!(report["macro_f1"], 1.0);
    assert_eq!(report["folds"], 5);
    assert_eq!(report["label_sources"]["truth"], 10);
    assert_eq!(report["feature_importances"].as_array().unwrap().len(), 10);
    assert_eq!(report["meta"]["seed"], 2);
    assert!(table.contains("accuracy"));
}

#[test]
fn train_replay_and_model_metadata() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--sessions", "6", "--duration", "900", "--seed", "9", "--out", "data"]);
    ok(dir.path(), &["train", "--data", "data", "--trees", "10", "--seed", "4", "--model-out", "m.json"]);
    let model = json(&dir.path().join("m.json"));
    assert_eq!(model["seed"], 4);
    assert_eq!(model["meta"]["seed"], 4);
    assert_eq!(model["meta"]["command"]["train"]["trees"], 10);

    let args = [
        "replay",
        "--trace",
        "data/sim000.jsonl",
        "--model",
        "m.json",
        "--directives-out",
        "d.jsonl",
        "--log-out",
        "log.jsonl",
    ];
    ok(dir.path(), &args);
    let first = std::fs::read(dir.path().join("d.jsonl")).unwrap();
    ok(dir.path(), &args);
    assert_eq!(first, std::fs::read(dir.path().join("d.jsonl")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.lines().count() > 0);
    for line in text.lines() {
        let d: Value = serde_json::from_str(line).unwrap();
        assert!(d["rationale"].as_str().is_some_and(|r| !r.is_empty()));
    }
    assert!(dir.path().join("d.meta.json").exists());
    let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    assert!(log.starts_with(r#"{"v":1,"seq":0,"type":"header""#));

    // rule-labelled training when no truth sidecars exist
    for e in std::fs::read_dir(dir.path().join("data")).unwrap() {
        let p = e.unwrap().path();
        if p.to_string_lossy().ends_with(".truth.jsonl") {
            std::fs::remove_file(p).unwrap();
        }
    }
    let out = ok(dir.path(), &["train", "--data", "data", "--trees", "5", "--seed", "1", "--model-out", "r.json"]);
    assert!(out.contains("0 truth, 6 rule-labelled"), "{out}");
}

fn wizard_log_copying_shadow(dir: &Path) -> PathBuf {
    let model = ForestModel::from_json(&std::fs::read_to_string(repo().join("demo/model.json")).unwrap()).unwrap();
    let events = parse_trace(&std::fs::read_to_string(repo().join("demo/trace.jsonl")).unwrap()).unwrap();
    let mut s = Session::new("w", SessionMode::Wizard, None, Arc::new(model), EngineConfig::default(), 0).unwrap();
    let mut seen = 0;
    for e in events {
        if e.kind == EventKind::SessionEnd {
            break;
        }
        s.ingest(vec![e]).unwrap();
        let ests = s.estimates();
        if ests.len() > seen {
            seen = ests.len();
            if seen % 2 == 0 {
                let shadow = ests[seen - 1].state;
                s.apply_override(OverrideCmd::SetState(shadow)).unwrap();
            }
        }
    }
    s.end();
    let path = dir.join("copied.jsonl");
    std::fs::write(&path, s.export_log().unwrap()).unwrap();
    path
}

#[test]
fn concord_perfect_agreement() {
    let dir = tempfile::tempdir().unwrap();
    wizard_log_copying_shadow(dir.path());
    ok(dir.path(), &["concord", "--log", "copied.jsonl", "--report", "c.json"]);
    let r = json(&dir.path().join("c.json"));
    assert!(r["n"].as_u64().unwrap() >= 10);
    assert_eq!(r["exact"], 1.0);
    assert_eq!(r["compatible"], 1.0);
    assert_eq!(r["kappa"], 1.0);
}

#[test]
fn concord_demo_log_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    copy_demo(dir.path(), &["wizard_session.jsonl", "compat.toml"]);
    let table = ok(
        dir.path(),
        &["concord", "--log", "wizard_session.jsonl", "--compat", "compat.toml", "--report", "report.json"],
    );
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(report, std::fs::read_to_string(data("demo_concord.json")).unwrap());
    assert_eq!(table, std::fs::read_to_string(data("demo_concord.txt")).unwrap());

    // the demo log flips 4 of its 25 decisions away from the shadow state
    let r: Value = serde_json::from_str(&report).unwrap();
    assert_eq!(r["n"], 25);
    assert_eq!(r["exact"], 21.0 / 25.0);
}

#[test]
fn concord_replays_estimates_with_a_model() {
    let dir = tempfile::tempdir().unwrap();
    copy_demo(dir.path(), &["wizard_session.jsonl", "model.json"]);
    ok(
        dir.path(),
        &["concord", "--log", "wizard_session.jsonl", "--model", "model.json", "--report", "r.json"],
    );
    let r = json(&dir.path().join("r.json"));
    assert_eq!(r["estimates"], "replayed");
    assert_eq!(r["exact"], 21.0 / 25.0);
}

#[test]
fn stats_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.csv"), "a,b\n1,2\n2,4\n3,6\n4,8\n5,10\n").unwrap();
    let out = ok(dir.path(), &["stats", "--csv", "p.csv", "--alternative", "greater", "--report", "s.json"]);
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["design"], "paired");
    // five positive differences: the exact one-sided p is 1/32
    assert_eq!(r["wilcoxon"]["p_value"], 0.03125);
    assert!(json(&dir.path().join("s.json"))["meta"].is_object());
}

#[test]
fn label_session_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "student_id,click_rate_norm,duration_ratio,resource_diversity,backtracking_ratio,idle_pattern_score\n\
               s1,1.0,1.0,3,0.1,0.1\n\
               s2,1.1,1.0,3,0.1,0.1\n\
               s3,0.9,1.0,3,0.1,0.1\n\
               s4,1.0,1.1,3,0.1,0.9\n\
               s5,1.0,0.9,,0.1,0.1\n";
    std::fs::write(dir.path().join("o.csv"), csv).unwrap();
    let out = run(dir.path(), &["label", "--csv", "o.csv", "--report", "l.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 5 rejected"));
    let r = json(&dir.path().join("l.json"));
    assert_eq!(r["labels"].as_array().unwrap().len(), 4);
    assert_eq!(r["labels"][3], "Drifting");
    assert_eq!(r["rejected"][0]["row"], 5);
}

#[test]
fn synthetic_cohort_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["cohort", "--synthetic", "4", "--duration", "600", "--seed", "1", "--report", "c.json"],
    );
    assert!(out.contains("auc"));
    let r = json(&dir.path().join("c.json"));
    assert_eq!(r["scores"].as_array().unwrap().len(), 8);

    ok(dir.path(), &["simulate", "--duration", "600", "--seed", "3", "--out", "t.jsonl"]);
    let feats = ok(dir.path(), &["features", "--trace", "t.jsonl", "--labels"]);
    // 300 s of calibration leaves ten 30 s windows
    assert_eq!(feats.lines().count(), 10);
    let first: Value = serde_json::from_str(feats.lines().next().unwrap()).unwrap();
    assert!(first["label"].is_string());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(dir.path(), args).status.code();

    assert_eq!(code(&["--version"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["simulate", "--duration", "notanumber"]), Some(2));
    assert_eq!(code(&["simulate", "--seed", "1"]), Some(2), "missing --out");

    assert_eq!(code(&["concord", "--log", "missing.jsonl"]), Some(3));
    std::fs::write(dir.path().join("bad.json"), "{}").unwrap();
    assert_eq!(
        code(&["replay", "--trace", "x.jsonl", "--model", "bad.json"]),
        Some(3)
    );
    assert_eq!(code(&["simulate", "--duration", "10", "--seed", "1", "--out", "t.jsonl"]), Some(3));

    std::fs::write(dir.path().join("blocker"), "").unwrap();
    assert_eq!(
        code(&["simulate", "--duration", "400", "--seed", "1", "--out", "blocker/t.jsonl"]),
        Some(4)
    );
}

#[test]
fn config_file_and_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), "[forest]\nn_trees = 3\n").unwrap();
    ok(dir.path(), &["simulate", "--sessions", "5", "--duration", "600", "--seed", "2", "--out", "d"]);
    let out = Command::new(env!("CARGO_BIN_EXE_attnguard"))
        .args(["train", "--data", "d", "--seed", "1", "--model-out", "m.json"])
        .current_dir(dir.path())
        .env("ATTNGUARD_CONFIG", "cfg.toml")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = json(&dir.path().join("m.json"));
    assert_eq!(model["trees"].as_array().unwrap().len(), 3);
    assert_eq!(model["meta"]["config"]["forest"]["n_trees"], 3);

    std::fs::write(dir.path().join("bad.toml"), "[forest]\nn_trees = 0\n").unwrap();
    let code = run(dir.path(), &["--config", "bad.toml", "train", "--data", "d", "--seed", "1", "--out", "x.json"])
        .status
        .code();
    assert_eq!(code, Some(3));
}
