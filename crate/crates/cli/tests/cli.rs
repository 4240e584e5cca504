use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mhml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhml"))
        .args(args)
        .env_remove("MHML_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_SUITE: &str = r#"{
  "data": {"n_train": 600, "n_val": 150, "n_test": 300},
  "methods": [
    {"kind": "SL1H", "epochs": 2, "hidden": [8]},
    {"kind": "D-Ens", "epochs": 2, "hidden": [8], "ensemble_size": 2},
    {"kind": "4HML", "epochs": 2, "hidden": [8]}
  ],
  "seeds": [0, 1]
}"#;

#[test]
fn gen_data_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data.csv");
    let o = mhml(&["gen-data", "--k", "8", "--dim", "8", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("f0,f1,f2,f3,f4,f5,f6,f7,label\n"));
    assert_eq!(text.lines().count(), 1 + 20_000 + 4_000 + 10_000);
    assert!(dir.path().join("data.spec.json").exists());
    assert!(stdout(&o).contains("\"classes\": 8"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mhml(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mhml(&["gradcheck", "--bogus"]).status.code(), Some(2));
    assert_eq!(mhml(&["suite", "--method", "3HML"]).status.code(), Some(2));
    assert_eq!(mhml(&["gen-data"]).status.code(), Some(2));
}

#[test]
fn missing_files_name_their_path() {
    let o = mhml(&["report", "/nonexistent/result.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/result.json"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_fails_on_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.json");
    let ok = mhml(&["gradcheck", "--trials", "10", "--tol", "1e-6", "--out", p(&out)]);
    assert!(ok.status.success(), "{}{}", stdout(&ok), stderr(&ok));
    assert_eq!(stdout(&ok).matches("PASS").count(), 4);
    assert!(fs::read_to_string(&out).unwrap().contains("\"property1\""));

    let bad = mhml(&["gradcheck", "--trials", "10", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    let text = stdout(&bad);
    assert!(text.contains("FAIL") && text.contains("analytic"), "{text}");
}

#[test]
fn eval_predictions_matches_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.csv");
    fs::write(&preds, "p0,p1,label\n0.6,0.4,0\n0.7,0.3,0\n0.8,0.2,0\n0.9,0.1,0\n").unwrap();
    let out = dir.path().join("report.json");
    let o = mhml(&["eval", "--preds", p(&preds), "--bins", "15", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    // each confidence sits alone in its bin with accuracy 1
    assert_eq!(r["accuracy"], 1.0);
    assert_eq!(r["ece"], 0.25);
    assert_eq!(r["nll"], 0.299001);
    assert_eq!(r["brier"], 0.15);
    assert_eq!(r["n_samples"], 4);
}

#[test]
fn flags_beat_config_and_env_is_last() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, r#"{"classes": 4, "priors": [0.25, 0.25, 0.25, 0.25], "seed": 5, "n_train": 10, "n_val": 0, "n_test": 0}"#).unwrap();
    let out = dir.path().join("d.csv");

    let o = mhml(&["gen-data", "--config", p(&cfg), "--k", "6", "--seed", "9", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = stdout(&o);
    assert!(echo.contains("\"classes\": 6") && echo.contains("\"seed\": 9"), "{echo}");

    let with_env = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_mhml"))
            .args(args)
            .env("MHML_SEED", "77")
            .output()
            .unwrap()
    };
    let o = with_env(&["gen-data", "--config", p(&cfg), "--out", p(&out)]);
    assert!(stdout(&o).contains("\"seed\": 5"), "config seed beats env");
    let o = with_env(&["gen-data", "--k", "3", "--dim", "2", "--out", p(&out)]);
    assert!(stdout(&o).contains("\"seed\": 77"), "env applies when nothing else sets a seed");
    let o = with_env(&["gen-data", "--seed", "1", "--out", p(&out)]);
    assert!(stdout(&o).contains("\"seed\": 1"));
}

#[test]
fn suite_reruns_are_byte_identical_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("suite.json");
    fs::write(&cfg, TINY_SUITE).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = mhml(&["suite", "--config", p(&cfg), "--out", p(&a)]);
    assert!(first.status.success(), "{}{}", stdout(&first), stderr(&first));
    // second run from the emitted config, on two threads
    let emitted = a.join("config.json");
    let second = mhml(&["suite", "--config", p(&emitted), "--jobs", "2", "--out", p(&b)]);
    assert!(second.status.success(), "{}", stderr(&second));
    let ra = fs::read(a.join("result.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("result.json")).unwrap());

    // a result document also works as a config
    let c = dir.path().join("c");
    let third = mhml(&["suite", "--config", p(&a.join("result.json")), "--out", p(&c)]);
    assert!(third.status.success());
    assert_eq!(ra, fs::read(c.join("result.json")).unwrap());

    let rep = mhml(&["report", p(&a.join("result.json"))]);
    assert!(rep.status.success());
    assert_eq!(stdout(&rep), fs::read_to_string(a.join("table.txt")).unwrap());
    let raw = mhml(&["report", p(&a.join("result.json")), "--percent", "false"]);
    assert!(stdout(&raw).contains("0."), "{}", stdout(&raw));
    let csv = fs::read_to_string(a.join("reliability.csv")).unwrap();
    assert!(csv.starts_with("method,seed,bin,lo,hi,count,acc,conf\n"));
}

#[test]
fn suite_seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("suite.json");
    fs::write(&cfg, TINY_SUITE).unwrap();
    let out = dir.path().join("s");
    let o = mhml(&["suite", "--config", p(&cfg), "--seed", "40", "--method", "SL1H,4HML", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let emitted: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(emitted["seeds"], serde_json::json!([40, 41]));
    assert_eq!(emitted["data"]["seed"], 40);
    assert_eq!(emitted["methods"].as_array().unwrap().len(), 2);
    assert_eq!(emitted["methods"][0]["epochs"], 2);
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, r#"{"n_train": 500, "n_val": 100, "n_test": 200}"#).unwrap();
    assert!(mhml(&["gen-data", "--config", p(&cfg), "--out", p(&data)]).status.success());
    let run = dir.path().join("run");
    let o = mhml(&[
        "train", "--data-csv", p(&data), "--method", "2HML", "--epochs", "2", "--seed", "3", "--out", p(&run),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["method"]["kind"], "2HML");
    assert_eq!(report["config"]["method"]["seed"], 3);

    let out = dir.path().join("eval.json");
    let e = mhml(&[
        "eval", "--checkpoint", p(&run.join("checkpoint.json")), "--data-csv", p(&data), "--out", p(&out),
    ]);
    assert!(e.status.success(), "{}", stderr(&e));
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(eval["n_samples"], 200);
    assert_eq!(eval["ece"], report["test"]["ece"]);
}
