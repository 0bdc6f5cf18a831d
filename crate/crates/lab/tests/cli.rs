use std::path::Path;
use std::process::{Command, Output};

use mmr_lab::store;
use serde_json::Value;

const SMALL: &str = r#"{
  "data": { "generator": { "n": 240, "h": 8, "w": 16 } },
  "run": { "epochs": 4, "hil": { "rho": 0.02 } }
}"#;

fn mmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmr")).args(args).output().expect("binary runs")
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.json");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_ratio_injection_keeps_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let clean = dir.path().join("clean");
    let same = dir.path().join("same");
    let v = ok_json(mmr(&["gen-data", "--config", &cfg, "--seed", "4", "--out", s(&clean)]));
    assert_eq!(v["n"], 240);
    let v = ok_json(mmr(&["inject", "--data", s(&clean), "--ratio", "0", "--out", s(&same)]));
    assert_eq!(v["flipped"], 0);
    let (a, b) = (store::load(&clean).unwrap(), store::load(&same).unwrap());
    assert_eq!(a.features(), b.features());
    assert_eq!(a.labels_train(), b.labels_train());
    assert!(b.injection().is_some());

    let again = mmr(&["inject", "--data", s(&same), "--ratio", "0.2", "--out", s(&dir.path().join("x"))]);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn seeded_training_is_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str, method: &str| {
        let out = dir.path().join(name);
        let v = ok_json(mmr(&[
            "train", "--config", &cfg, "--method", method, "--ratio", "0.3", "--seed", "7", "--out", s(&out),
        ]));
        assert!(v["summary"]["final_accuracy"].as_f64().is_some());
        out
    };
    let a = run("mmr-a", "mmr");
    let b = run("mmr-b", "mmr");
    assert_eq!(std::fs::read(a.join("run.json")).unwrap(), std::fs::read(b.join("run.json")).unwrap());

    let base = run("base", "baseline-ce");
    let hil = run("hil", "mmr-hil");
    let replay = dir.path().join("replay");
    ok_json(mmr(&[
        "train", "--config", &cfg, "--method", "mmr-hil", "--ratio", "0.3", "--seed", "7",
        "--transcript", s(&hil.join("queries.csv")), "--out", s(&replay),
    ]));
    assert_eq!(
        std::fs::read(hil.join("labels_final.csv")).unwrap(),
        std::fs::read(replay.join("labels_final.csv")).unwrap()
    );

    let rep = dir.path().join("report");
    let v = ok_json(mmr(&["report", s(&base), s(&a), s(&hil), "--out", s(&rep)]));
    assert_eq!((v["runs"].as_u64(), v["increments"].as_u64()), (Some(3), Some(2)));
    assert!(rep.join("report.json").exists());

    let v = ok_json(mmr(&["eval", "--run", s(&a)]));
    assert_eq!(v["n"], 60);
    let confusion = &v["confusion"]["rows_true_cols_predicted"];
    let total: u64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| confusion[i][j].as_u64().unwrap()).sum();
    assert_eq!(total, 60);
}

#[test]
fn failures_are_single_json_lines() {
    let out = mmr(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1);
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"]["kind"], "usage");

    let out = mmr(&["eval", "--run", "/nonexistent/run"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["error"]["message"].as_str().is_some());

    assert_eq!(mmr(&["--help"]).status.code(), Some(0));
}
