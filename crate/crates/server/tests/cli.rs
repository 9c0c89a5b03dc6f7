use std::path::Path;
use std::process::{Command, Output};

use altrec_core::survey::SurveyBundle;

fn altrec(data_dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_altrec"))
        .env("DATA_DIR", data_dir)
        .env_remove("MODEL_PATH")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    altrec(&data, &["generate", "--seed", "4", "--varieties", "4", "--per-variety", "20"]);
    altrec(&data, &["clean", "--min-variety", "4"]);
    altrec(&data, &["train", "--seed", "2", "--epochs", "3", "--dim", "8"]);
    assert!(data.join("model.pvdm").exists());

    altrec(&data, &["survey", "build", "--id", "cf", "--seed", "9"]);
    altrec(&data, &["survey", "build", "--id", "nn", "--family", "rsnn", "--metric", "manhattan", "--seed", "9"]);
    let nn = SurveyBundle::load(data.join("surveys/nn.json")).unwrap();
    assert_eq!(nn.questions().count(), 30);
    assert_eq!(nn.metric.map(|m| m.to_string()).as_deref(), Some("manhattan"));

    let cf = SurveyBundle::load(data.join("surveys/cf.json")).unwrap();
    let source = &cf.blocks[0].questions[0];
    let out = altrec(&data, &["recommend", "--ean", &source.source, "--k", "3"]);
    let ranked: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let eans: Vec<&str> = ranked["candidates"].as_array().unwrap().iter().map(|c| c["ean"].as_str().unwrap()).collect();
    assert_eq!(eans, source.options);

    // Same seed, same bytes.
    let first = std::fs::read(data.join("surveys/cf.json")).unwrap();
    altrec(&data, &["survey", "build", "--id", "cf", "--seed", "9"]);
    assert_eq!(first, std::fs::read(data.join("surveys/cf.json")).unwrap());

    let out = altrec(&data, &["eval", "--id", "cf", "--format", "json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["responses"], 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("EmptyGroup(3)"));
}

#[test]
fn bad_input_fails_with_cause() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_altrec"))
        .env("DATA_DIR", dir.path())
        .args(["recommend", "--ean", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("catalog.csv"));
}
