//! End-to-end runs of the `tcm` binary on tiny synthetic tasks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
method = "tcm"
shots = 3
seeds = [1]
epochs = 2

[dataset.synthetic]
classes = 4
per_class = 10
vocab_size = 60
signal_tokens_per_class = 4
noise_len = 2
seed = 3

[encoder]
max_len = 16
embed_dim = 8
num_layers = 1
num_heads = 2
ffn_dim = 16
repr_dim = 8
dropout = 0.1
init_std = 0.1
"#;

fn tcm(args: &[&str]) -> Output {
    tcm_env(args, None)
}

fn tcm_env(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tcm"));
    cmd.args(args).env_remove("TCM_OUTPUT_ROOT");
    if let Some(root) = root {
        cmd.env("TCM_OUTPUT_ROOT", root);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `body` plus an absolute `output_dir` under `dir`.
fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let out = dir.join(format!("{name}_out"));
    let path = dir.join(format!("{name}.toml"));
    fs::write(
        &path,
        format!("output_dir = {:?}\n{body}", out.to_str().unwrap()),
    )
    .unwrap();
    path
}

fn train(dir: &Path, name: &str, body: &str) -> PathBuf {
    let cfg = config(dir, name, body);
    let o = tcm(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join(format!("{name}_out"))
}

#[test]
fn train_writes_checkpoint_history_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), "a", TINY);
    for f in [
        "model.ckpt",
        "history.jsonl",
        "config.toml",
        "metrics.json",
        "labels.json",
        "similarity.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let history = fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert!(!history.is_empty());
}

#[test]
fn rerun_gives_identical_history() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a", TINY);
    let b = train(dir.path(), "b", TINY);
    for f in ["history.jsonl", "metrics.json", "model.ckpt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn negative_tau_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a", &format!("{TINY}\n[hyper]\ntau = -1.0\n"));
    let o = tcm(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hyper.tau"), "{}", stderr(&o));
    assert!(
        !dir.path().join("a_out").exists(),
        "nothing is written before validation passes"
    );
}

#[test]
fn missing_dataset_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "a",
        "[dataset]\npath = \"nope.jsonl\"\nmapping = \"nope.json\"\n",
    );
    let o = tcm(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("dataset.path: file not found"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a", &format!("learning_rate = 0.1\n{TINY}"));
    let o = tcm(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn experiment_reports_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a", TINY);
    let o = tcm(&["experiment", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = TINY.replace("seeds = [1]", "seeds = [1, 2, 3, 4, 5]");
    let cfg = config(dir.path(), "b", &body);
    let o = tcm(&["experiment", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("b_out");
    let doc: Value =
        serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(doc["result"]["seeds"].as_array().unwrap().len(), 5);
    assert!(out.join("seed_3/confusion.csv").is_file());
    assert!(out.join("config.toml").is_file());
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a", TINY);
    let out = dir.path().join("elsewhere");
    let o = tcm(&[
        "experiment",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value =
        serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(doc["result"]["seeds"][0]["seed"], 9);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rel.toml");
    fs::write(&cfg, format!("output_dir = \"rel_out\"\n{TINY}")).unwrap();
    let root = dir.path().join("root");
    let o = tcm_env(&["train", cfg.to_str().unwrap()], Some(&root));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("rel_out/model.ckpt").is_file());
}

#[test]
fn description_sweep_without_definitions_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let data: String = (0..24)
        .map(|i| {
            format!(
                "{{\"text\":\"w{} common\",\"label\":\"{}\"}}\n",
                i % 2,
                ["a", "b"][i % 2]
            )
        })
        .collect();
    fs::write(dir.path().join("d.jsonl"), data).unwrap();
    fs::write(
        dir.path().join("m.json"),
        r#"{"a":{"name":"alpha"},"b":{"name":"beta"}}"#,
    )
    .unwrap();
    let body = "protocol = \"description_sweep\"\n[dataset]\npath = \"d.jsonl\"\nmapping = \"m.json\"\n[sweep]\nmodes = [\"name\", \"definition\"]\nks = [2]\n";
    let cfg = config(dir.path(), "a", body);
    let o = tcm(&["experiment", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing definition"), "{}", stderr(&o));
}

fn predict(out: &Path, mapping: &Path, input: &[&str]) -> Output {
    let ckpt = out.join("model.ckpt");
    let mut args = vec![
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--mapping",
        mapping.to_str().unwrap(),
    ];
    args.extend_from_slice(input);
    tcm(&args)
}

fn lines(o: &Output) -> Vec<Value> {
    String::from_utf8(o.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn predict_single_text_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), "a", TINY);
    let mapping = out.join("labels.json");

    let o = predict(&out, &mapping, &["--text", "some words here"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let one = lines(&o);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0]["text"], "some words here");
    let scores = one[0]["scores"].as_object().unwrap();
    assert_eq!(scores.len(), 4);
    let best = scores
        .iter()
        .max_by(|a, b| a.1.as_f64().partial_cmp(&b.1.as_f64()).unwrap())
        .unwrap();
    assert_eq!(one[0]["label"], best.0.as_str());

    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let o = predict(&out, &mapping, &["--file", empty.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());

    let texts = [
        "",
        "alpha beta",
        "a much longer text with many unknown words in it and more",
        "x",
    ];
    let file = dir.path().join("texts.txt");
    fs::write(&file, texts.join("\n")).unwrap();
    let batch = lines(&predict(
        &out,
        &mapping,
        &["--file", file.to_str().unwrap()],
    ));
    let single: Vec<Value> = texts
        .iter()
        .flat_map(|t| lines(&predict(&out, &mapping, &["--text", t])))
        .collect();
    assert_eq!(batch, single);
}

#[test]
fn predict_rejects_a_different_mapping() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), "a", TINY);
    let text = fs::read_to_string(out.join("labels.json")).unwrap();
    let other = dir.path().join("other.json");
    fs::write(
        &other,
        text.replacen("\"definition\": \"", "\"definition\": \"changed ", 1),
    )
    .unwrap();
    let o = predict(&out, &other, &["--text", "hello"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stale"), "{}", stderr(&o));
}

#[test]
fn make_synthetic_then_train_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = tcm(&[
        "make-synthetic",
        "--out",
        data.to_str().unwrap(),
        "--classes",
        "3",
        "--per-class",
        "8",
        "--vocab-size",
        "80",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(data.join("data.jsonl"))
            .unwrap()
            .lines()
            .count(),
        24
    );
    let body = TINY
        .split("[dataset.synthetic]")
        .next()
        .unwrap()
        .to_string()
        + "[dataset]\npath = \"data/data.jsonl\"\nmapping = \"data/labels.json\"\n"
        + &TINY[TINY.find("[encoder]").unwrap()..];
    train(dir.path(), "a", &body);
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    assert_eq!(tcm(&["train"]).status.code(), Some(1));
    assert_eq!(tcm(&["--help"]).status.code(), Some(0));
    let o = tcm(&[
        "predict",
        "--checkpoint",
        "none.ckpt",
        "--mapping",
        "none.json",
        "--text",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
