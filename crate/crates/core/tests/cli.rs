use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ood_core::evaluation::EvalReport;
use ood_core::io::{load_embeddings, save_embeddings, DatasetManifest, EmbeddingMatrix, Split};
use serde_json::Value;

fn ood(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ood"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small synthetic benchmark and returns its directory.
fn small_benchmark(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"k_normal": 3, "k_anom": 2, "d": 12, "n_train": 150, "n_test_in": 40, "n_test_out": 30, "within_scale": 0.1}"#,
    )
    .unwrap();
    let data = dir.join("data");
    let out = ood(&["synth", "--spec", s(&spec), "--seed", "5", "--out-dir", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    data
}

const FAST: [&str; 10] = [
    "--set",
    "cluster.k=3",
    "--set",
    "scan.epochs=3",
    "--set",
    "adapt.epochs=3",
    "--set",
    "adapt.hidden=16",
    "--set",
    "scan.hidden=16",
];

#[test]
fn help_exits_zero() {
    let out = ood(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pipeline"));
    assert_eq!(ood(&["ablate", "k-sweep", "--help"]).status.code(), Some(0));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = ood(&["cluster", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--input"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_benchmark(dir.path());
    let out = ood(&[
        "cluster",
        "--input",
        s(&data.join("train.emb")),
        "--out",
        s(&dir.path().join("l.json")),
        "--set",
        "cluster.bogus=1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cluster.bogus"), "{}", stderr(&out));
}

#[test]
fn dimension_mismatch_is_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_benchmark(dir.path());
    let other = dir.path().join("other.emb");
    let m = EmbeddingMatrix::new(2, 5, vec![0.5; 10]).unwrap();
    save_embeddings(&m, &DatasetManifest::describe("other", Split::TestIn, "test", &m), &other).unwrap();
    let out = ood(&[
        "score",
        "--train",
        s(&data.join("train.emb")),
        "--test",
        s(&other),
        "--scorer",
        "knn",
        "--out",
        s(&dir.path().join("scores.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("scoring stage failed") && err.contains("dimension"), "{err}");
}

#[test]
fn corrupted_input_is_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_benchmark(dir.path());
    let train = data.join("train.emb");
    let mut bytes = std::fs::read(&train).unwrap();
    let last = bytes.len() - 40;
    bytes[last] ^= 1;
    std::fs::write(&train, bytes).unwrap();
    let out = ood(&["cluster", "--input", s(&train), "--out", s(&dir.path().join("l.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn synth_writes_loadable_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_benchmark(dir.path());
    let (train, manifest) = load_embeddings(data.join("train.emb")).unwrap();
    assert_eq!((train.n(), train.d()), (150, 12));
    assert_eq!(manifest.split, Split::TrainNormal);
    let spec: Value = serde_json::from_str(&std::fs::read_to_string(data.join("spec.json")).unwrap()).unwrap();
    assert_eq!(spec["seed"], 5);
}

#[test]
fn staged_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_benchmark(dir.path());
    let p = |name: &str| dir.path().join(name);
    let train = data.join("train.emb");

    let out = ood(&[
        "cluster", "--input", s(&train), "--method", "kmeans", "--k", "3", "--seed", "1", "--out", s(&p("labels.json")),
        "--truth", s(&data.join("train_truth.json")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let (labels, head, epochs) = (p("labels.json"), p("head.ckpt"), p("epochs"));
    let mut args = vec![
        "adapt", "--input", s(&train), "--labels", s(&labels), "--epochs", "3", "--out", s(&head),
        "--save-epoch-checkpoints", s(&epochs),
    ];
    args.extend(["--set", "adapt.hidden=16"]);
    let out = ood(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_dir(p("epochs")).unwrap().count(), 3);

    for (test, name) in [("test_in.emb", "in.json"), ("test_out.emb", "out.json")] {
        let out = ood(&[
            "score", "--train", s(&train), "--test", s(&data.join(test)), "--scorer", "knn", "--k", "2", "--head",
            s(&p("head.ckpt")), "--out", s(&p(name)),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = ood(&[
        "eval", "--scores-in", s(&p("in.json")), "--scores-out", s(&p("out.json")), "--roc-csv", s(&p("roc.csv")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    let auc = result["roc_auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let roc = std::fs::read_to_string(p("roc.csv")).unwrap();
    assert!(roc.lines().count() >= 3);
}

#[test]
fn pipeline_rerun_from_report_reproduces_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_benchmark(dir.path());
    let p = |name: &str| dir.path().join(name);
    let split = |f: &str| data.join(f).to_string_lossy().into_owned();
    let (train, test_in, test_out) = (split("train.emb"), split("test_in.emb"), split("test_out.emb"));

    let mut args = vec![
        "pipeline", "--train", &train, "--test-in", &test_in, "--test-out", &test_out, "--seed", "9", "--out",
    ];
    let first = p("first.json");
    let mut first_args = args.clone();
    first_args.push(s(&first));
    first_args.extend(FAST);
    let out = ood(&first_args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("raw/knn(k=1)"));

    let second = p("second.json");
    args.truncate(args.len() - 3);
    args.extend(["--from-report", s(&first), "--out", s(&second)]);
    let out = ood(&args);
    assert!(out.status.success(), "{}", stderr(&out));

    let a = EvalReport::load(&first).unwrap();
    let b = EvalReport::load(&second).unwrap();
    assert_eq!(a.auc_table, b.auc_table);
    assert_eq!(a.config, b.config);
    assert_eq!(a.provenance["seed"], ood_core::config::Provenance::Flag);
    assert_eq!(a.provenance["adapt.epochs"], ood_core::config::Provenance::Flag);
    assert_eq!(b.provenance["adapt.epochs"], ood_core::config::Provenance::ConfigFile);
    assert_eq!(a.provenance["score.shrinkage"], ood_core::config::Provenance::Default);
}

#[test]
fn ablation_writes_reports_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_benchmark(dir.path());
    let out_path = dir.path().join("ablation.json");
    let splits = ["train.emb", "test_in.emb", "test_out.emb"].map(|f| data.join(f));
    let mut args = vec![
        "ablate", "epochs", "--train", s(&splits[0]), "--test-in", s(&splits[1]), "--test-out", s(&splits[2]),
        "--seeds", "1,2", "--out", s(&out_path),
    ];
    args.extend(FAST);
    let out = ood(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let result: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(result["reports"].as_array().unwrap().len(), 2);
    let table = result["reports"][0]["auc_table"].as_object().unwrap();
    assert_eq!(table.len(), 4);
    assert!(result["summary"]["rows"]["averaged/knn(k=1)"]["mean"].is_number());
}
