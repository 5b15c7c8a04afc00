use std::path::Path;
use std::process::{Command, Output};

use csi_bench::data::csd::read_csd_file;
use csi_bench::data::PostureLabel;
use csi_bench::model::{train_model, ModelKind, ModelSpec, TrainedModel};

const BIN: &str = env!("CARGO_BIN_EXE_csi-bench");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("CSI_BENCH_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    o
}

fn small_a(dir: &Path) {
    ok(dir, &["gen", "--env", "A", "--per-class", "8", "--seed", "3", "--out", "a.csd"]);
}

#[test]
fn gen_sizes_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_a(d);
    let a = read_csd_file(&d.join("a.csd")).unwrap();
    assert_eq!(a.len(), 24);
    assert_eq!(a.class_counts(), [8; 3]);
    assert_eq!(a.env_id, "A");
    let first = std::fs::read(d.join("a.csd")).unwrap();
    let manifest = std::fs::read(d.join("a.csd.manifest.json")).unwrap();
    small_a(d);
    assert_eq!(std::fs::read(d.join("a.csd")).unwrap(), first);
    assert_eq!(std::fs::read(d.join("a.csd.manifest.json")).unwrap(), manifest);

    ok(d, &["gen", "--env", "b", "--per-class", "100", "--out", "b.csd"]);
    let b = read_csd_file(&d.join("b.csd")).unwrap();
    assert_eq!((b.len(), b.env_id.as_str()), (300, "B"));
}

#[test]
fn manifest_records_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = Command::new(BIN)
        .current_dir(d)
        .env("CSI_BENCH_THREADS", "1")
        .args(["gen", "--env", "A", "--per-class", "2", "--out", "x.csd"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("x.csd.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["schema"], 1);
    assert_eq!(m["command"], "gen");
    assert_eq!(m["threads"], 1);
    assert_eq!(m["config"]["seed"], 42);
    assert_eq!(m["config"]["per_class"], 2);
    assert_eq!(m["outputs"][0], "x.csd");
}

#[test]
fn convert_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_a(d);
    let o = ok(d, &["convert", "--input", "a.csd", "--output", "a.npy"]);
    assert!(stderr(&o).contains("labels"), "{}", stderr(&o));
    ok(d, &["convert", "--input", "a.npy", "--output", "back.csd", "--labels-from", "a.csd"]);
    assert_eq!(std::fs::read(d.join("a.csd")).unwrap(), std::fs::read(d.join("back.csd")).unwrap());

    ok(d, &["convert", "--input", "a.npy", "--output", "sit.csd", "--label", "sit", "--env-id", "lab"]);
    let sit = read_csd_file(&d.join("sit.csd")).unwrap();
    assert_eq!(sit.env_id, "lab");
    assert!(sit.labels().iter().all(|&l| l == PostureLabel::Sit));

    assert_eq!(code(&run(d, &["convert", "--input", "a.csd", "--output", "a.txt"])), 2);
    assert_eq!(code(&run(d, &["convert", "--input", "a.npy", "--output", "c.csd"])), 2);
    std::fs::write(d.join("bad.npy"), b"\x93NUMPY garbage").unwrap();
    assert_eq!(code(&run(d, &["convert", "--input", "bad.npy", "--output", "c.csd", "--label", "sit"])), 3);
}

#[test]
fn all_model_names_train_and_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_a(d);
    let data = read_csd_file(&d.join("a.csd")).unwrap();
    for kind in ModelKind::ALL {
        let out = format!("{}.csm", kind.name());
        ok(
            d,
            &[
                "train", "--model", kind.name(), "--data", "a.csd", "--set", "all", "--seed", "9", "--out", &out, "--trees", "7",
                "--epochs", "2",
            ],
        );
        let loaded = TrainedModel::load(&d.join(&out)).unwrap();
        assert_eq!(loaded.kind(), kind);
        let mut spec = ModelSpec::new(kind, 9);
        spec.forest.n_trees = 7;
        spec.cnn.epochs = 2;
        let in_process = train_model(&spec, &data).unwrap();
        assert_eq!(loaded.predict_all(&data.samples), in_process.predict_all(&data.samples), "{kind}");
        assert!(d.join(format!("{out}.manifest.json")).exists());
    }
}

#[test]
fn unknown_model_is_a_usage_error_listing_choices() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--model", "svm", "--data", "a.csd", "--out", "m.csm"]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    for name in ["lda", "nbsvm", "ksvm", "forest", "cnn"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn perfect_model_evaluates_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_a(d);
    ok(d, &["train", "--model", "lda", "--data", "a.csd", "--set", "all", "--out", "lda.csm"]);
    ok(d, &["eval", "--model", "lda.csm", "--data", "a.csd", "--out", "r/report.json"]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r/report.json")).unwrap()).unwrap();
    assert_eq!(r["schema"], 1);
    assert_eq!(r["report"]["accuracy"], 1.0);
    for c in 0..3 {
        assert_eq!(r["report"]["per_class"][c]["f1"], 1.0);
    }
    let csv = std::fs::read_to_string(d.join("r/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(d.join("r/report.json.manifest.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_a(d);
    // Too few samples per class for the validation split.
    assert_eq!(code(&run(d, &["train", "--model", "lda", "--data", "a.csd", "--set", "F", "--out", "m.csm"])), 4);
    assert_eq!(code(&run(d, &["train", "--model", "lda", "--data", "a.csd", "--set", "Q", "--out", "m.csm"])), 2);
    assert_eq!(code(&run(d, &["train", "--model", "lda", "--data", "missing.csd", "--out", "m.csm"])), 3);
    ok(d, &["train", "--model", "lda", "--data", "a.csd", "--set", "all", "--out", "m.csm"]);
    std::fs::write(d.join("junk.csd"), b"CSD1 not really").unwrap();
    assert_eq!(code(&run(d, &["eval", "--model", "m.csm", "--data", "junk.csd", "--out", "r.json"])), 3);
    assert_eq!(code(&run(d, &["frobnicate"])), 2);
    assert_eq!(code(&run(d, &["gen", "--env", "C", "--out", "c.csd"])), 2);
    assert_eq!(code(&run(d, &["--help"])), 0);
}

#[test]
fn curve_and_crossenv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--env", "A", "--per-class", "2000", "--seed", "42", "--out", "a.csd"]);
    ok(d, &["gen", "--env", "B", "--per-class", "100", "--seed", "42", "--out", "b.csd"]);
    ok(
        d,
        &["curve", "--data", "a.csd", "--out-dir", "curve", "--models", "lda,forest", "--trees", "5", "--save-models"],
    );
    let curve: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("curve/curve.json")).unwrap()).unwrap();
    assert_eq!(curve["cells"].as_array().unwrap().len(), 12);
    assert_eq!(curve["validation_size"], 600);
    assert_eq!(std::fs::read_to_string(d.join("curve/curve.csv")).unwrap().lines().count(), 13);
    assert!(d.join("curve/manifest.json").exists());
    assert!(d.join("curve/models/lda.csm").exists() && d.join("curve/models/forest.csm").exists());

    let args = [
        "crossenv", "--train-data", "a.csd", "--data", "b.csd", "--out-dir", "x", "--models", "lda,forest", "--models-dir",
        "curve/models",
    ];
    ok(d, &args);
    let x: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("x/crossenv.json")).unwrap()).unwrap();
    assert_eq!(x["samples"], 300);
    assert_eq!(x["reports"].as_array().unwrap().len(), 2);
    assert_eq!(x["control"]["model"], "control");
    let first = std::fs::read(d.join("x/crossenv.json")).unwrap();
    ok(d, &args);
    assert_eq!(std::fs::read(d.join("x/crossenv.json")).unwrap(), first);

    // Models loaded from disk must be the kind their file name says.
    std::fs::copy(d.join("curve/models/lda.csm"), d.join("curve/models/forest.csm")).unwrap();
    assert_eq!(code(&run(d, &args)), 3);
    assert_eq!(code(&run(d, &["curve", "--data", "a.csd", "--out-dir", "c2", "--models", "lda,lda"])), 2);
}
