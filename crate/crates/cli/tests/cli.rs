use std::path::Path;
use std::process::{Command, Output};

fn bru(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bru")).args(args).output().unwrap()
}

fn bru_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bru")).args(args).env(key, value).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const CUE_SPEC: &str = r#"{
    "network": {"cell": "GRU", "layers": 1, "hidden": 6, "input_dim": 2, "num_classes": 2},
    "task": {"delayed_cue": {"steps": 8, "gap": 2}},
    "sizes": {"train": 60, "val": 20, "test": 20},
    "epochs": 2,
    "batch_size": 10,
    "seeds": [3]
}"#;

#[test]
fn oracle_check_exit_codes() {
    let empty = bru(&["oracle-check", "--trials", "0"]);
    assert_eq!(code(&empty), 0);
    assert!(stdout(&empty).contains("trials=0"));

    let full = bru(&["oracle-check", "--trials", "1000", "--tmax", "6", "--seed", "1"]);
    assert_eq!(code(&full), 0, "{}", stderr(&full));
    let summary = stdout(&full).lines().last().unwrap().to_string();
    let err: f64 = summary.split("max_filter_err=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(err < 1e-12);

    let broken = bru(&["oracle-check", "--trials", "10", "--corrupt-filter"]);
    assert_eq!(code(&broken), 1);
    let replay = stderr(&broken).lines().last().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&replay).unwrap();
    assert!(v.get("fractional").is_some() && v.get("binary").is_some());

    assert!(!stdout(&bru(&["oracle-check", "--help"])).contains("corrupt"));
    assert_eq!(code(&bru(&["oracle-check", "--tmax", "40"])), 2);
}

#[test]
fn grad_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let bru17 = bru(&["grad-check", "--cell", "BRU", "--seed", "17", "--out-dir", &out]);
    assert_eq!(code(&bru17), 0, "{}", stdout(&bru17));
    let report = std::fs::read_to_string(dir.path().join("gradreport.txt")).unwrap();
    assert!(report.contains("layers.0.forward.W_hz") && report.contains("readout.W_out"));

    assert_eq!(code(&bru(&["grad-check", "--cell", "GRU"])), 0);
    assert_eq!(code(&bru(&["grad-check", "--cell", "LBRU", "--tol", "1e-12"])), 1);
    assert_eq!(code(&bru(&["grad-check", "--cell", "RNN"])), 2);
}

#[test]
fn param_audit_examples() {
    let dir = tempfile::tempdir().unwrap();
    let ubru = write(
        dir.path(),
        "ubru.json",
        r#"{"cell": "UBRU", "layers": 1, "hidden": 3, "input_dim": 2, "num_classes": 2}"#,
    );
    let o = bru(&["param-audit", "--config", &ubru, "--assert-parity"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("UBRU=57 GRU=57"));
    assert!(stdout(&o).contains("LBRU=90 Bi-GRU=114"));

    let spec = write(dir.path(), "spec.json", CUE_SPEC);
    assert_eq!(code(&bru(&["param-audit", "--config", &spec])), 0);

    let malformed = write(dir.path(), "bad.json", r#"{"cell": "UBRU", "layers": 1,"#);
    let o = bru(&["param-audit", "--config", &malformed]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("malformed JSON"));

    let unknown = write(
        dir.path(),
        "unknown.json",
        r#"{"cell": "GRU", "layers": 1, "hidden": 3, "input_dim": 2, "num_classes": 2, "width": 9}"#,
    );
    assert_eq!(code(&bru(&["param-audit", "--config", &unknown])), 2);
    let zero = write(dir.path(), "zero.json", r#"{"cell": "GRU", "layers": 0, "hidden": 3, "input_dim": 2, "num_classes": 2}"#);
    assert_eq!(code(&bru(&["param-audit", "--config", &zero])), 2);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", CUE_SPEC);
    let run = dir.path().join("run");
    let run_s = run.display().to_string();
    let o = bru(&["train", "--spec", &spec, "--out-dir", &run_s, "--save-data"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,split,loss,accuracy,lr,seconds,seed"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 + 1);
    for f in ["checkpoint.json", "train.jsonl", "val.jsonl", "test.jsonl"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let ckpt = run.join("checkpoint.json").display().to_string();
    let data = run.join("test.jsonl").display().to_string();
    let from_file = bru(&["eval", "--checkpoint", &ckpt, "--data", &data]);
    let from_spec = bru(&["eval", "--checkpoint", &ckpt, "--spec", &spec]);
    assert_eq!(code(&from_file), 0, "{}", stderr(&from_file));
    assert_eq!(code(&from_spec), 0, "{}", stderr(&from_spec));
    let acc = |s: String| s.split("accuracy=").nth(1).unwrap().split_whitespace().next().unwrap().to_string();
    assert_eq!(acc(stdout(&from_file)), acc(stdout(&from_spec)));

    let missing = dir.path().join("nope.json").display().to_string();
    assert_eq!(code(&bru(&["eval", "--checkpoint", &missing, "--spec", &spec])), 2);
    assert_eq!(code(&bru(&["eval", "--checkpoint", &ckpt])), 2);
}

#[test]
fn train_requires_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", CUE_SPEC);
    let o = bru(&["train", "--spec", &spec]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--out-dir"));
}

#[test]
fn unknown_spec_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", &CUE_SPEC.replace("\"epochs\"", "\"epoch_count\""));
    let o = bru(&["train", "--spec", &spec, "--out-dir", &dir.path().display().to_string()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epoch_count"));
}

#[test]
fn compare_single_seed_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let text = CUE_SPEC.replace("\"seeds\": [3]", "\"seeds\": [3], \"architectures\": [\"Uni-GRU\", \"UBRU\", \"Bi-GRU\"]");
    let spec = write(dir.path(), "spec.json", &text);
    let out = dir.path().join("cmp");
    let out_s = out.display().to_string();
    let o = bru_env(&["compare", "--spec", &spec, "--out-dir", &out_s], "BRU_THREADS", "2");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("architecture,param_count,runs,mean_accuracy,median_accuracy,interval_half_width"));
    assert_eq!(summary.lines().count(), 4);
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 4);
    assert!(out.join("runs/Bi-GRU-seed3/metrics.csv").is_file());
    // One seed: the spread across seeds is zero, the pooled interval is not.
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[6], "0.0");
    assert!(row[5].parse::<f64>().unwrap() > 0.0);

    let bad = bru_env(&["compare", "--spec", &spec, "--out-dir", &out_s], "BRU_THREADS", "many");
    assert_eq!(code(&bad), 2);
}

#[test]
fn compare_assert_ordering_on_delayed_cue() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
        "network": {"cell": "GRU", "layers": 1, "hidden": 8, "input_dim": 2, "num_classes": 2},
        "task": {"delayed_cue": {"steps": 12, "gap": 3}},
        "sizes": {"train": 300, "val": 100, "test": 100},
        "optimizer": {"lr": 0.02},
        "epochs": 6,
        "batch_size": 16,
        "seeds": [1],
        "architectures": ["Uni-GRU", "UBRU", "LBRU", "Bi-GRU"]
    }"#;
    let spec = write(dir.path(), "spec.json", text);
    let o = bru(&["compare", "--spec", &spec, "--out-dir", &dir.path().display().to_string(), "--assert-ordering"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    let table = stdout(&o);
    assert!(table.lines().nth(4).unwrap().starts_with("Uni-GRU"), "{table}");
}

#[test]
fn shipped_experiment_specs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            bru_cli::ExperimentSpec::load(&path).unwrap();
        }
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&bru(&[])), 2);
    assert_eq!(code(&bru(&["frobnicate"])), 2);
}
