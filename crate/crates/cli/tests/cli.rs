use std::path::Path;
use std::process::{Command, Output};

use glister_cli::run::{read_summary, SUMMARY_FILE};
use glister_core::active::ActiveTrace;
use glister_core::glister::RunTrace;
use serde_json::json;

fn glister(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glister")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, value: serde_json::Value) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, value.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_run(strategies: &[&str]) -> serde_json::Value {
    json!({
        "schema_version": 1,
        "dataset": {"source": "synthetic", "kind": "separable-2", "n_per_class": 30},
        "model": {"kind": "mlp", "hidden": 8},
        "strategies": strategies,
        "budgets": [0.1, 0.2, 0.3],
        "seeds": [0, 1, 2],
        "epochs": 6,
        "select_every": 2,
        "output_dir": "out",
    })
}

#[test]
fn run_writes_one_trace_per_cell_and_a_consistent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small_run(&["glister", "random", "full"]));
    let out = glister(&["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out_dir = dir.path().join("out");
    let rows = read_summary(&out_dir.join(SUMMARY_FILE)).unwrap();
    // 2 subset strategies x 3 budgets x 3 seeds, plus one full run per seed
    assert_eq!(rows.len(), 18 + 3);
    assert_eq!(rows.iter().filter(|r| r.strategy == "full").count(), 3);
    let csvs = std::fs::read_dir(&out_dir).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")
    });
    assert_eq!(csvs.count(), 21);

    for row in &rows {
        let text = std::fs::read_to_string(out_dir.join(&row.trace_file)).unwrap();
        let trace = RunTrace::parse_csv(&text).unwrap();
        assert_eq!(trace.len(), 6);
        let last = &trace[5];
        assert_eq!(row.epochs, 6);
        assert_eq!(last.test_acc, row.final_test_acc);
        assert_eq!(last.val_loss, row.final_val_loss);
        assert_eq!(last.subset_digest, row.subset_digest);
        assert_eq!(last.wall_s, row.total_wall_s);
        if row.strategy == "full" {
            assert_eq!(row.k, 60);
        }
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = small_run(&["glister"]);
    bad["surprise"] = json!(1);
    let cfg = write_config(dir.path(), bad);
    let out = glister(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));

    let missing = dir.path().join("nope.json");
    assert_eq!(glister(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(glister(&["verify", "--suite", "bogus"]).status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_glister"))
        .args(["verify", "--suite", "gradients"])
        .env("GLISTER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_gradients_passes() {
    let out = glister(&["verify", "--suite", "gradients"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn active_traces_count_labels_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({
            "schema_version": 1,
            "dataset": {"source": "synthetic", "kind": "separable-2", "n_per_class": 40},
            "model": {"kind": "logistic"},
            "strategies": ["glister", "random", "fass"],
            "rounds": 3,
            "batch": 5,
            "epochs_per_round": 5,
            "initial_labeled": 4,
            "seeds": [7],
            "output_dir": "active",
        }),
    );
    let out = glister(&["active", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in ["glister", "random", "fass"] {
        let text = std::fs::read_to_string(dir.path().join("active").join(format!("active_{s}_s7.csv"))).unwrap();
        let trace = ActiveTrace::parse_csv(&text).unwrap();
        let counts: Vec<usize> = trace.records.iter().map(|r| r.labeled_count).collect();
        assert_eq!(counts, vec![9, 14, 19], "{s}");
    }
    assert!(dir.path().join("active/active_summary.json").exists());
}

#[test]
fn bench_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.json");
    let out = glister(&["bench", "--n", "300", "--d", "4", "--k", "30", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2]["k"], 300);
}
