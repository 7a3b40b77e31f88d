use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use surrogate_core::oracle::OutputSchema;
use surrogate_core::sampling::InputSchema;
use surrogate_core::{OracleCoefficients, Tensor};

fn surrogate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surrogate"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = surrogate(args);
    assert!(
        out.status.success(),
        "surrogate {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> (i32, String) {
    let out = surrogate(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

/// A sampled and simulated toy dataset of `n` scenarios.
fn toy_data(dir: &Path, n: usize) -> PathBuf {
    let data = dir.join("data.csv");
    ok(&["sample", "--n", &n.to_string(), "--out", s(&data)]);
    ok(&["simulate", "--data", s(&data)]);
    data
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn toy_simulation_has_one_column_per_input_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path(), 10);
    let (header, rows) = read_table(&data);
    assert_eq!(header.len(), 2 + 12 + 48);
    assert_eq!(&header[..3], ["scenario_id", "split", "x_0"]);
    assert_eq!(header.last().unwrap(), "y_47");
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.len() == 62));
}

#[test]
fn simulated_values_match_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path(), 12);
    let (_, rows) = read_table(&data);
    let oracle = OracleCoefficients::<f64>::generate(0, &OutputSchema::toy(), &InputSchema::default()).unwrap();
    for row in &rows {
        let x: Vec<f64> = row[2..14].iter().map(|v| v.parse().unwrap()).collect();
        let y = oracle.eval_batch(&Tensor::from_rows(&[x]).unwrap()).unwrap();
        for (j, field) in row[14..].iter().enumerate() {
            assert_eq!(field.parse::<f64>().unwrap(), y.get(0, j));
        }
    }
}

#[test]
fn sampling_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for strategy in ["lhs", "dgsm"] {
        let a = dir.path().join(format!("{strategy}_a.csv"));
        let b = dir.path().join(format!("{strategy}_b.csv"));
        for out in [&a, &b] {
            ok(&["sample", "--strategy", strategy, "--n", "50", "--n-base", "7", "--seed", "3", "--out", s(out)]);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(
            std::fs::read(a.with_extension("meta.json")).unwrap(),
            std::fs::read(b.with_extension("meta.json")).unwrap()
        );
    }
    let dgsm = dir.path().join("dgsm_a.csv");
    let (_, rows) = read_table(&dgsm);
    assert_eq!(rows.len(), 7 * 10);
    assert!(rows.iter().all(|r| r[1] == "test"));
}

#[test]
fn split_ratios_are_respected() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path(), 100);
    ok(&["split", "--data", s(&data), "--train", "0.6", "--val", "0.2", "--test", "0.2", "--seed", "9"]);
    let (_, rows) = read_table(&data);
    let count = |name: &str| rows.iter().filter(|r| r[1] == name).count();
    assert_eq!((count("train"), count("val"), count("test")), (60, 20, 20));
}

#[test]
fn exit_codes_distinguish_usage_missing_and_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");

    assert_eq!(code(&["sample", "--bogus"]).0, 2);
    assert_eq!(code(&["sample", "--n", "5", "--out", s(&missing)]).0, 2);
    let bad_config = write_config(dir.path(), r#"{"sead": 1}"#);
    assert_eq!(code(&["sample", "--config", s(&bad_config), "--out", s(&missing)]).0, 2);

    let (c, err) = code(&["simulate", "--data", s(&missing)]);
    assert_eq!(c, 3);
    assert!(err.contains("surrogate sample"), "{err}");

    let raw = dir.path().join("raw.csv");
    ok(&["sample", "--n", "20", "--out", s(&raw)]);
    let model = dir.path().join("m.json");
    let (c, err) = code(&["train", "--data", s(&raw), "--out", s(&model)]);
    assert_eq!(c, 3);
    assert!(err.contains("surrogate simulate"), "{err}");
    let (c, err) = code(&["evaluate", "--model", s(&model), "--data", s(&raw), "--out", "x.json"]);
    assert_eq!(c, 3);
    assert!(err.contains("surrogate train"), "{err}");
    let (c, err) = code(&[
        "report",
        "--evaluation",
        s(&dir.path().join("eval.json")),
        "--sensitivity",
        s(dir.path()),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(c, 3);
    assert!(err.contains("surrogate evaluate"), "{err}");

    ok(&["simulate", "--data", s(&raw)]);
    ok(&["simulate", "--data", s(&raw)]);
    let (c, err) = code(&["simulate", "--data", s(&raw), "--oracle-seed", "5"]);
    assert_eq!(c, 4);
    assert!(err.contains("--force"), "{err}");
    ok(&["simulate", "--data", s(&raw), "--oracle-seed", "5", "--force"]);

    std::fs::write(&raw, "scenario_id,split\n").unwrap();
    assert_eq!(code(&["train", "--data", s(&raw), "--out", s(&model)]).0, 4);
}

#[test]
fn dgsm_datasets_are_never_trained_on_or_split() {
    let dir = tempfile::tempdir().unwrap();
    let dgsm = dir.path().join("dgsm.csv");
    ok(&["sample", "--strategy", "dgsm", "--n-base", "5", "--out", s(&dgsm)]);
    ok(&["simulate", "--data", s(&dgsm)]);
    let (c, err) = code(&["train", "--data", s(&dgsm), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(c, 4);
    assert!(err.contains("DGSM"), "{err}");
    assert_eq!(code(&["split", "--data", s(&dgsm)]).0, 4);
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path(), 60);
    let mut bytes = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        ok(&["train", "--data", s(&data), "--out", s(&out), "--epochs", "3", "--hidden", "16,16"]);
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let losses = std::fs::read_to_string(dir.path().join("a.losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 3);
    assert!(losses.starts_with("epoch,train_loss,val_loss"));

    let preds = dir.path().join("pred.csv");
    ok(&["predict", "--model", s(&dir.path().join("a.json")), "--data", s(&data), "--out", s(&preds)]);
    let (header, rows) = read_table(&preds);
    assert_eq!((header.len(), rows.len()), (1 + 48, 60));
}

#[test]
fn search_writes_a_sorted_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path(), 60);
    let model = dir.path().join("m.json");
    ok(&[
        "train", "--data", s(&data), "--out", s(&model), "--epochs", "2", "--hidden", "8", "--hpo", "3", "--hpo-epochs",
        "2",
    ]);
    let (header, rows) = read_table(&dir.path().join("m.leaderboard.csv"));
    assert_eq!(header[..2], ["rank", "val_mse"]);
    assert_eq!(rows.len(), 3);
    let mse: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(mse.windows(2).all(|w| w[0] <= w[1]));
    assert!(model.is_file());
}

#[test]
fn report_has_two_rows_of_four_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"sampler": {"n_lhs": 120, "n_base": 12}, "model": {"hidden_layers": [16]}, "train": {"epochs": 3}}"#,
    );
    let work = dir.path().join("run");
    ok(&["run", "--config", s(&config), "--workdir", s(&work)]);
    let report = std::fs::read_to_string(work.join("report/report.txt")).unwrap();
    let lines: Vec<&str> = report.lines().take(3).collect();
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["Region", "Year", "Quantity", "Overall"]);
    for (line, name) in lines[1..].iter().zip(["Predictions", "Sensitivity"]) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields[0], name);
        assert_eq!(fields.len(), 5);
        assert!(fields[1..].iter().all(|v| v.parse::<f64>().is_ok()), "{line}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(work.join("report/metrics.json")).unwrap()).unwrap();
    assert!(metrics.get("seconds").is_none() && metrics.get("config").is_none());
    assert_eq!(metrics["evaluated_outputs"].as_u64().unwrap() + metrics["excluded_outputs"].as_u64().unwrap(), 48);
}

#[test]
fn full_schema_heatmaps_have_one_cell_per_input_and_group() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"outputs": "full", "sampler": {"n_lhs": 20, "n_base": 3}, "model": {"hidden_layers": [8]}, "train": {"epochs": 1}}"#,
    );
    let work = dir.path().join("run");
    ok(&["run", "--config", s(&config), "--workdir", s(&work)]);
    for (axis, groups) in [("quantity", 44), ("region", 32), ("year", 16)] {
        let svg = std::fs::read_to_string(work.join(format!("report/heatmap_{axis}.svg"))).unwrap();
        assert_eq!(svg.matches(r#"<g class="panel""#).count(), 2);
        assert_eq!(svg.matches(r#"class="cell""#).count(), 2 * 9 * groups, "{axis}");
        let (header, rows) = read_table(&work.join(format!("report/sensitivity_{axis}_emulator.csv")));
        assert_eq!((header.len(), rows.len()), (1 + groups, 9));
    }
    let (header, _) = read_table(&work.join("data.csv"));
    assert_eq!(header.len(), 22542);
}
