use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedsurv::io::{dataset_to_csv, load_csv_dataset};

fn fedsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsurv")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"
seed = 11
schemes = ["POOL", "MINI", "N_FL", "DT_FL"]

[synthetic]
n_centers = 3
per_center = 40
dim = 4

[training]
rounds = 60
batch_size = 32

[cv]
folds = 3
repeats = 2
"#;

#[test]
fn generated_data_round_trips_through_the_reader() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("gen");
    let status = fedsurv(&["generate", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let written = fs::read_to_string(out.join("data.csv")).unwrap();
    let (data, partition) = load_csv_dataset(&out.join("data.csv")).unwrap();
    assert_eq!(data.len(), 120);
    assert_eq!(dataset_to_csv(&data, &partition).unwrap(), written);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 11);
}

#[test]
fn cv_is_reproducible_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let output = fedsurv(&["cv", "--config", &config, "--out", out.to_str().unwrap(), "--threads", "2"]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        fs::read_to_string(out.join("results.csv")).unwrap()
    };
    let (first, second) = (run("a"), run("b"));
    assert_eq!(first, second);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "repeat,fold_or_center,scheme,c_index,train_seconds,comm_values_down,comm_values_up,error");
    // schemes × repeats × folds
    assert_eq!(lines.len() - 1, 4 * 2 * 3);
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        let c: f64 = fields[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&c));
        assert!(fields[4].is_empty());
    }
}

#[test]
fn cv_reads_a_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("gen");
    assert!(fedsurv(&["generate", "--config", &config, "--out", out.to_str().unwrap()]).status.success());
    let from_file = "schemes = [\"POOL\"]\n[data]\npath = \"gen/data.csv\"\n[cv]\nfolds = 3\n";
    let config = write_config(dir.path(), from_file);
    let out = dir.path().join("cv");
    let output = fedsurv(&["cv", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 4);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["nonsense = 1\n", "[training]\nroudns = 5\n", "[training.optimizer]\nkind = \"adam\"\nlr = 0.1\n", "schemes = []\n", "[data]\npath = \"missing.csv\"\n", "[training]\nbatch_size = \"big\"\n"] {
        let config = write_config(dir.path(), text);
        let output = fedsurv(&["train", "--config", &config, "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(output.status.code(), Some(2), "{text}: {}", String::from_utf8_lossy(&output.stderr));
        assert!(!output.stderr.is_empty());
    }
}

#[test]
fn malformed_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "time,event,center,x0\n1,1,a,0\n2,7,a,1\n").unwrap();
    let config = write_config(dir.path(), "[data]\npath = \"bad.csv\"\n");
    let output = fedsurv(&["train", "--config", &config, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("row 2"));
}

#[test]
fn attack_demo_reports_exact_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let output = fedsurv(&["attack-demo", "--seed", "4", "--out", dir.path().to_str().unwrap()]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("false reconstructions 0"), "{stdout}");
    assert!(stdout.contains("planted individual recovered"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("attack.json")).unwrap()).unwrap();
    assert!(report["max_error"].as_f64().unwrap() < 1e-9);
}

#[test]
fn appendix_check_prints_a_shrinking_table() {
    let dir = tempfile::tempdir().unwrap();
    let output = fedsurv(&["appendix-a-check", "--out", dir.path().to_str().unwrap()]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let gaps: Vec<f64> = stdout
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(gaps.len(), 4);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn train_writes_one_entry_per_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let output = fedsurv(&["train", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let models: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("models.json")).unwrap()).unwrap();
    let entries = models.as_array().unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries.iter().all(|e| e["error"].is_null()));
    assert_eq!(entries[3]["scheme"], "DT_FL");
}
