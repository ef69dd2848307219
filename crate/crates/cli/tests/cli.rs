use std::path::Path;
use std::process::{Command, Output};

use countcon::experiment::RunConfig;

fn countcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_countcon"))
        .args(args)
        .env_remove("COUNTCON_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"
seeds = [1, 2]
curve_grid = 50
[dataset]
source = "motorcycle"
[network]
hidden = [8]
activations = ["tanh", "identity"]
[constraint]
percentile = 25.0
[pm]
lr = 0.01
max_epochs = 150
[pc]
mu = 0.001
[alternation]
max_alternations = 3
"#;

#[test]
fn train_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("runs");
    let cfg = write_config(dir.path(), SMALL);
    let out = countcon(&["train", &cfg, "--output-dir", out_dir.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    for seed in [1, 2] {
        let run = out_dir.join(format!("p25-seed{seed}"));
        for file in ["report.json", "trace.jsonl", "checkpoint.json", "curve.csv"] {
            assert!(run.join(file).is_file(), "missing {file} for seed {seed}");
        }
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["m"], 33);
        assert_eq!(report["constraint_satisfied"], true);
        assert_eq!(report["curve"].as_array().unwrap().len(), 50);
    }

    // the checkpoint carries its normalization, so curves can be redrawn
    let curve = dir.path().join("curve.csv");
    let ckpt = out_dir.join("p25-seed1/checkpoint.json");
    let out = countcon(&[
        "emit-curve",
        ckpt.to_str().unwrap(),
        "--out",
        curve.to_str().unwrap(),
        "--grid",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert_eq!(
        std::fs::read_to_string(&curve).unwrap(),
        std::fs::read_to_string(out_dir.join("p25-seed1/curve.csv")).unwrap()
    );
}

#[test]
fn seed_override_replaces_config_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = countcon(&["train", &cfg, "--seeds", "7,8,9", "--print-config"]);
    assert_eq!(out.status.code(), Some(0));
    let resolved = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(resolved.seeds, vec![7, 8, 9]);
    assert_eq!(resolved.pm.patience, 50);
}

#[test]
fn delta_not_below_n_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("percentile = 25.0", "percentile = 25.0\ndelta = 133"));
    let out = countcon(&["train", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("constraint.delta"), "{}", text(&out));
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[dataset]\nsource = \"csv\"\npath = \"/nowhere/data.csv\"\ntarget_column = \"y\"\n",
    );
    let out = countcon(&["train", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("/nowhere/data.csv"), "{}", text(&out));
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("[pm]", "[pm]\nlearning_rate = 0.1"));
    let out = countcon(&["train", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("learning_rate"), "{}", text(&out));
}

#[test]
fn selfcheck_passes_and_negative_controls_fail() {
    let out = countcon(&["selfcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert_eq!(text(&out).matches("PASS").count(), 3);

    for (flag, name) in [
        ("--inject-gradient-fault", "gradient-check"),
        ("--inject-pinball-fault", "pinball-identity"),
        ("--inject-distance-fault", "proposition-1-oracle"),
    ] {
        let out = countcon(&["selfcheck", flag, "1e-3"]);
        assert_eq!(out.status.code(), Some(1), "{flag}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(name), "{flag}: {stderr}");
    }
}

#[test]
fn print_config_emits_the_motorcycle_preset() {
    let out = countcon(&["print-config", "--percentile", "90"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::motorcycle(Some(90.0), vec![1]));
}

#[test]
fn reproduce_assembles_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = countcon(&[
        "reproduce-motorcycle",
        "--output-dir",
        dir.path().to_str().unwrap(),
        "--seeds",
        "1",
        "--percentiles",
        "25",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("table.json")).unwrap()).unwrap();
    // two runs plus one median row per label
    assert_eq!(table["rows"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("table.md").is_file());
}
