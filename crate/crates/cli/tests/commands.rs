use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn s2vgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2vgd"))
        .args(args)
        .env_remove("S2VGD_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = s2vgd(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_seconds");
    v
}

#[test]
fn regress_smoke_writes_artifacts_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let out = out.to_str().unwrap();
        ok(&["regress", "--dataset", "synthetic", "--hidden", "100", "--M", "20", "--K", "1", "--seed", "7", "--epochs", "20", "--out", out]);
    }
    for f in ["metrics.csv", "summary.json", "checkpoint.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let sa = json(&a.join("summary.json"));
    assert!(sa["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(without_wall_time(sa), without_wall_time(json(&b.join("summary.json"))));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(csv_rows(&a.join("metrics.csv")).len(), 20);
}

#[test]
fn summary_echoes_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["regress", "--seed", "1", "--epochs", "1", "--out", dir.path().to_str().unwrap()]);
    let config = &json(&dir.path().join("summary.json"))["config"];
    assert_eq!(config["training"]["k"], 1);
    assert_eq!(config["training"]["particles"], 20);
    assert_eq!(config["training"]["hidden"], serde_json::json!([100]));
    assert_eq!(config["seed"], 1);
    let ck = json(&dir.path().join("checkpoint.json"));
    assert_eq!(ck["particles"].as_array().unwrap().len(), 20);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 3, "training": {"particles": 4, "epochs": 2, "hidden": [8]}}"#).unwrap();
    let out = dir.path().join("out");
    ok(&["regress", "--config", cfg.to_str().unwrap(), "--M", "3", "--out", out.to_str().unwrap()]);
    let config = &json(&out.join("summary.json"))["config"];
    assert_eq!(config["seed"], 3);
    assert_eq!(config["training"]["particles"], 3);
    assert_eq!(config["training"]["hidden"], serde_json::json!([8]));
    assert_eq!(config["training"]["epochs"], 2);
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_s2vgd"))
        .args(["rl", "--seed", "1", "--iters", "1", "--M", "2", "--episodes", "1"])
        .env("S2VGD_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(dir.path().join("metrics.csv").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(s2vgd(&["regress", "--epochs", "1", "--out", out]).status.code(), Some(2), "missing seed");
    assert_eq!(s2vgd(&["regress", "--seed", "1", "--frobnicate", "--out", out]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "training": {"particle": 3}}"#).unwrap();
    assert_eq!(s2vgd(&["regress", "--config", cfg.to_str().unwrap(), "--out", out]).status.code(), Some(2), "unknown key");
    assert_eq!(s2vgd(&["regress", "--seed", "1", "--activation", "sigmoid", "--out", out]).status.code(), Some(2));
    assert_eq!(s2vgd(&["bandit", "--seed", "1", "--method", "softmax", "--out", out]).status.code(), Some(2));
    let missing = dir.path().join("missing.csv");
    assert_eq!(s2vgd(&["regress", "--seed", "1", "--dataset", missing.to_str().unwrap(), "--out", out]).status.code(), Some(3));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,y\n1,2\nx,3\n").unwrap();
    assert_eq!(s2vgd(&["regress", "--seed", "1", "--dataset", bad.to_str().unwrap(), "--out", out]).status.code(), Some(3));
    assert_eq!(s2vgd(&["regress", "--seed", "1", "--epochs", "2", "--epsilon", "1e300", "--out", out]).status.code(), Some(4));
}

#[test]
fn regress_on_csv_with_categorical_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let mut text = String::from("x,c,y\n");
    for i in 0..30 {
        let x = i as f64 / 10.0;
        text.push_str(&format!("{x},{},{}\n", ["a", "b"][i % 2], 2.0 * x + (i % 2) as f64));
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "regress", "--seed", "2", "--dataset", csv.to_str().unwrap(), "--categorical", "c", "--epochs", "5", "--M", "3", "--hidden", "8",
        "--out", out.to_str().unwrap(),
    ]);
    let s = json(&out.join("summary.json"));
    assert!(s["results"]["test_rmse"].as_f64().unwrap().is_finite());
    assert!(s["results"].get("epistemic").is_none());
    let ck = json(&out.join("checkpoint.json"));
    assert_eq!(ck["spec"]["layer_dims"], serde_json::json!([3, 8, 1]));
}

#[test]
fn classify_toy_task() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["classify", "--seed", "1", "--epochs", "300", "--out", dir.path().to_str().unwrap()]);
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["results"]["train_accuracy"], 1.0);
    let grid = csv_rows(&dir.path().join("grid.csv"));
    assert_eq!(grid.len(), 81 * 81);
    assert!(grid.iter().all(|r| r[0].abs() <= 4.0 + 1e-9 && r[1].abs() <= 4.0 + 1e-9));
    for r in &grid {
        assert!((r[2] + r[3] - 1.0).abs() < 1e-12, "{r:?}");
    }
    let header = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(header.starts_with("epoch,train_log_posterior,test_accuracy,test_log_likelihood\n"));
}

#[test]
fn classify_builds_two_hidden_layer_net_from_digit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("digits.csv");
    let mut text = String::from("label");
    for p in 0..784 {
        text.push_str(&format!(",px{p}"));
    }
    text.push('\n');
    for row in 0..20 {
        text.push_str(&(row % 10).to_string());
        for p in 0..784 {
            text.push_str(if (p + row) % 7 == 0 { ",255" } else { ",0" });
        }
        text.push('\n');
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "classify", "--seed", "1", "--dataset", csv.to_str().unwrap(), "--target-column", "label", "--hidden", "400,400", "--M", "2",
        "--epochs", "1", "--train-fraction", "0.5", "--out", out.to_str().unwrap(),
    ]);
    let ck = json(&out.join("checkpoint.json"));
    assert_eq!(ck["spec"]["layer_dims"], serde_json::json!([784, 400, 400, 10]));
    assert!(!out.join("grid.csv").exists());
}

#[test]
fn bandit_regret_and_greedy_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&[
        "bandit", "--env", "mushroom_synthetic", "--steps", "150", "--method", "stein_thompson,greedy,eps_greedy:0", "--M", "4", "--seed", "3",
        "--out", out.to_str().unwrap(),
    ]);
    let regret: Vec<f64> = csv_rows(&out.join("regret_stein_thompson.csv")).iter().map(|r| r[4]).collect();
    assert_eq!(regret.len(), 150);
    assert!(regret.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(
        fs::read(out.join("regret_greedy.csv")).unwrap(),
        fs::read(out.join("regret_eps_greedy_0.csv")).unwrap()
    );
    let s = json(&out.join("summary.json"));
    assert_eq!(s["results"]["greedy"], s["results"]["eps_greedy:0"]);
}

#[test]
fn multi_seed_driver_aggregates_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["bandit", "--steps", "40", "--M", "2", "--seed", "10", "--seeds", "5", "--out", out.to_str().unwrap()]);
    let top = json(&out.join("summary.json"));
    assert_eq!(top["seeds"], serde_json::json!([10, 11, 12, 13, 14]));
    for method in ["stein_thompson", "greedy"] {
        let key = format!("{method}.final_regret");
        let xs: Vec<f64> = (10..15)
            .map(|s| json(&out.join(format!("seed_{s}/summary.json")))["results"][method]["final_regret"].as_f64().unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        let agg = &top["aggregate"][&key];
        assert!((agg["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!((agg["std"].as_f64().unwrap() - std).abs() < 1e-12);
        assert_eq!(agg["values"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn rl_smoke_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["rl", "--M", "8", "--alpha", "10", "--iters", "100", "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(text.starts_with("iteration,mean_return,std_return,ksd,alpha\n"));
    assert_eq!(text.lines().count(), 101);
    let s = json(&dir.path().join("summary.json"));
    let rl = &s["config"]["rl"];
    assert_eq!(rl["hidden"], serde_json::json!([25, 10]));
    assert_eq!(rl["alpha"], 10.0);
    let ck = json(&dir.path().join("checkpoint.json"));
    assert_eq!(ck["spec"]["activation"], "tanh");
}

#[test]
fn help_lists_defaults() {
    let text = String::from_utf8(ok(&["rl", "--help"]).stdout).unwrap();
    assert!(text.contains("\"alpha\": 10.0"), "{text}");
    assert!(text.contains("S2VGD_OUTPUT_DIR"));
    let text = String::from_utf8(ok(&["regress", "--help"]).stdout).unwrap();
    assert!(text.contains("\"particles\": 20") && text.contains("\"k\": 1"));
}

#[test]
fn diag_passes_and_catches_sign_flip() {
    let clean = ok(&["diag"]);
    let text = String::from_utf8(clean.stdout).unwrap();
    assert!(!text.contains("FAIL"), "{text}");
    let flipped = s2vgd(&["diag", "--inject-sign-flip"]);
    assert_eq!(flipped.status.code(), Some(1));
    let text = String::from_utf8(flipped.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL kronecker density")), "{text}");
    assert_eq!(text.matches("FAIL").count(), 1);
}
