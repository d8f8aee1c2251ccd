use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gcbf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcbf"))
        .args(["--out-dir", dir.to_str().unwrap()])
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, model: &str) -> String {
    let path = dir.join(format!("{model}.toml"));
    std::fs::write(&path, format!("model = \"{model}\"\nn_agents = 4\nside_length = 1.5\nsegment_len = 4\n")).unwrap();
    path.to_str().unwrap().to_string()
}

/// Train for `steps` steps into `dir` and return the final checkpoint.
fn trained(dir: &Path, model: &str, steps: usize, extra: &[&str]) -> String {
    let cfg = write_config(dir, model);
    let steps = steps.to_string();
    let mut args = vec!["train", "--config", cfg.as_str(), "--steps", steps.as_str()];
    args.extend_from_slice(extra);
    let out = gcbf(dir, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("ckpt_final.bin").to_str().unwrap().to_string()
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn csv_rows(path: &Path) -> (Vec<String>, usize) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    (header, r.records().count())
}

#[test]
fn missing_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcbf(dir.path(), &["train", "--config", "/nonexistent/train.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "model = \"simple_car\"\nlearning_rate = 0.1\n").unwrap();
    let out = gcbf(dir.path(), &["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn zero_steps_saves_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "simple_car", 0, &[]);
    let ck = gcbf_core::nets::load_checkpoint(Path::new(&ckpt)).unwrap();
    assert_eq!(ck.step, 0);
    assert!(dir.path().join("train_log.csv").exists());
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--seed", "7", "--workers", "1"];
    let pa = trained(a.path(), "simple_car", 2, &flags);
    let pb = trained(b.path(), "simple_car", 2, &flags);
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}

#[test]
fn model_mismatch_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "dubins_car", 0, &[]);
    let out = gcbf(dir.path(), &["simulate", "--checkpoint", &ckpt, "--model", "simple_car", "--agents", "2", "--horizon", "3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn lone_agent_reaches_its_goal() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "simple_car", 0, &[]);
    let traj = dir.path().join("one.jsonl");
    let out = gcbf(dir.path(), &["simulate", "--checkpoint", &ckpt, "--agents", "1", "--out", traj.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = lines(&traj);
    let metrics = recs.last().unwrap();
    assert_eq!(metrics["success_rate"], 1.0);
    assert_eq!(metrics["controller"], "gcbf");
    let steps: Vec<u64> = recs[..recs.len() - 1].iter().map(|r| r["t"].as_u64().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn trajectory_has_one_record_per_agent_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.jsonl");
    let out = gcbf(dir.path(), &["simulate", "--nominal-only", "--agents", "3", "--horizon", "5", "--out", traj.to_str().unwrap()]);
    assert!(out.status.success());
    let recs = lines(&traj);
    // Five decided steps, the terminal state and the metrics line.
    assert_eq!(recs.len(), 3 * 6 + 1);
    for (k, r) in recs[..18].iter().enumerate() {
        assert_eq!(r["t"].as_u64().unwrap() as usize, k / 3);
        assert_eq!(r["agent_id"].as_u64().unwrap() as usize, k % 3);
        assert_eq!(r["state"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn nominal_only_modes_are_all_nominal() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "simple_car", 0, &[]);
    let traj = dir.path().join("n.jsonl");
    let out = gcbf(
        dir.path(),
        &["simulate", "--checkpoint", &ckpt, "--nominal-only", "--agents", "8", "--horizon", "20", "--out", traj.to_str().unwrap()],
    );
    assert!(out.status.success());
    let recs = lines(&traj);
    let modes: Vec<&Value> = recs.iter().filter_map(|r| r.get("mode")).filter(|m| !m.is_null()).collect();
    assert_eq!(modes.len(), 8 * 20);
    assert!(modes.iter().all(|m| *m == "nominal"));
}

#[test]
fn obstacle_scenarios_populate_lidar() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("o.jsonl");
    let out = gcbf(
        dir.path(),
        &["simulate", "--nominal-only", "--suite", "obstacles", "--agents", "16", "--horizon", "5", "--out", traj.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = lines(&traj);
    let with_hits = recs[..recs.len() - 1].iter().filter(|r| !r["lidar"].as_array().unwrap().is_empty()).count();
    assert!(with_hits > 0);
    for r in &recs[..recs.len() - 1] {
        for p in r["lidar"].as_array().unwrap() {
            let d = p.as_array().unwrap().iter().map(|v| v.as_f64().unwrap().powi(2)).sum::<f64>().sqrt();
            assert!(d <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn qp_bench_reports_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcbf(dir.path(), &["qp-bench", "--agents", "16", "--instances", "1", "--horizon", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("qp_bench.csv"));
    assert_eq!(header, ["n_agents", "mode", "mean_step_time_s", "safety_rate"]);
    assert_eq!(rows, 2);
}

#[test]
fn alpha_sweep_has_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "simple_car", 0, &[]);
    let cfg = write_config(dir.path(), "simple_car");
    let out = gcbf(
        dir.path(),
        &[
            "sweep", "--kind", "alpha", "--checkpoint", &ckpt, "--train-config", &cfg, "--train-steps", "1", "--agents", "2",
            "--instances", "1", "--horizon", "5",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = csv_rows(&dir.path().join("sweep_alpha.csv"));
    assert_eq!(rows, 5);
}

#[test]
fn evaluate_with_no_instances_writes_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcbf(dir.path(), &["evaluate", "--instances", "0", "--agents", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.path().join("results.csv"));
    assert_eq!(
        header,
        ["suite", "controller", "n_agents", "instance_seed", "policy_seed", "safety_rate", "reaching_rate", "success_rate"]
    );
    assert_eq!(rows, 0);
    assert_eq!(csv_rows(&dir.path().join("plot.csv")).1, 0);
}

#[test]
fn evaluate_writes_one_row_per_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcbf(
        dir.path(),
        &["evaluate", "--controllers", "nominal,qp_centralized", "--instances", "2", "--agents", "4", "--horizon", "10"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(&dir.path().join("results.csv")).1, 4);
    assert_eq!(csv_rows(&dir.path().join("plot.csv")).1, 2);
}

#[test]
fn qp_controller_rejects_other_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcbf(dir.path(), &["simulate", "--controller", "qp_centralized", "--model", "dubins_car", "--agents", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
