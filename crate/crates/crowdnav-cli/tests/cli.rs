//! End-to-end command-line contracts: exit codes, determinism, batch
//! resumability, and the statistics pipeline.

use crowdnav::dynamics::AgentParams;
use crowdnav::sim::{generate_scenario, CorridorTemplate, HumanModel};
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdnav"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("crowdnav_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_scenario(dir: &Path, n_humans: usize) -> PathBuf {
    let scenario = generate_scenario(
        11,
        n_humans,
        &CorridorTemplate::default(),
        &AgentParams::default(),
        HumanModel::Orca,
    )
    .unwrap();
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&scenario).unwrap()).unwrap();
    path
}

/// JSONL with the wall-clock telemetry field masked.
fn masked_log(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v["solve_ms"] = serde_json::json!(0);
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn simulate_empty_corridor_succeeds_and_is_deterministic() {
    let dir = tmp_dir("simulate");
    let scenario = write_scenario(&dir, 0);
    for run in ["a", "b"] {
        let out = dir.join(run);
        let status = bin()
            .args(["--out", out.to_str().unwrap(), "simulate", scenario.to_str().unwrap()])
            .args(["--policy", "orca_robot"])
            .status()
            .unwrap();
        assert!(status.success(), "smoke run exits 0");
        assert!(out.join("run.jsonl").exists());
        assert!(out.join("manifest.json").exists());
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("a/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["success"], serde_json::json!(true));
    assert!(metrics["nav_time"].as_f64().unwrap() < 90.0);
    // Identical logs modulo the wall-clock field.
    assert_eq!(masked_log(&dir.join("a/run.jsonl")), masked_log(&dir.join("b/run.jsonl")));
}

#[test]
fn simulate_rejects_unknown_policy_with_usage_exit() {
    let dir = tmp_dir("badpolicy");
    let scenario = write_scenario(&dir, 0);
    let status = bin()
        .args(["--out", dir.join("o").to_str().unwrap()])
        .args(["simulate", scenario.to_str().unwrap(), "--policy", "unknown"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // Missing required argument is also a usage error.
    let status = bin().arg("simulate").status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn batch_runs_policies_on_identical_scenarios_and_resumes() {
    let dir = tmp_dir("batch");
    let run = |dir: &Path| {
        let status = bin()
            .args(["--out", dir.to_str().unwrap(), "--seed", "5", "--jobs", "2"])
            .args(["batch", "--count", "2", "--humans", "1"])
            .args(["--policies", "mpc_cvmm,orca_robot"])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run(&dir);
    let episodes = std::fs::read_to_string(dir.join("episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 5, "header + 2 policies x 2 scenarios");
    let scenarios = std::fs::read_to_string(dir.join("scenarios.json")).unwrap();

    // Re-running reuses completed episodes and reproduces identical tables.
    run(&dir);
    assert_eq!(std::fs::read_to_string(dir.join("episodes.csv")).unwrap(), episodes);
    assert_eq!(std::fs::read_to_string(dir.join("scenarios.json")).unwrap(), scenarios);

    // Dropping one policy's rows recomputes only those, preserving the rest.
    let kept: Vec<&str> =
        episodes.lines().filter(|l| !l.starts_with("orca_robot")).collect();
    std::fs::write(dir.join("episodes.csv"), kept.join("\n") + "\n").unwrap();
    run(&dir);
    assert_eq!(std::fs::read_to_string(dir.join("episodes.csv")).unwrap(), episodes);

    let aggregate = std::fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    assert!(aggregate.starts_with("policy,success_rate,avg_nav_time_s,collision_freq,frozen_freq"));
}

#[test]
fn predict_synthetic_is_seed_deterministic_and_validates_split() {
    let dir = tmp_dir("predict");
    for run in ["a", "b"] {
        let status = bin()
            .args(["--out", dir.join(run).to_str().unwrap(), "--seed", "9"])
            .args(["predict", "--split", "eth", "--synthetic"])
            .args(["--samples", "40", "--max-scenes", "4"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read_to_string(dir.join("a/forecast.csv")).unwrap();
    let b = std::fs::read_to_string(dir.join("b/forecast.csv")).unwrap();
    assert_eq!(a, b, "seeded forecast output must be byte-identical");
    assert!(a.starts_with("split,method,ml_ade,ml_fde,bo20_ade,bo20_fde,kde_nll"));

    let status = bin()
        .args(["--out", dir.join("c").to_str().unwrap()])
        .args(["predict", "--split", "nope", "--synthetic"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

fn write_episode_csv(path: &Path, policy: &str, nav_times: &[f64]) {
    let mut text = String::from(
        "policy,seed,success,nav_time,collision_freq,frozen_freq,total_ticks,colliding_ticks,frozen_ticks\n",
    );
    for (i, nav) in nav_times.iter().enumerate() {
        text.push_str(&format!("{policy},{i},1,{nav},0,0,10,0,0\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn stats_reproduces_the_exact_permutation_example() {
    let dir = tmp_dir("stats");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    write_episode_csv(&a, "x", &[1.0, 2.0, 3.0]);
    write_episode_csv(&b, "y", &[4.0, 5.0, 6.0]);
    let output = bin()
        .args(["--out", dir.to_str().unwrap()])
        .args(["stats", a.to_str().unwrap(), b.to_str().unwrap(), "--metric", "nav_time"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("U = 0"), "{stdout}");
    assert!(stdout.contains("p = 0.1"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("stats.json")).unwrap()).unwrap();
    assert_eq!(json["u_statistic"], serde_json::json!(0.0));
    assert!((json["p_value"].as_f64().unwrap() - 0.1).abs() < 1e-12);

    // Identical samples: p approaches 1.
    let output = bin()
        .args(["--out", dir.to_str().unwrap()])
        .args(["stats", a.to_str().unwrap(), a.to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = String::from_utf8(output.stdout).unwrap();
    let p: f64 = stdout.lines().nth(1).unwrap().trim_start_matches("p = ").parse().unwrap();
    assert!(p >= 0.99);

    // Unknown metric is a usage error.
    let status = bin()
        .args(["--out", dir.to_str().unwrap()])
        .args(["stats", a.to_str().unwrap(), b.to_str().unwrap(), "--metric", "zzz"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn report_merges_tables_in_both_formats() {
    let dir = tmp_dir("report");
    let a = dir.join("a.csv");
    write_episode_csv(&a, "alpha", &[5.0, 7.0]);
    for format in ["csv", "json"] {
        let status = bin()
            .args(["--out", dir.to_str().unwrap()])
            .args(["report", a.to_str().unwrap(), "--format", format])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(csv.contains("alpha"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json[0]["policy"], serde_json::json!("alpha"));
    assert!((json[0]["avg_nav_time_s"].as_f64().unwrap() - 6.0).abs() < 1e-12);
}
