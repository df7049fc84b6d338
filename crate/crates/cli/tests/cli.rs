use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use todsim_cli::run_args;

fn todsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_todsim"))
}

fn arg(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// A small corpus from the built-in worlds in `dir/fx`.
fn fixture(dir: &Path) -> PathBuf {
    let fx = dir.join("fx");
    run_args(["todsim", "fixture", "--world", "in-domain", "--train", "4", "--valid", "1", "--test", "1", "--out", &arg(&fx)])
        .unwrap();
    fx
}

#[test]
fn schema_aware_scripted_pair_always_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let out = dir.path().join("sim");
    let res = run_args([
        "todsim", "--json", "simulate",
        "--goals", &arg(&fx.join("goals_test.jsonl")),
        "--api-table", &arg(&fx.join("api_table.jsonl")),
        "--schema-aware", "--rollouts", "2",
        "--out", &arg(&out),
    ])
    .unwrap();
    assert_eq!(res.json["tsr"], 1.0);
    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics["tsr"], 1.0);
    assert_eq!(metrics["calls_per_dialogue"], 1.0);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config"]["rollouts"], 2);
    assert_eq!(manifest["config"]["schema_aware"], true);
    assert!(manifest["inputs"]["goals"].as_str().unwrap().starts_with('/'));
    let episodes = std::fs::read_to_string(out.join("episodes.jsonl")).unwrap();
    let n_goals = std::fs::read_to_string(fx.join("goals_test.jsonl")).unwrap().lines().count();
    assert_eq!(episodes.lines().count(), 2 * n_goals);
}

#[test]
fn missing_input_is_an_io_error_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = todsim()
        .args(["simulate", "--goals", "/definitely/not/here.jsonl", "--api-table", "/nope.jsonl", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "IoError");
    assert_eq!(report["exit_code"], 2);
    assert!(report["message"].as_str().unwrap().contains("/definitely/not/here.jsonl"));
}

#[test]
fn bad_values_are_usage_errors() {
    let out = todsim().args(["simulate", "--decode", "beam"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = todsim().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "UsageError");
}

#[test]
fn malformed_episodes_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"goal\": 3}\n").unwrap();
    let out = todsim().args(["extract-goals", "--episodes"]).arg(&bad).arg("--out").arg(dir.path().join("g.jsonl")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "DataError");
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let config = dir.path().join("todsim.toml");
    std::fs::write(
        &config,
        format!(
            "[simulate]\ngoals = {:?}\napi_table = {:?}\nrollouts = 2\nmax_rounds = 4\n",
            arg(&fx.join("goals_test.jsonl")),
            arg(&fx.join("api_table.jsonl")),
        ),
    )
    .unwrap();
    let out = dir.path().join("a");
    run_args(["todsim", "--config", &arg(&config), "simulate", "--rollouts", "1", "--out", &arg(&out)]).unwrap();
    let cfg = &read_json(&out.join("manifest.json"))["config"];
    assert_eq!(cfg["rollouts"], 1, "flag wins");
    assert_eq!(cfg["max_rounds"], 4, "file wins over default");
    assert_eq!(cfg["p"], 0.9, "default");

    std::fs::write(&config, "[simulate]\nrollout = 2\n").unwrap();
    let err = run_args(["todsim", "--config", &arg(&config), "simulate", "--out", &arg(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bootstrap_report_and_al_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let bs = dir.path().join("bs");
    run_args([
        "todsim", "bootstrap",
        "--goals", &arg(&fx.join("goals_train.jsonl")),
        "--eval-goals", &arg(&fx.join("goals_test.jsonl")),
        "--api-table", &arg(&fx.join("api_table.jsonl")),
        "--in-domain", &arg(&fx.join("train.jsonl")),
        "--iterations", "2", "--rollouts", "2", "--eval-rollouts", "1",
        "--out", &arg(&bs),
    ])
    .unwrap();
    let report = read_json(&bs.join("report.json"));
    let iters = report["iterations"].as_array().unwrap();
    assert_eq!(iters.len(), 3);
    assert!(bs.join("iter_2").join("metrics.json").is_file());

    let joined = run_args(["todsim", "--json", "report", "--root", &arg(&bs)]).unwrap();
    assert_eq!(joined.json.as_array().unwrap().len(), 3);

    let exact = run_args(["todsim", "--json", "report", "--base", "0.777", "--new", "0.860"]).unwrap();
    assert_eq!(exact.json["error_reduction"], "83/223");

    let al = dir.path().join("al");
    for _ in 0..2 {
        run_args([
            "todsim", "al",
            "--episodes", &arg(&bs.join("iter_1").join("generation.jsonl")),
            "--pool-train", &arg(&fx.join("train.jsonl")),
            "--pool-valid", &arg(&fx.join("valid.jsonl")),
            "--k-schemas", "2", "--k-convs", "3",
            "--out", &arg(&al),
        ])
        .unwrap();
    }
    let ledger = read_json(&al.join("al_ledger.json"));
    let entries = ledger["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[1]["iteration"], 2);
    let ids = |e: &Value| -> Vec<String> {
        e["train_ids"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
    };
    assert!(ids(&entries[1]).iter().all(|id| !ids(&entries[0]).contains(id)));
}

#[test]
fn eval_tasks_hide_calls_and_include_controls() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let mut runs = Vec::new();
    for (name, aware) in [("aware", true), ("blind", false)] {
        let out = dir.path().join(name);
        let mut args = vec![
            "todsim".to_string(), "simulate".into(),
            "--goals".into(), arg(&fx.join("goals_test.jsonl")),
            "--api-table".into(), arg(&fx.join("api_table.jsonl")),
            "--rollouts".into(), "1".into(),
            "--out".into(), arg(&out),
        ];
        if aware {
            args.push("--schema-aware".into());
        }
        run_args(args).unwrap();
        runs.push(format!("{name}={}", arg(&out.join("episodes.jsonl"))));
    }
    let ev = dir.path().join("ev");
    run_args([
        "todsim", "eval-tasks",
        "--run", &runs[0], "--run", &runs[1],
        "--goals", &arg(&fx.join("goals_test.jsonl")),
        "--gold", &arg(&fx.join("test.jsonl")),
        "--controls", "2",
        "--out", &arg(&ev),
    ])
    .unwrap();
    let text = std::fs::read_to_string(ev.join("tasks.jsonl")).unwrap();
    let tasks: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let n_goals = std::fs::read_to_string(fx.join("goals_test.jsonl")).unwrap().lines().count();
    assert_eq!(tasks.len(), n_goals + 2);
    assert_eq!(tasks.iter().filter(|t| t["is_control"] == true).count(), 2);
    for t in &tasks {
        let public = serde_json::to_string(&public_view(t)).unwrap();
        assert!(!public.contains("APICALL:") && !public.contains("APIRESP:"));
    }
}

fn public_view(task: &Value) -> Value {
    let t: todsim_acute::EvalTask = serde_json::from_value(task.clone()).unwrap();
    serde_json::to_value(t.public()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(todsim().arg("--help").output().unwrap().status.code(), Some(0));
    let v = todsim().arg("--version").output().unwrap();
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}
