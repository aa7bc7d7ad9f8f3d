mod common;

use std::fs;

use bacm::commands::MetricsRecord;
use bacm::io::{read_jsonl, Manifest, TrajectoryRecord, FORMAT_VERSION};
use bacm::RunConfig;
use bacm_core::policy::{render_answer, render_search_call, ScriptedOutputs};
use common::*;

#[test]
fn scripted_run_writes_one_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, pool) = write_corpus(dir.path(), 50);
    let script = ScriptedOutputs {
        act: vec![render_search_call("anything"), render_answer(&["x".into()], "\n")],
        fold: vec!["<tool_call>{\"name\": \"summarize\", \"arguments\": {\"fold_commit_ids\": \"NONE\", \"merged_commit\": \"\"}}</tool_call>".into()],
        summarize: vec![],
    };
    let script_path = dir.path().join("script.json");
    fs::write(&script_path, serde_json::to_string(&script).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = run_bin(&[
        "run",
        "--corpus", corpus.to_str().unwrap(),
        "--pool", pool.to_str().unwrap(),
        "--policy", "scripted",
        "--script", script_path.to_str().unwrap(),
        "--objectives", "1",
        "--max-model-len", "8192",
        "--episodes", "1",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let records: Vec<TrajectoryRecord> = read_jsonl(&out.join("trajectories.jsonl")).unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert_eq!(r.format_version, FORMAT_VERSION);
    assert_eq!(r.trajectory.final_answers, vec!["x".to_string()]);
    assert_eq!(r.trajectory.max_model_len.0, 8192);

    let metrics: Vec<MetricsRecord> = read_jsonl(&out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.len(), 1);

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "run");
    let listed: Vec<&str> = manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
    assert!(listed.contains(&"trajectories.jsonl"));
    assert!(listed.contains(&"metrics.jsonl"));
    for a in &manifest.artifacts {
        assert!(out.join(&a.path).exists(), "listed artifact {} is missing", a.path);
    }
}

#[test]
fn missing_corpus_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope/corpus.jsonl");
    let pool = dir.path().join("pool.jsonl");
    let o = run_bin(&[
        "run",
        "--corpus", missing.to_str().unwrap(),
        "--pool", pool.to_str().unwrap(),
        "--out-dir", dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_2() {
    let o = run_bin(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/not/here.toml"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "episodes = 1\nnot_a_key = true\n").unwrap();
    let o = run_bin(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("run.toml");
    let mut cfg = RunConfig { episodes: 5, out_dir: dir.path().join("ignored"), ..RunConfig::default() };
    cfg.corpus.synthetic.facts = 40;
    cfg.corpus.synthetic.filler_tokens = 50;
    cfg.rollout.objectives = vec![1];
    fs::write(&cfg_path, cfg.render()).unwrap();

    let o = run_bin(&[
        "run",
        "--config", cfg_path.to_str().unwrap(),
        "--episodes", "2",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records: Vec<TrajectoryRecord> = read_jsonl(&out.join("trajectories.jsonl")).unwrap();
    assert_eq!(records.len(), 2);
    assert!(!dir.path().join("ignored").exists());

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config["episodes"].as_integer(), Some(2));
    assert_eq!(manifest.config["corpus"]["synthetic"]["facts"].as_integer(), Some(40));
}

#[test]
fn config_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    let mut cfg = RunConfig { seed: 17, ..RunConfig::default() };
    cfg.rollout.max_model_len = vec![4096, 6144];
    cfg.train.schedule = "static:6144:10".into();
    fs::write(&path, cfg.render()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}

#[test]
fn no_budget_prompt_variant_is_selected_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_bin(&[
        "run",
        "--strategy", "budget_aware",
        "--prompt", "no_budget",
        "--objectives", "2",
        "--max-model-len", "4096",
        "--episodes", "1",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let raw = fs::read_to_string(out.join("trajectories.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
    assert_eq!(v["strategy"]["prompt"], "no_budget", "{}", v["strategy"]);
}
