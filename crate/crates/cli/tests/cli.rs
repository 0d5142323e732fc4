use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn longrun(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longrun"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// The default world scaled down so a debug build finishes quickly.
fn small_pipeline_config(dir: &Path) -> PathBuf {
    let mut cfg = read_json(&configs().join("pipeline.json"));
    let pop = &mut cfg["world"]["population"];
    pop["n_producers"] = 600.into();
    pop["n_viewers"] = 400.into();
    pop["follower_graph"] = serde_json::json!({"kind": "random_p", "p": 0.0267});
    cfg["world"]["horizon"] = 14.into();
    cfg["retrain"]["horizon"] = 14.into();
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn oracle_two_period_reports_totals_and_condition() {
    let dir = tempfile::tempdir().unwrap();
    let o = longrun(&["oracle", "--two-period", "0.8", "0.5", "0.9", "--out", "o"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("oracle total 2.2000"), "{out}");
    assert!(out.contains("myopic total 1.6000"), "{out}");
    assert!(out.contains("condition at t=1: lhs 0.3000 <"), "{out}");
    let report = read_json(&dir.path().join("o/oracle_report.json"));
    assert_eq!(report["coincide"], false);
    assert!(dir.path().join("o/manifest.json").exists());
}

#[test]
fn oracle_reports_coinciding_policies() {
    let dir = tempfile::tempdir().unwrap();
    let o = longrun(
        &["oracle", "--two-period", "0.99", "0.5", "0.9", "--reach", "recent-engagers"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("policies coincide"));
}

#[test]
fn oracle_reads_a_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_period.json");
    let o = longrun(&["oracle", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("oracle total 2.2000"));
}

#[test]
fn malformed_scenario_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\n  \"viewers\": [\n    {\"id\": 1,,}\n").unwrap();
    let o = longrun(&["oracle", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.json") && err.contains("line 3 column"), "{err}");
}

#[test]
fn invalid_scenario_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&configs().join("two_period.json"));
    cfg["objective"]["beta"] = 1.5.into();
    cfg["viewers"][0]["affinity"]["2"] = (-0.5).into();
    fs::write(dir.path().join("s.json"), cfg.to_string()).unwrap();
    let o = longrun(&["oracle", "--config", "s.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("beta") && err.contains("affinity"), "{err}");
}

#[test]
fn oracle_rejects_smooth_production() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&configs().join("two_period.json"));
    cfg["production"]["mode"] = "smooth".into();
    fs::write(dir.path().join("s.json"), cfg.to_string()).unwrap();
    let o = longrun(&["oracle", "--config", "s.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_config_and_zero_replicas_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(longrun(&["simulate"], dir.path()).status.code(), Some(2));
    assert_eq!(longrun(&["oracle"], dir.path()).status.code(), Some(2));
    assert_eq!(
        longrun(&["pipeline", "--replicas", "0"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(longrun(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(
        longrun(&["train", "--data", "missing.csv"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn simulate_writes_log_and_replicas_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_period.json");
    let cfg = cfg.to_str().unwrap();
    let o = longrun(&["simulate", "--config", cfg, "--out", "one"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("one/engagement.csv")).unwrap();
    assert!(log.starts_with("period,viewer_id,producer_id,content_id,kind,value"));
    let report = read_json(&dir.path().join("one/simulation.json"));
    assert!((report["discounted_utility"].as_f64().unwrap() - 1.6).abs() < 1e-12);

    let o = longrun(
        &["simulate", "--config", cfg, "--out", "many", "--seed", "5", "--replicas", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in [5, 6] {
        let m = read_json(&dir.path().join(format!("many/seed-{seed}/manifest.json")));
        assert_eq!(m["seed"], seed);
    }
}

#[test]
fn experiment_train_evaluate_deploy_chain() {
    let dir = tempfile::tempdir().unwrap();
    let small = small_pipeline_config(dir.path());
    let small = small.to_str().unwrap();
    let run = |args: &[&str]| {
        let o = longrun(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        stdout(&o)
    };
    let out = run(&["experiment", "--config", small, "--seed", "3", "--out", "e"]);
    assert!(out.contains("likes +"), "{out}");
    let report = read_json(&dir.path().join("e/experiment_report.json"));
    assert_eq!(report["seed"], 3);

    run(&["train", "--data", "e/experiment.csv", "--out", "t"]);
    let curves = fs::read_to_string(dir.path().join("t/loss_curves.csv")).unwrap();
    assert!(curves.starts_with("round,treatment,control,difference"));

    run(&["evaluate", "--model", "t/model.json", "--data", "e/experiment.csv", "--out", "v"]);
    let cmp = read_json(&dir.path().join("v/group_comparison.json"));
    assert_eq!(cmp["cutoff_percentile"], 80.0);

    run(&[
        "deploy",
        "--model",
        "t/model.json",
        "--population",
        "e/population.json",
        "--assignment",
        "e/assignment.csv",
        "--out",
        "d",
    ]);
    let table = fs::read_to_string(dir.path().join("d/score_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 601);
    assert!(table.starts_with("producer_id,score,version"));
}

#[test]
fn pipeline_is_reproducible_and_compare_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let small = small_pipeline_config(dir.path());
    let small = small.to_str().unwrap();
    for out in ["a", "b"] {
        let o = longrun(&["pipeline", "--config", small, "--seed", "9", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names: Vec<String> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"manifest.json".to_string()));
    for name in &names {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }

    // Identical policies give identical numbers.
    fs::write(dir.path().join("uniform.csv"), {
        let mut s = String::from("producer_id,score\n");
        for p in 0..600 {
            s.push_str(&format!("{p},0.25\n"));
        }
        s
    })
    .unwrap();
    let mut world = read_json(Path::new(small))["world"].clone();
    world["horizon"] = 6.into();
    let cfg = serde_json::json!({
        "world": world,
        "a": {"kind": "myopic"},
        "b": {"kind": "myopic"},
        "goal_scores": "uniform.csv",
    });
    fs::write(dir.path().join("cmp.json"), cfg.to_string()).unwrap();
    let o = longrun(&["compare", "--config", "cmp.json", "--out", "c"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&dir.path().join("c/compare_report.json"));
    let (pa, pb) = (&r["policies"][0], &r["policies"][1]);
    assert_eq!(pa["discounted_utility"], pb["discounted_utility"]);
    assert_eq!(pa["goal_metric"], pb["goal_metric"]);
    assert_eq!(r["utility_winner"], "tie");
    // Uniform scores: the goal metric is the score times the engagement count.
    let n = pa["engagements"].as_f64().unwrap();
    assert!((pa["goal_metric"].as_f64().unwrap() - 0.25 * n).abs() < 1e-9 * n.max(1.0));
}

#[test]
fn failing_pipeline_stage_exits_1_and_keeps_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let small = small_pipeline_config(dir.path());
    let mut cfg = read_json(&small);
    cfg["fractions"]["holdout"] = 0.0.into();
    fs::write(&small, cfg.to_string()).unwrap();
    let o = longrun(&["pipeline", "--config", small.to_str().unwrap(), "--out", "p"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage `retrain` failed"), "{}", stderr(&o));
    assert!(dir.path().join("p/model.json").exists());
    assert!(!dir.path().join("p/manifest.json").exists());
}
