mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agentrec::bundle::{Bundle, TASKS_FILE};
use agentrec::service::EnvConfig;
use common::*;
use serde_json::{json, Value};

fn agentrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentrec")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn raw_copy(tmp: &Path) -> PathBuf {
    let dir = tmp.join("raw");
    std::fs::create_dir_all(&dir).unwrap();
    for f in ["users.json", "items.json", "reviews.json"] {
        std::fs::copy(raw_fixture_dir().join(f), dir.join(f)).unwrap();
    }
    dir
}

fn append(path: &Path, line: &str) {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(path).unwrap();
    writeln!(f, "{line}").unwrap();
}

#[test]
fn ingest_writes_the_three_canonical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("store");
    let report = stdout_json(&agentrec(&["ingest", "--source", "yelp", "--input", p(&raw_fixture_dir()), "--out", p(&out)]));
    assert_eq!(report["ingest"]["rejections"], json!([]));
    for f in ["users.jsonl", "items.jsonl", "reviews.jsonl"] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(fixture_dir().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn malformed_line_is_one_rejection() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = raw_copy(tmp.path());
    append(&raw.join("reviews.json"), "{\"review_id\": ");
    let out = agentrec(&["ingest", "--source", "yelp", "--input", p(&raw), "--out", p(&tmp.path().join("s"))]);
    let report = stdout_json(&out);
    assert_eq!(report["ingest"]["rejections"].as_array().unwrap().len(), 1);
}

#[test]
fn dangling_reference_fails_unless_allowed() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = raw_copy(tmp.path());
    append(
        &raw.join("reviews.json"),
        r#"{"review_id":"rX","user_id":"u00000","business_id":"b99999","stars":3.0,"date":"2019-01-05 00:00:00"}"#,
    );
    let store = tmp.path().join("s");
    let out = agentrec(&["ingest", "--source", "yelp", "--input", p(&raw), "--out", p(&store)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!store.join("reviews.jsonl").exists());
    let out = agentrec(&["ingest", "--source", "yelp", "--input", p(&raw), "--out", p(&store), "--allow-dangling"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(store.join("reviews.jsonl").exists());
}

#[test]
fn build_counts_equal_brute_force_eligibility_on_the_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let store = fixture_store();
    for scenario in fixture_scenarios() {
        let out = tmp.path().join(&scenario.scenario_id);
        let path = fixture_dir().join(format!("scenarios/{}.json", scenario.scenario_id));
        let manifest = stdout_json(&agentrec(&[
            "build", "--store", p(&fixture_dir()), "--scenario", p(&path), "--out", p(&out), "--count", "100000",
        ]));
        let eligible = brute_eligible(&store, &scenario).len();
        assert_eq!(manifest["generated"], eligible, "{}", scenario.scenario_id);
        let lines = std::fs::read_to_string(out.join(TASKS_FILE)).unwrap().lines().count();
        assert_eq!(lines, eligible);
    }
}

#[test]
fn build_without_eligible_tasks_writes_an_empty_file_and_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("future.json");
    let start = 1_900_000_000i64;
    std::fs::write(
        &scenario,
        json!({
            "scenario_id": "future",
            "family": "long_term",
            "time_filter": {"start": start, "end": start + 92 * 86_400},
        })
        .to_string(),
    )
    .unwrap();
    let out = tmp.path().join("tasks");
    let result = agentrec(&["build", "--store", p(&fixture_dir()), "--scenario", p(&scenario), "--out", p(&out)]);
    assert_eq!(result.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&result.stderr).contains("warning"));
    assert_eq!(std::fs::read_to_string(out.join(TASKS_FILE)).unwrap(), "");
}

/// Writes a classic bundle for the fixture and returns its directory.
fn classic_bundle(tmp: &Path) -> PathBuf {
    let out = tmp.join("classic");
    let scenario = fixture_dir().join("scenarios/classic.json");
    let result = agentrec(&["build", "--store", p(&fixture_dir()), "--scenario", p(&scenario), "--out", p(&out), "--seed", "4"]);
    assert!(result.status.success());
    out
}

#[test]
fn random_agent_over_two_thousand_tasks_lands_in_the_band() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    stdout_json(&agentrec(&["fixture", "--out", p(&store), "--preset", "calibration"]));
    let tasks = tmp.path().join("tasks");
    let classic = store.join("scenarios/classic.json");
    let manifest = stdout_json(&agentrec(&[
        "build", "--store", p(&store), "--scenario", p(&classic), "--out", p(&tasks), "--count", "2000", "--seed", "8",
    ]));
    assert_eq!(manifest["generated"], 2000);
    let run = tmp.path().join("run");
    let report = stdout_json(&agentrec(&[
        "run", "--store", p(&store), "--tasks", p(&tasks), "--agent", "random", "--seed", "3", "--out", p(&run),
    ]));
    let pct = report["overall"]["avg_hr_percent"].as_f64().unwrap();
    assert!((13.5..=16.5).contains(&pct), "{pct}");
}

#[test]
fn default_worker_count_gives_the_same_traces_as_one_worker() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = classic_bundle(tmp.path());
    let fixture = fixture_dir();
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["run", "--store", p(&fixture), "--tasks", p(&tasks), "--agent", "contentsim", "--out", p(&out)];
        args.extend_from_slice(extra);
        stdout_json(&agentrec(&args));
        std::fs::read(out.join("traces.jsonl")).unwrap()
    };
    assert_eq!(run("default", &[]), run("one", &["--workers", "1"]));
}

#[test]
fn config_file_supplies_flags_and_explicit_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = classic_bundle(tmp.path());
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        json!({"run": {"agent": "popularity", "seed": 3, "run_id": "from-config", "budget": 7}}).to_string(),
    )
    .unwrap();
    let out = tmp.path().join("run");
    let report = stdout_json(&agentrec(&[
        "--config", p(&config), "run", "--store", p(&fixture_dir()), "--tasks", p(&tasks), "--seed", "9", "--out", p(&out),
    ]));
    assert_eq!(report["metadata"]["agent"], "popularity");
    assert_eq!(report["metadata"]["run_id"], "from-config");
    assert_eq!(report["metadata"]["seed"], 9);
}

#[test]
fn report_over_an_empty_trace_directory_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = classic_bundle(tmp.path());
    let traces = tmp.path().join("traces");
    std::fs::create_dir_all(&traces).unwrap();
    let out = agentrec(&["report", "--traces", p(&traces), "--tasks", p(&tasks)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty test set"));
}

#[test]
fn report_equals_fetch_metrics_for_the_same_run() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks_dir = classic_bundle(tmp.path());
    let bundle = Bundle::load(&tasks_dir).unwrap();
    let store = fixture_store();
    let tasks = agentrec::bundle::prepare_tasks(&store, std::slice::from_ref(&bundle)).unwrap();
    let trace_dir = tmp.path().join("traces");
    std::fs::create_dir_all(&trace_dir).unwrap();
    let env = environment(
        store,
        tasks,
        EnvConfig { budget: 3, trace_dir: Some(trace_dir.clone()), ..EnvConfig::default() },
    );
    let server = Server::start(env);
    let http = client();
    for (k, task) in bundle.tasks.iter().enumerate() {
        let created: Value = http
            .post(server.url("/runs/cross/sessions"))
            .json(&json!({"task_id": task.task_id, "agent": "scripted"}))
            .send()
            .unwrap()
            .json()
            .unwrap();
        let token = created["session_token"].as_str().unwrap();
        let mut ranking = task.candidates.clone();
        ranking.rotate_left(k % 20);
        if k % 7 == 3 {
            ranking.pop();
        }
        http.post(server.url(&format!("/sessions/{token}/ranking")))
            .json(&json!({ "ranking": ranking }))
            .send()
            .unwrap();
    }
    let metrics: Value = http.get(server.url("/runs/cross/metrics")).send().unwrap().json().unwrap();
    assert!(metrics["overall"]["counts"]["invalid"].as_u64().unwrap() > 0);
    let offline = stdout_json(&agentrec(&["report", "--traces", p(&trace_dir), "--tasks", p(&tasks_dir)]));
    assert_eq!(offline, metrics);
}

#[test]
fn serve_refuses_tasks_built_for_another_store() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = classic_bundle(tmp.path());
    let other = tmp.path().join("other");
    stdout_json(&agentrec(&["fixture", "--out", p(&other), "--seed", "5"]));
    let out = agentrec(&["serve", "--store", p(&other), "--tasks", p(&tasks), "--addr", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("built from store"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn leaderboard_submit_and_show() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = classic_bundle(tmp.path());
    let board = tmp.path().join("board.jsonl");
    for agent in ["random", "oracle"] {
        let out = tmp.path().join(agent);
        stdout_json(&agentrec(&["run", "--store", p(&fixture_dir()), "--tasks", p(&tasks), "--agent", agent, "--out", p(&out)]));
        let entry = stdout_json(&agentrec(&[
            "leaderboard", "submit", "--report", p(&out.join("report.json")), "--board", p(&board), "--dataset-tag", "tiny",
        ]));
        assert_eq!(entry["agent"], agent);
    }
    let shown = agentrec(&["leaderboard", "show", "--board", p(&board)]);
    let text = String::from_utf8(shown.stdout).unwrap();
    let oracle = text.find("oracle").unwrap();
    let random = text.find("random").unwrap();
    assert!(oracle < random, "{text}");
}
