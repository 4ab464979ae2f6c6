//! The HTTP contract: endpoints, status codes, error bodies, and payload
//! shapes checked against `schemas/wire.schema.json`.

mod common;

use std::time::Duration;

use agentrec::bundle::{answer_key, Bundle};
use agentrec::metrics::report_from_traces;
use agentrec::service::EnvConfig;
use agentrec::store::UriStore;
use agentrec::taskgen::generate_for_scenario;
use common::*;
use reqwest::blocking::Response;
use serde_json::{json, Value};

fn schema_doc() -> Value {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/wire.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(def: &str, value: &Value) {
    let mut schema = schema_doc();
    schema["$ref"] = json!(format!("#/$defs/{def}"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{def}: {errors:?}\n{value}");
}

struct Fixture {
    server: Server,
    env: std::sync::Arc<agentrec::service::Environment>,
    bundle: Bundle,
    _traces: tempfile::TempDir,
}

fn start(count: usize, config: EnvConfig) -> Fixture {
    let store = fixture_store();
    let scenario = &fixture_scenarios()[0];
    let generated = generate_for_scenario(&store, scenario, Some(count), 21).unwrap();
    let bundle = Bundle::new(&store, scenario, &generated, count, 21);
    let tasks = agentrec::bundle::prepare_tasks(&store, std::slice::from_ref(&bundle)).unwrap();
    let traces = tempfile::tempdir().unwrap();
    let env = environment(store, tasks, EnvConfig { trace_dir: Some(traces.path().to_path_buf()), ..config });
    Fixture {
        server: Server::start(env.clone()),
        env,
        bundle,
        _traces: traces,
    }
}

impl Fixture {
    fn open(&self, run: &str, task: usize) -> (String, Value) {
        let body = json!({"task_id": self.bundle.tasks[task].task_id, "agent": "test"});
        assert_schema("CreateSession", &body);
        let resp = client().post(self.server.url(&format!("/runs/{run}/sessions"))).json(&body).send().unwrap();
        assert_eq!(resp.status().as_u16(), 201);
        let created: Value = resp.json().unwrap();
        assert_schema("SessionCreated", &created);
        (created["session_token"].as_str().unwrap().to_string(), created)
    }

    fn query(&self, token: &str, spec: &Value) -> Response {
        client()
            .post(self.server.url(&format!("/sessions/{token}/query")))
            .body(spec.to_string())
            .send()
            .unwrap()
    }

    fn rank(&self, token: &str, ranking: &[String]) -> Response {
        let body = json!({ "ranking": ranking });
        assert_schema("SubmitRanking", &body);
        client()
            .post(self.server.url(&format!("/sessions/{token}/ranking")))
            .json(&body)
            .send()
            .unwrap()
    }

    fn metrics(&self, run: &str, partial: bool) -> Response {
        let suffix = if partial { "?partial=true" } else { "" };
        client().get(self.server.url(&format!("/runs/{run}/metrics{suffix}"))).send().unwrap()
    }

    fn candidates(&self, task: usize) -> Vec<String> {
        self.bundle.tasks[task].candidates.clone()
    }

    /// Candidates with the positive moved to the front.
    fn perfect(&self, task: usize) -> Vec<String> {
        let positive = &self.bundle.answers[task].positive_item;
        let mut r = vec![positive.clone()];
        r.extend(self.candidates(task).into_iter().filter(|c| c != positive));
        r
    }
}

fn error(resp: Response, status: u16, code: &str) -> Value {
    assert_eq!(resp.status().as_u16(), status);
    let body: Value = resp.json().unwrap();
    assert_schema("Error", &body);
    assert_eq!(body["code"], code, "{body}");
    body
}

fn item_spec() -> Value {
    json!({"entity_type": "item", "sort_method": "popularity", "page": {"limit": 3}})
}

#[test]
fn task_list_is_public_only() {
    let f = start(3, EnvConfig::default());
    let tasks: Value = client().get(f.server.url("/tasks")).send().unwrap().json().unwrap();
    assert_schema("TaskList", &tasks);
    assert_eq!(tasks.as_array().unwrap().len(), 3);
    let text = tasks.to_string();
    for answer in &f.bundle.answers {
        assert!(!text.contains(&answer.ground_truth_review));
    }
    assert!(!text.contains("positive"));
}

#[test]
fn budget_one_then_refusal_then_ranking() {
    let f = start(2, EnvConfig { budget: 1, ..EnvConfig::default() });
    let (token, created) = f.open("budget", 0);
    assert_eq!(created["observation"]["budget_remaining"], 1);
    assert_schema("QuerySpec", &item_spec());

    let resp = f.query(&token, &item_spec());
    assert_eq!(resp.status().as_u16(), 200);
    let obs: Value = resp.json().unwrap();
    assert_schema("Observation", &obs);
    assert_eq!(obs["budget_remaining"], 0);
    assert_eq!(obs["last_query_result"]["entries"].as_array().unwrap().len(), 3);

    error(f.query(&token, &item_spec()), 429, "budget_exhausted");
    let resp = f.rank(&token, &f.candidates(0));
    assert_eq!(resp.status().as_u16(), 200);
    let receipt: Value = resp.json().unwrap();
    assert_schema("Receipt", &receipt);
    assert_eq!(receipt["accepted"], true);

    let trace = &f.env.finished_traces("budget")[0];
    assert_eq!(trace.seeks, 1);
    assert_eq!(trace.steps.len(), 3);
    assert!(trace.steps[1].error.as_deref().unwrap().contains("budget"));
    assert!(trace.outcome.is_valid());
}

#[test]
fn malformed_spec_costs_nothing() {
    let f = start(1, EnvConfig { budget: 2, ..EnvConfig::default() });
    let (token, _) = f.open("spec", 0);
    for bad in [
        json!({"entity_type": "item", "sort_method": "date"}),
        json!({"entity_type": "item", "sort_method": "popularity", "page": {"limit": 0}}),
        json!({"entity_type": "planet", "sort_method": "popularity"}),
        json!({"entity_type": "review", "sort_method": "relevance"}),
        json!({"entity_type": "item", "sort_method": "popularity", "filters": {"by_colour": "red"}}),
    ] {
        error(f.query(&token, &bad), 400, "malformed_spec");
    }
    let obs: Value = f.query(&token, &item_spec()).json().unwrap();
    assert_eq!(obs["budget_remaining"], 1);
}

#[test]
fn duplicate_item_invalidates_the_session() {
    let f = start(1, EnvConfig::default());
    let (token, _) = f.open("dup", 0);
    let mut ranking = f.candidates(0);
    ranking[1] = ranking[0].clone();
    error(f.rank(&token, &ranking), 422, "malformed_ranking");
    error(f.query(&token, &item_spec()), 410, "session_closed");
    error(f.rank(&token, &f.candidates(0)), 410, "session_closed");
    let report: Value = f.metrics("dup", false).json().unwrap();
    assert_eq!(report["overall"]["counts"]["invalid"], 1);
}

#[test]
fn receipts_never_carry_correctness() {
    let f = start(2, EnvConfig::default());
    let (right, _) = f.open("rx", 0);
    let (wrong, _) = f.open("rx", 1);
    let mut bad = f.perfect(1);
    bad.reverse();
    let a: Value = f.rank(&right, &f.perfect(0)).json().unwrap();
    let b: Value = f.rank(&wrong, &bad).json().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.as_object().unwrap().keys().collect::<Vec<_>>(), ["accepted", "reason"]);
}

#[test]
fn unknown_things_and_reopened_tasks() {
    let f = start(1, EnvConfig::default());
    error(f.query("0123456789abcdef0123456789abcdef", &item_spec()), 404, "not_found");
    let resp = client()
        .post(f.server.url("/runs/r/sessions"))
        .json(&json!({"task_id": "nope"}))
        .send()
        .unwrap();
    error(resp, 404, "not_found");
    let (token, _) = f.open("r", 0);
    let again = client()
        .post(f.server.url("/runs/r/sessions"))
        .json(&json!({"task_id": f.bundle.tasks[0].task_id}))
        .send()
        .unwrap();
    error(again, 409, "conflict");
    error(f.metrics("never", true), 404, "not_found");
    f.rank(&token, &f.candidates(0));
}

#[test]
fn tokens_do_not_encode_the_task() {
    let f = start(3, EnvConfig::default());
    let tokens: Vec<String> = (0..3).map(|t| f.open("tok", t).0).collect();
    for (t, token) in tokens.iter().enumerate() {
        assert!(!token.contains(&f.bundle.tasks[t].task_id));
        assert!(!token.contains(&format!("{t:05}")));
    }
    let mut sorted = tokens.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 3);
}

#[test]
fn metrics_full_and_partial() {
    let f = start(3, EnvConfig::default());
    let tokens: Vec<String> = (0..3).map(|t| f.open("m", t).0).collect();
    for t in 0..2 {
        f.rank(&tokens[t], &f.perfect(t));
    }
    error(f.metrics("m", false), 409, "conflict");
    let partial: Value = f.metrics("m", true).json().unwrap();
    assert_schema("MetricReport", &partial);
    assert_eq!(partial["overall"]["counts"]["tasks"], 2);
    f.rank(&tokens[2], &f.perfect(2));
    let full: Value = f.metrics("m", false).json().unwrap();
    assert_schema("MetricReport", &full);
    assert_eq!(full["overall"]["avg_hr_percent"], 100.0);
    assert_eq!(full["overall"]["counts"]["tasks"], 3);

    // the persisted trace file re-scores to the same report
    let traces = agentrec::util::read_jsonl(&f._traces.path().join("m.traces.jsonl")).unwrap();
    let offline = report_from_traces(&traces, &answer_key(std::slice::from_ref(&f.bundle)), None).unwrap();
    assert_eq!(canonical_json(&offline), canonical_json(&full));
}

#[test]
fn idle_sessions_expire_as_budget_exhausted() {
    let f = start(1, EnvConfig { idle_timeout: Duration::from_millis(300), ..EnvConfig::default() });
    let (token, _) = f.open("idle", 0);
    std::thread::sleep(Duration::from_millis(2500));
    error(f.query(&token, &item_spec()), 410, "session_closed");
    let trace = &f.env.finished_traces("idle")[0];
    assert_eq!(trace.outcome, agentrec::episode::EpisodeOutcome::BudgetExhausted);
    assert_eq!(trace.final_ranking.as_ref().unwrap().0, f.candidates(0));
}

#[test]
fn concurrent_sessions_on_different_tasks() {
    let f = start(8, EnvConfig::default());
    let base = f.server.base.clone();
    let work: Vec<(String, Vec<String>)> = (0..8).map(|t| (f.open("par", t).0, f.perfect(t))).collect();
    std::thread::scope(|s| {
        for (token, ranking) in &work {
            let base = base.clone();
            s.spawn(move || {
                let http = client();
                for _ in 0..5 {
                    let r = http
                        .post(format!("{base}/sessions/{token}/query"))
                        .body(item_spec().to_string())
                        .send()
                        .unwrap();
                    assert_eq!(r.status().as_u16(), 200);
                }
                let r = http
                    .post(format!("{base}/sessions/{token}/ranking"))
                    .json(&json!({ "ranking": ranking }))
                    .send()
                    .unwrap();
                assert_eq!(r.status().as_u16(), 200);
            });
        }
    });
    let report: Value = f.metrics("par", false).json().unwrap();
    assert_eq!(report["overall"]["counts"]["tasks"], 8);
    assert_eq!(report["overall"]["avg_hr_percent"], 100.0);
}

#[test]
fn in_process_and_wire_observations_agree() {
    let store: UriStore = fixture_store();
    let f = start(2, EnvConfig::default());
    let (token, _) = f.open("eq", 1);
    let spec = json!({
        "entity_type": "review",
        "sort_method": "date",
        "textual_formation": true,
        "filters": {"by_user_id": f.bundle.tasks[1].target_user},
        "page": {"limit": 100}
    });
    let wire: Value = f.query(&token, &spec).json().unwrap();
    let tasks = agentrec::bundle::prepare_tasks(&store, std::slice::from_ref(&f.bundle)).unwrap();
    let parsed = agentrec::query::QuerySpec::parse_json(&spec.to_string()).unwrap();
    let local = agentrec::query::query(&store, &tasks[1].mask, &parsed).unwrap();
    assert_eq!(canonical_json(&wire["last_query_result"]), canonical_json(&local));
}
