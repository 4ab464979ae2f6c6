//! Session-based environment shared by the HTTP server and the C ABI.
//!
//! Each session runs one task for one run. Sessions are single-use: a
//! `(run, task)` pair can be opened once. Finished episodes are kept per run
//! for metrics and optionally appended to `<trace_dir>/<run>.traces.jsonl`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, TryLockError};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::PreparedTask;
use crate::episode::{
    AgentAction, EpisodeOutcome, EpisodeTrace, InvalidReason, Observation, Ranking, TaskView, TraceStep,
    DEFAULT_BUDGET,
};
use crate::metrics::{report_from_traces, MetricReport, MetricsError};
use crate::query::{query, QuerySpec};
use crate::store::UriStore;
use crate::taskgen::{PublicTask, TaskAnswer};
use crate::util::json_digest;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    BudgetExhausted,
    MalformedSpec,
    MalformedRanking,
    SessionClosed,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::NotFound => 404,
            ErrorCode::Conflict => 409,
            ErrorCode::BudgetExhausted => 429,
            ErrorCode::MalformedSpec => 400,
            ErrorCode::MalformedRanking => 422,
            ErrorCode::SessionClosed => 410,
            ErrorCode::Internal => 500,
        }
    }
}

/// Wire form of every error: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
}

impl ServiceError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ServiceError { code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub task_id: String,
    #[serde(default)]
    pub agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_token: String,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRanking {
    pub ranking: Ranking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub accepted: bool,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub budget: u32,
    pub idle_timeout: Duration,
    pub trace_dir: Option<PathBuf>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            budget: DEFAULT_BUDGET,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            trace_dir: None,
        }
    }
}

struct Session {
    run_id: String,
    agent: String,
    task: Arc<PreparedTask>,
    observation: Observation,
    steps: Vec<TraceStep>,
    seeks: u32,
    last_activity: Instant,
    closed: bool,
}

#[derive(Default)]
struct State {
    sessions: HashMap<String, Arc<Mutex<Session>>>,
    opened: HashMap<(String, String), String>,
    finished: BTreeMap<String, Vec<EpisodeTrace>>,
}

pub struct Environment {
    store: Arc<UriStore>,
    tasks: BTreeMap<String, Arc<PreparedTask>>,
    answers: BTreeMap<String, TaskAnswer>,
    config: EnvConfig,
    state: Mutex<State>,
}

fn not_found(what: &str, id: &str) -> ServiceError {
    ServiceError::new(ErrorCode::NotFound, format!("unknown {what} {id}"))
}

impl Environment {
    pub fn new(store: Arc<UriStore>, tasks: Vec<PreparedTask>, config: EnvConfig) -> Environment {
        let answers = tasks.iter().map(|t| (t.task.task_id.clone(), t.task.answer())).collect();
        Environment {
            store,
            tasks: tasks.into_iter().map(|t| (t.task.task_id.clone(), Arc::new(t))).collect(),
            answers,
            config,
            state: Mutex::new(State::default()),
        }
    }

    pub fn store(&self) -> &UriStore {
        &self.store
    }

    pub fn public_tasks(&self) -> Vec<PublicTask> {
        self.tasks.values().map(|t| t.task.public()).collect()
    }

    fn state(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create_session(&self, run_id: &str, request: &CreateSession) -> Result<SessionCreated, ServiceError> {
        self.expire_idle();
        let task = self
            .tasks
            .get(&request.task_id)
            .ok_or_else(|| not_found("task", &request.task_id))?
            .clone();
        let mut state = self.state();
        let key = (run_id.to_string(), request.task_id.clone());
        if state.opened.contains_key(&key) {
            return Err(ServiceError::new(
                ErrorCode::Conflict,
                format!("run {run_id} already has a session for task {}", request.task_id),
            ));
        }
        let token = hex::encode(rand::rng().random::<[u8; 16]>());
        let observation = Observation {
            task_view: TaskView::of(&task.task, &task.scenario_description),
            last_query_result: None,
            last_error: None,
            budget_remaining: self.config.budget,
            step_index: 0,
        };
        let session = Session {
            run_id: run_id.to_string(),
            agent: request.agent.clone().unwrap_or_else(|| "remote".into()),
            task,
            observation: observation.clone(),
            steps: Vec::new(),
            seeks: 0,
            last_activity: Instant::now(),
            closed: false,
        };
        state.opened.insert(key, token.clone());
        state.sessions.insert(token.clone(), Arc::new(Mutex::new(session)));
        Ok(SessionCreated { session_token: token, observation })
    }

    /// Locks a live session. A second in-flight action on the same session
    /// is a conflict rather than a wait.
    fn with_session<T>(
        &self,
        token: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        self.expire_idle();
        let session = self
            .state()
            .sessions
            .get(token)
            .cloned()
            .ok_or_else(|| not_found("session", token))?;
        let mut guard = match session.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => {
                return Err(ServiceError::new(ErrorCode::Conflict, "another action is in flight for this session"))
            }
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        if guard.closed {
            return Err(ServiceError::new(ErrorCode::SessionClosed, "session is closed"));
        }
        guard.last_activity = Instant::now();
        f(&mut guard)
    }

    /// Runs one seek. Malformed specs come back as errors and do not
    /// consume budget. A seek with no budget left is refused and logged; the
    /// session stays open for the final ranking.
    pub fn query(&self, token: &str, raw_spec: &str) -> Result<Observation, ServiceError> {
        let spec = QuerySpec::parse_json(raw_spec)
            .map_err(|e| ServiceError::new(ErrorCode::MalformedSpec, e.to_string()));
        self.with_session(token, |session| {
            let spec = spec?;
            let observation_digest = json_digest(&session.observation);
            if session.observation.budget_remaining == 0 {
                let message = "query budget exhausted; submit a ranking";
                session.steps.push(TraceStep {
                    step_index: session.observation.step_index,
                    observation_digest,
                    action: AgentAction::Seek { query: spec },
                    result_digest: None,
                    error: Some(message.into()),
                });
                return Err(ServiceError::new(ErrorCode::BudgetExhausted, message));
            }
            let result = query(&self.store, &session.task.mask, &spec)
                .map_err(|e| ServiceError::new(ErrorCode::MalformedSpec, e.to_string()))?;
            session.steps.push(TraceStep {
                step_index: session.observation.step_index,
                observation_digest,
                action: AgentAction::Seek { query: spec },
                result_digest: Some(json_digest(&result)),
                error: None,
            });
            session.seeks += 1;
            let obs = &mut session.observation;
            obs.last_query_result = Some(result);
            obs.last_error = None;
            obs.budget_remaining -= 1;
            obs.step_index += 1;
            Ok(obs.clone())
        })
    }

    /// Scores nothing yet: records the ranking and closes the session. A
    /// malformed ranking closes it as invalid.
    pub fn submit(&self, token: &str, ranking: Ranking) -> Result<Receipt, ServiceError> {
        self.with_session(token, |session| {
            let verdict = ranking.validate(&session.task.task.candidate_set.item_ids);
            session.steps.push(TraceStep {
                step_index: session.observation.step_index,
                observation_digest: json_digest(&session.observation),
                action: AgentAction::Recommend { ranking: ranking.clone() },
                result_digest: None,
                error: verdict.as_ref().err().map(|e| e.to_string()),
            });
            match verdict {
                Ok(()) => {
                    self.finalize(session, Some(ranking), EpisodeOutcome::Completed);
                    Ok(Receipt { accepted: true, reason: "completed".into() })
                }
                Err(e) => {
                    self.finalize(
                        session,
                        None,
                        EpisodeOutcome::Invalid {
                            reason: InvalidReason::MalformedRanking,
                            detail: e.to_string(),
                        },
                    );
                    Err(ServiceError::new(ErrorCode::MalformedRanking, e.to_string()))
                }
            }
        })
    }

    fn finalize(&self, session: &mut Session, ranking: Option<Ranking>, outcome: EpisodeOutcome) {
        session.closed = true;
        let task = &session.task.task;
        let trace = EpisodeTrace {
            run_id: session.run_id.clone(),
            task_id: task.task_id.clone(),
            scenario_id: task.scenario_id.clone(),
            family: task.family,
            agent: session.agent.clone(),
            seed: None,
            steps: std::mem::take(&mut session.steps),
            final_ranking: ranking,
            outcome,
            seeks: session.seeks,
            wall_time_ms: None,
        };
        if let Some(dir) = &self.config.trace_dir {
            let path = dir.join(format!("{}.traces.jsonl", trace.run_id));
            let line = serde_json::to_string(&trace).expect("serializable");
            let written = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                eprintln!("warning: could not append trace to {}: {e}", path.display());
            }
        }
        self.state().finished.entry(trace.run_id.clone()).or_default().push(trace);
    }

    /// Closes sessions idle past the timeout as budget-exhausted episodes.
    pub fn expire_idle(&self) -> usize {
        let now = Instant::now();
        let live: Vec<Arc<Mutex<Session>>> = self.state().sessions.values().cloned().collect();
        let mut expired = 0;
        for session in live {
            let Ok(mut s) = session.try_lock() else { continue };
            if !s.closed && now.duration_since(s.last_activity) >= self.config.idle_timeout {
                let ranking = Ranking(s.task.task.candidate_set.item_ids.clone());
                self.finalize(&mut s, Some(ranking), EpisodeOutcome::BudgetExhausted);
                expired += 1;
            }
        }
        expired
    }

    /// Metrics over a run's finished episodes. Without `partial`, a run with
    /// any open session is rejected.
    pub fn metrics(&self, run_id: &str, partial: bool) -> Result<MetricReport, ServiceError> {
        self.expire_idle();
        let (traces, open) = {
            let state = self.state();
            let open = state
                .opened
                .iter()
                .filter(|((run, _), _)| run == run_id)
                .filter_map(|(_, token)| state.sessions.get(token))
                .filter(|s| s.try_lock().map(|s| !s.closed).unwrap_or(true))
                .count();
            (state.finished.get(run_id).cloned().unwrap_or_default(), open)
        };
        if !partial && open > 0 {
            return Err(ServiceError::new(
                ErrorCode::Conflict,
                format!("run {run_id} has {open} open session(s); pass partial=true"),
            ));
        }
        if traces.is_empty() {
            return Err(not_found("run", run_id));
        }
        report_from_traces(&traces, &self.answers, None).map_err(|e| match e {
            MetricsError::EmptyTestSet => not_found("run", run_id),
            other => ServiceError::new(ErrorCode::Internal, other.to_string()),
        })
    }

    pub fn finished_traces(&self, run_id: &str) -> Vec<EpisodeTrace> {
        self.state().finished.get(run_id).cloned().unwrap_or_default()
    }
}
