//! One agent-task episode: observe, act, repeat under a seek budget.

use std::collections::BTreeSet;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::query::{query, QueryRejection, QueryResult, QuerySpec};
use crate::store::UriStore;
use crate::taskgen::{Task, TaskFamily};
use crate::util::json_digest;
use crate::visibility::VisibilityMask;

pub const DEFAULT_BUDGET: u32 = 50;

/// An ordered permutation of a task's candidates, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ranking(pub Vec<String>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RankingError {
    #[error("expected {expected} items, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("item {0} appears more than once")]
    Duplicate(String),
    #[error("item {0} is not a candidate")]
    NotACandidate(String),
}

impl Ranking {
    /// Checks that the ranking is exactly the candidate set, each item once.
    pub fn validate(&self, candidates: &[String]) -> Result<(), RankingError> {
        let allowed: BTreeSet<&str> = candidates.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for item in &self.0 {
            if !allowed.contains(item.as_str()) {
                return Err(RankingError::NotACandidate(item.clone()));
            }
            if !seen.insert(item.as_str()) {
                return Err(RankingError::Duplicate(item.clone()));
            }
        }
        if self.0.len() != candidates.len() {
            return Err(RankingError::WrongLength {
                expected: candidates.len(),
                got: self.0.len(),
            });
        }
        Ok(())
    }

    /// One-based position of `item`, if present.
    pub fn position(&self, item: &str) -> Option<usize> {
        self.0.iter().position(|x| x == item).map(|p| p + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentAction {
    Seek { query: QuerySpec },
    Recommend { ranking: Ranking },
}

/// What the agent is told about its task. Carries no ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub target_user: String,
    pub candidates: Vec<String>,
    pub scenario_description: String,
}

impl TaskView {
    pub fn of(task: &Task, scenario_description: &str) -> TaskView {
        TaskView {
            task_id: task.task_id.clone(),
            target_user: task.target_user.clone(),
            candidates: task.candidate_set.item_ids.clone(),
            scenario_description: scenario_description.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub task_view: TaskView,
    pub last_query_result: Option<QueryResult>,
    /// Set instead of a result when the last seek was malformed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<QueryRejection>,
    pub budget_remaining: u32,
    pub step_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct AgentError(pub String);

/// A policy over observations. Implementations must be deterministic given
/// their construction seed and the observations they receive.
pub trait Agent {
    fn name(&self) -> &str;
    fn act(&mut self, observation: &Observation) -> Result<AgentAction, AgentError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    MalformedRanking,
    AgentError,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidReason::MalformedRanking => "malformed ranking",
            InvalidReason::AgentError => "agent_error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Completed,
    /// No recommendation within budget; the given order stands in.
    BudgetExhausted,
    Invalid { reason: InvalidReason, detail: String },
}

impl EpisodeOutcome {
    pub fn is_valid(&self) -> bool {
        !matches!(self, EpisodeOutcome::Invalid { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_index: u32,
    pub observation_digest: String,
    pub action: AgentAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub run_id: String,
    pub task_id: String,
    pub scenario_id: String,
    pub family: TaskFamily,
    pub agent: String,
    /// Run-level seed the agent was derived from, when there is one.
    #[serde(default)]
    pub seed: Option<u64>,
    pub steps: Vec<TraceStep>,
    pub final_ranking: Option<Ranking>,
    pub outcome: EpisodeOutcome,
    pub seeks: u32,
    /// Only recorded on request, so persisted traces stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub run_id: String,
    pub budget: u32,
    pub seed: Option<u64>,
    pub record_timing: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            run_id: "run".into(),
            budget: DEFAULT_BUDGET,
            seed: None,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EpisodeError {
    #[error("budget must be at least 1")]
    ZeroBudget,
}

fn invoke(agent: &mut dyn Agent, observation: &Observation) -> Result<AgentAction, AgentError> {
    match catch_unwind(AssertUnwindSafe(|| agent.act(observation))) {
        Ok(result) => result,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "agent panicked".into());
            Err(AgentError(msg))
        }
    }
}

/// Runs the observe/act loop for one task.
///
/// `mask` must already carry the task's hiding layer. Every seek, including
/// a malformed one, consumes one unit of budget, so the trace holds at most
/// `budget` seeks plus the final recommendation. When the budget is spent the
/// agent gets one last observation; a further seek ends the episode with the
/// candidates in their given order.
pub fn run_episode(
    store: &UriStore,
    mask: &VisibilityMask,
    task: &Task,
    scenario_description: &str,
    agent: &mut dyn Agent,
    config: &EpisodeConfig,
) -> Result<EpisodeTrace, EpisodeError> {
    if config.budget == 0 {
        return Err(EpisodeError::ZeroBudget);
    }
    let started = Instant::now();
    let mut observation = Observation {
        task_view: TaskView::of(task, scenario_description),
        last_query_result: None,
        last_error: None,
        budget_remaining: config.budget,
        step_index: 0,
    };
    let mut steps = Vec::new();
    let mut seeks = 0;

    let (final_ranking, outcome) = loop {
        let observation_digest = json_digest(&observation);
        let action = match invoke(agent, &observation) {
            Ok(action) => action,
            Err(err) => {
                break (
                    None,
                    EpisodeOutcome::Invalid {
                        reason: InvalidReason::AgentError,
                        detail: err.0,
                    },
                )
            }
        };
        match action {
            AgentAction::Recommend { ranking } => {
                let verdict = ranking.validate(&task.candidate_set.item_ids);
                steps.push(TraceStep {
                    step_index: observation.step_index,
                    observation_digest,
                    action: AgentAction::Recommend { ranking: ranking.clone() },
                    result_digest: None,
                    error: verdict.as_ref().err().map(|e| e.to_string()),
                });
                break match verdict {
                    Ok(()) => (Some(ranking), EpisodeOutcome::Completed),
                    Err(e) => (
                        None,
                        EpisodeOutcome::Invalid {
                            reason: InvalidReason::MalformedRanking,
                            detail: e.to_string(),
                        },
                    ),
                };
            }
            AgentAction::Seek { .. } if observation.budget_remaining == 0 => {
                break (
                    Some(Ranking(task.candidate_set.item_ids.clone())),
                    EpisodeOutcome::BudgetExhausted,
                );
            }
            AgentAction::Seek { query: spec } => {
                seeks += 1;
                let outcome = query(store, mask, &spec);
                let (result, error) = match outcome {
                    Ok(result) => (Some(result), None),
                    Err(e) => (None, Some(e.rejection())),
                };
                steps.push(TraceStep {
                    step_index: observation.step_index,
                    observation_digest,
                    action: AgentAction::Seek { query: spec },
                    result_digest: result.as_ref().map(json_digest),
                    error: error.as_ref().map(|e| e.reason.clone()),
                });
                observation.last_query_result = result;
                observation.last_error = error;
                observation.budget_remaining -= 1;
                observation.step_index += 1;
            }
        }
    };

    Ok(EpisodeTrace {
        run_id: config.run_id.clone(),
        task_id: task.task_id.clone(),
        scenario_id: task.scenario_id.clone(),
        family: task.family,
        agent: agent.name().to_string(),
        seed: config.seed,
        steps,
        final_ranking,
        outcome,
        seeks,
        wall_time_ms: config.record_timing.then(|| started.elapsed().as_millis() as u64),
    })
}
