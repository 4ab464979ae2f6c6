//! Reference agents: random, popularity, content similarity and an oracle
//! that reads the answer key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::episode::{Agent, AgentAction, AgentError, Observation, Ranking};
use crate::query::{
    relevance_score, tokenize, EntityType, EntityView, Entry, Page, QueryFilters, QuerySpec, SortMethod, MAX_PAGE_LIMIT,
};
use crate::store::{ItemRecord, Stats};
use crate::taskgen::TaskAnswer;
use crate::util::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Random,
    Popularity,
    ContentSim,
    Oracle,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Random, AgentKind::Popularity, AgentKind::ContentSim, AgentKind::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Random => "random",
            AgentKind::Popularity => "popularity",
            AgentKind::ContentSim => "contentsim",
            AgentKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentBuildError {
    #[error("unknown agent `{0}` (expected random, popularity, contentsim or oracle)")]
    Unknown(String),
    #[error("the oracle agent needs the answers file")]
    OracleWithoutAnswers,
}

impl FromStr for AgentKind {
    type Err = AgentBuildError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| AgentBuildError::Unknown(s.to_string()))
    }
}

/// Builds a fresh agent for one episode.
pub fn build_agent(
    kind: AgentKind,
    seed: u64,
    answers: Option<Arc<BTreeMap<String, TaskAnswer>>>,
) -> Result<Box<dyn Agent + Send>, AgentBuildError> {
    Ok(match kind {
        AgentKind::Random => Box::new(RandomAgent::new(seed)),
        AgentKind::Popularity => Box::new(PopularityAgent::default()),
        AgentKind::ContentSim => Box::new(ContentSimAgent::default()),
        AgentKind::Oracle => Box::new(OracleAgent::new(answers.ok_or(AgentBuildError::OracleWithoutAnswers)?)),
    })
}

/// Uniform permutation of the candidates, no seeks. The shuffle is keyed by
/// task id, so results do not depend on episode order.
pub struct RandomAgent {
    seed: u64,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent { seed }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, observation: &Observation) -> Result<AgentAction, AgentError> {
        let view = &observation.task_view;
        let mut items = view.candidates.clone();
        items.shuffle(&mut seeded_rng(derive_seed(self.seed, &["random-agent", &view.task_id])));
        Ok(AgentAction::Recommend { ranking: Ranking(items) })
    }
}

fn item_ids(entries: &[Entry]) -> impl Iterator<Item = String> + '_ {
    entries.iter().filter_map(|e| match e {
        Entry::Structured(map) => map.get("item_id").and_then(|v| v.as_str()).map(String::from),
        Entry::Text(_) => None,
    })
}

/// Completes a partial order with the remaining candidates in given order.
fn complete(order: Vec<String>, candidates: &[String]) -> Ranking {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out: Vec<String> = Vec::with_capacity(candidates.len());
    let allowed: BTreeSet<&String> = candidates.iter().collect();
    for id in order.into_iter().chain(candidates.iter().cloned()) {
        if allowed.contains(&id) && seen.insert(id.clone()) {
            out.push(id);
        }
    }
    Ranking(out)
}

/// Ranks candidates by visible review count, highest first, ties by id.
#[derive(Default)]
pub struct PopularityAgent {
    asked: bool,
}

impl Agent for PopularityAgent {
    fn name(&self) -> &str {
        "popularity"
    }

    fn act(&mut self, observation: &Observation) -> Result<AgentAction, AgentError> {
        let candidates = &observation.task_view.candidates;
        if !self.asked && observation.budget_remaining > 0 {
            self.asked = true;
            let mut spec = QuerySpec::new(EntityType::Item, SortMethod::Popularity);
            spec.filters.id_list = Some(candidates.clone());
            spec.page.limit = MAX_PAGE_LIMIT;
            return Ok(AgentAction::Seek { query: spec });
        }
        let order = observation
            .last_query_result
            .as_ref()
            .map(|r| item_ids(&r.entries).collect())
            .unwrap_or_default();
        Ok(AgentAction::Recommend { ranking: complete(order, candidates) })
    }
}

#[derive(Default)]
enum SimPhase {
    #[default]
    Start,
    History { offset: usize },
    Candidates { offset: usize },
}

/// Ranks candidates by the relevance of their name and metadata to the
/// tokens of the target user's visible reviews. Pages through the reviews by
/// date, then fetches the candidates sorted by popularity, which is also the
/// order among equal scores and the fallback for an empty history.
#[derive(Default)]
pub struct ContentSimAgent {
    phase: SimPhase,
    history: BTreeSet<String>,
    records: Vec<ItemRecord>,
}

impl ContentSimAgent {
    fn history_spec(user: &str, offset: usize) -> QuerySpec {
        QuerySpec {
            filters: QueryFilters {
                by_user_id: Some(user.to_string()),
                ..QueryFilters::default()
            },
            page: Page { offset, limit: MAX_PAGE_LIMIT },
            ..QuerySpec::new(EntityType::Review, SortMethod::Date)
        }
    }

    fn candidates_spec(candidates: &[String], offset: usize) -> QuerySpec {
        QuerySpec {
            filters: QueryFilters {
                id_list: Some(candidates.to_vec()),
                ..QueryFilters::default()
            },
            page: Page { offset, limit: MAX_PAGE_LIMIT },
            ..QuerySpec::new(EntityType::Item, SortMethod::Popularity)
        }
    }

    fn rank(&self, candidates: &[String]) -> Ranking {
        let terms: Vec<String> = self.history.iter().cloned().collect();
        let mut scored: Vec<(String, f64)> = self
            .records
            .iter()
            .map(|r| {
                let stats = Stats {
                    review_count: r.review_count,
                    average_rating: r.average_rating,
                };
                (r.item_id.clone(), relevance_score(&terms, &EntityView::Item(r, stats)))
            })
            .collect();
        // stable: equal scores keep popularity order
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        complete(scored.into_iter().map(|(id, _)| id).collect(), candidates)
    }
}

impl Agent for ContentSimAgent {
    fn name(&self) -> &str {
        "contentsim"
    }

    fn act(&mut self, observation: &Observation) -> Result<AgentAction, AgentError> {
        let view = &observation.task_view;
        let result = observation.last_query_result.as_ref();
        let next = match self.phase {
            SimPhase::Start => Some(SimPhase::History { offset: 0 }),
            SimPhase::History { offset } => match result {
                Some(r) => {
                    for e in &r.entries {
                        if let Entry::Structured(map) = e {
                            if let Some(text) = map.get("text").and_then(|v| v.as_str()) {
                                self.history.extend(tokenize(text));
                            }
                        }
                    }
                    if r.truncated {
                        Some(SimPhase::History { offset: offset + r.entries.len() })
                    } else {
                        Some(SimPhase::Candidates { offset: 0 })
                    }
                }
                None => Some(SimPhase::Candidates { offset: 0 }),
            },
            SimPhase::Candidates { offset } => match result {
                Some(r) => {
                    for e in &r.entries {
                        if let Entry::Structured(map) = e {
                            if let Ok(rec) = serde_json::from_value::<ItemRecord>(map.clone().into()) {
                                self.records.push(rec);
                            }
                        }
                    }
                    r.truncated.then(|| SimPhase::Candidates { offset: offset + r.entries.len() })
                }
                None => None,
            },
        };
        // keep one seek for the candidate fetch while still reading history
        let reserve = matches!(next, Some(SimPhase::History { .. })) as u32;
        match next {
            Some(phase) if observation.budget_remaining > reserve => {
                let spec = match &phase {
                    SimPhase::History { offset } => Self::history_spec(&view.target_user, *offset),
                    SimPhase::Candidates { offset } => Self::candidates_spec(&view.candidates, *offset),
                    SimPhase::Start => unreachable!(),
                };
                self.phase = phase;
                Ok(AgentAction::Seek { query: spec })
            }
            Some(SimPhase::History { .. }) if observation.budget_remaining > 0 => {
                self.phase = SimPhase::Candidates { offset: 0 };
                Ok(AgentAction::Seek { query: Self::candidates_spec(&view.candidates, 0) })
            }
            _ => Ok(AgentAction::Recommend { ranking: self.rank(&view.candidates) }),
        }
    }
}

/// Puts the held-out positive first and the rest in id order. An upper
/// bound that exercises the scoring path; it never queries.
pub struct OracleAgent {
    answers: Arc<BTreeMap<String, TaskAnswer>>,
}

impl OracleAgent {
    pub fn new(answers: Arc<BTreeMap<String, TaskAnswer>>) -> Self {
        OracleAgent { answers }
    }
}

impl Agent for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn act(&mut self, observation: &Observation) -> Result<AgentAction, AgentError> {
        let view = &observation.task_view;
        let answer = self
            .answers
            .get(&view.task_id)
            .ok_or_else(|| AgentError(format!("no answer for task {}", view.task_id)))?;
        let mut rest: Vec<String> = view
            .candidates
            .iter()
            .filter(|c| **c != answer.positive_item)
            .cloned()
            .collect();
        rest.sort();
        let mut items = vec![answer.positive_item.clone()];
        items.extend(rest);
        Ok(AgentAction::Recommend { ranking: Ranking(items) })
    }
}
