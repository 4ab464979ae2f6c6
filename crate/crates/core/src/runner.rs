//! Batch evaluation: one fresh agent per task, run in parallel, traces
//! returned in task order.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::agents::{build_agent, AgentBuildError, AgentKind};
use crate::bundle::PreparedTask;
use crate::episode::{run_episode, EpisodeConfig, EpisodeError, EpisodeTrace};
use crate::store::UriStore;
use crate::taskgen::TaskAnswer;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub run_id: String,
    pub agent: AgentKind,
    pub seed: u64,
    pub budget: u32,
    pub workers: usize,
    pub record_timing: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Agent(#[from] AgentBuildError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Traces do not depend on `workers`: agents are seeded per task and
/// results are collected in input order.
pub fn run_tasks(
    store: &UriStore,
    tasks: &[PreparedTask],
    answers: Option<Arc<BTreeMap<String, TaskAnswer>>>,
    config: &RunConfig,
) -> Result<Vec<EpisodeTrace>, RunError> {
    // fail before spawning anything if the agent cannot be built
    build_agent(config.agent, config.seed, answers.clone())?;
    let episode = EpisodeConfig {
        run_id: config.run_id.clone(),
        budget: config.budget,
        seed: Some(config.seed),
        record_timing: config.record_timing,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let mut agent = build_agent(config.agent, config.seed, answers.clone())?;
                Ok(run_episode(store, &t.mask, &t.task, &t.scenario_description, agent.as_mut(), &episode)?)
            })
            .collect()
    })
}
