//! Textual recommendation environment: a read-only store of users, items and
//! reviews, leak-free scenario views, task generation, an episode runner for
//! tool-using agents, and Hit-Rate@N evaluation.

pub mod agents;
pub mod bundle;
pub mod episode;
pub mod http;
pub mod ingest;
pub mod leaderboard;
pub mod metrics;
pub mod query;
pub mod runner;
pub mod service;
pub mod store;
pub mod synth;
pub mod taskgen;
pub mod util;
pub mod validate;
pub mod visibility;

pub use episode::{run_episode, Agent, AgentAction, EpisodeConfig, EpisodeTrace, Observation, Ranking};
pub use metrics::{hit_rate_at_n, MetricReport};
pub use query::{query, QuerySpec, QueryResult};
pub use store::UriStore;
pub use visibility::{build_mask, MaskedView, Scenario, VisibilityMask};
