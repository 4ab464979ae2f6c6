//! Evaluation task sampling for the five scenario families, and the
//! 20-item candidate sets (one positive, nineteen sampled negatives).

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::store::UriStore;
use crate::util::{derive_seed, seeded_rng};
use crate::visibility::{apply_task_hiding, build_mask, MaskedView, Scenario, VisibilityError, VisibilityMask};

pub const CANDIDATE_COUNT: usize = 20;
pub const NEGATIVE_COUNT: usize = CANDIDATE_COUNT - 1;

pub const DAY_SECS: i64 = 86_400;
pub const LONG_WINDOW_DAYS: i64 = 92;
pub const SHORT_WINDOW_DAYS: i64 = 7;

pub const CLASSIC_MIN_REVIEWS: usize = 2;
pub const LONG_TERM_MIN_REVIEWS: usize = 5;
pub const SHORT_TERM_MIN_REVIEWS: usize = 2;
/// Item cold-start targets keep a non-empty history after hiding.
pub const ITEM_COLD_MIN_USER_REVIEWS: usize = 2;

pub const DEFAULT_USER_COLD_THRESHOLD: u64 = 5;
pub const DEFAULT_ITEM_COLD_THRESHOLD: u64 = 10;
pub const DEFAULT_TASK_COUNT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Classic,
    LongTerm,
    ShortTerm,
    UserCold,
    ItemCold,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 5] = [
        TaskFamily::Classic,
        TaskFamily::LongTerm,
        TaskFamily::ShortTerm,
        TaskFamily::UserCold,
        TaskFamily::ItemCold,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Classic => "classic",
            TaskFamily::LongTerm => "long_term",
            TaskFamily::ShortTerm => "short_term",
            TaskFamily::UserCold => "user_cold",
            TaskFamily::ItemCold => "item_cold",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Long,
    Short,
}

impl Horizon {
    pub fn window_secs(self) -> i64 {
        match self {
            Horizon::Long => LONG_WINDOW_DAYS * DAY_SECS,
            Horizon::Short => SHORT_WINDOW_DAYS * DAY_SECS,
        }
    }

    pub fn min_reviews(self) -> usize {
        match self {
            Horizon::Long => LONG_TERM_MIN_REVIEWS,
            Horizon::Short => SHORT_TERM_MIN_REVIEWS,
        }
    }

    fn family(self) -> TaskFamily {
        match self {
            Horizon::Long => TaskFamily::LongTerm,
            Horizon::Short => TaskFamily::ShortTerm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColdSide {
    User,
    Item,
}

/// Candidate items in agent-facing (shuffled) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub item_ids: Vec<String>,
    pub positive_index: usize,
}

impl CandidateSet {
    pub fn positive(&self) -> &str {
        &self.item_ids[self.positive_index]
    }
}

/// A full, server-side task. Split with [`Task::public`] and
/// [`Task::answer`] before anything reaches an agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub task_id: String,
    pub scenario_id: String,
    pub family: TaskFamily,
    pub target_user: String,
    pub ground_truth: String,
    pub candidate_set: CandidateSet,
    /// Reviews by the target user dated after the ground truth.
    pub future_hidden: Vec<String>,
}

/// The distributable half of a task: no ground truth, no positive index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicTask {
    pub task_id: String,
    pub scenario_id: String,
    pub family: TaskFamily,
    pub target_user: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAnswer {
    pub task_id: String,
    pub positive_item: String,
    pub positive_index: usize,
    pub ground_truth_review: String,
    #[serde(default)]
    pub future_hidden: Vec<String>,
}

impl Task {
    /// Ground truth first, then future reviews.
    pub fn hidden_reviews(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.ground_truth.as_str()).chain(self.future_hidden.iter().map(String::as_str))
    }

    pub fn positive_item(&self) -> &str {
        self.candidate_set.positive()
    }

    pub fn public(&self) -> PublicTask {
        PublicTask {
            task_id: self.task_id.clone(),
            scenario_id: self.scenario_id.clone(),
            family: self.family,
            target_user: self.target_user.clone(),
            candidates: self.candidate_set.item_ids.clone(),
        }
    }

    pub fn answer(&self) -> TaskAnswer {
        TaskAnswer {
            task_id: self.task_id.clone(),
            positive_item: self.positive_item().to_string(),
            positive_index: self.candidate_set.positive_index,
            ground_truth_review: self.ground_truth.clone(),
            future_hidden: self.future_hidden.clone(),
        }
    }

    pub fn from_parts(public: PublicTask, answer: TaskAnswer) -> Result<Task, TaskGenError> {
        let consistent = public.task_id == answer.task_id
            && public.candidates.get(answer.positive_index) == Some(&answer.positive_item);
        if !consistent {
            return Err(TaskGenError::AnswerMismatch(public.task_id));
        }
        Ok(Task {
            task_id: public.task_id,
            scenario_id: public.scenario_id,
            family: public.family,
            target_user: public.target_user,
            ground_truth: answer.ground_truth_review,
            candidate_set: CandidateSet {
                item_ids: public.candidates,
                positive_index: answer.positive_index,
            },
            future_hidden: answer.future_hidden,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub user_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Generated {
    pub tasks: Vec<Task>,
    pub warnings: Vec<String>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskGenError {
    #[error("scenario {scenario}: {reason}")]
    ScenarioMismatch { scenario: String, reason: String },
    #[error(transparent)]
    Visibility(#[from] VisibilityError),
    #[error("positive item {0} is not visible")]
    PositiveNotVisible(String),
    #[error("only {available} negatives available for user {user} (need 19)")]
    InsufficientNegatives { user: String, available: usize },
    #[error("cold-start threshold must be at least 1")]
    InvalidThreshold,
    #[error("task {0}: answer does not match the public task")]
    AnswerMismatch(String),
}

fn mismatch(scenario: &Scenario, reason: impl Into<String>) -> TaskGenError {
    TaskGenError::ScenarioMismatch {
        scenario: scenario.scenario_id.clone(),
        reason: reason.into(),
    }
}

/// Samples one positive plus 19 negatives for `target_user`.
///
/// Negatives are drawn uniformly without replacement from visible items the
/// user has no visible review for. Pass the scenario layer: a task-layer mask
/// would let the user's hidden items back into the negative pool.
pub fn build_candidate_set(
    store: &UriStore,
    mask: &VisibilityMask,
    target_user: &str,
    positive_item: &str,
    seed: u64,
) -> Result<CandidateSet, TaskGenError> {
    let view = MaskedView::new(store, mask);
    if !view.item_visible(positive_item) {
        return Err(TaskGenError::PositiveNotVisible(positive_item.to_string()));
    }
    let interacted: BTreeSet<&str> = view.reviews_of_user(target_user).map(|r| r.item_id.as_str()).collect();
    let pool: Vec<&str> = mask
        .visible_items()
        .iter()
        .map(String::as_str)
        .filter(|id| *id != positive_item && !interacted.contains(id))
        .collect();
    if pool.len() < NEGATIVE_COUNT {
        return Err(TaskGenError::InsufficientNegatives {
            user: target_user.to_string(),
            available: pool.len(),
        });
    }
    let mut rng = seeded_rng(seed);
    let mut item_ids: Vec<String> = std::iter::once(positive_item.to_string())
        .chain(
            index::sample(&mut rng, pool.len(), NEGATIVE_COUNT)
                .into_iter()
                .map(|i| pool[i].to_string()),
        )
        .collect();
    item_ids.shuffle(&mut rng);
    let positive_index = item_ids
        .iter()
        .position(|id| id == positive_item)
        .expect("positive is in the list");
    Ok(CandidateSet { item_ids, positive_index })
}

/// One eligible target: user plus the review that becomes ground truth.
struct Target {
    user: String,
    ground_truth: String,
}

/// Latest-review targets for users whose visible review count satisfies `keep`.
fn latest_review_targets(store: &UriStore, mask: &VisibilityMask, keep: impl Fn(usize) -> bool) -> Vec<Target> {
    let view = MaskedView::new(store, mask);
    mask.visible_users()
        .iter()
        .filter_map(|user| {
            let reviews: Vec<_> = view.reviews_of_user(user).collect();
            if !keep(reviews.len()) {
                return None;
            }
            reviews.last().map(|r| Target {
                user: user.clone(),
                ground_truth: r.review_id.clone(),
            })
        })
        .collect()
}

fn sample_tasks(
    store: &UriStore,
    scenario: &Scenario,
    mask: &VisibilityMask,
    family: TaskFamily,
    targets: Vec<Target>,
    count: usize,
    seed: u64,
) -> Result<Generated, TaskGenError> {
    let mut out = Generated::default();
    if mask.is_degenerate() {
        out.warnings
            .push(format!("scenario {} leaves no visible reviews", scenario.scenario_id));
    }
    if targets.is_empty() {
        out.warnings
            .push(format!("no eligible {family} target users in scenario {}", scenario.scenario_id));
        return Ok(out);
    }
    let view = MaskedView::new(store, mask);
    let mut order = targets;
    order.shuffle(&mut seeded_rng(derive_seed(seed, &["targets", &scenario.scenario_id])));

    for target in order {
        if out.tasks.len() >= count {
            break;
        }
        let gt = store.review(&target.ground_truth).expect("target review exists");
        let future_hidden: Vec<String> = view
            .reviews_of_user(&target.user)
            .filter(|r| r.time_key() > gt.time_key())
            .map(|r| r.review_id.clone())
            .collect();
        let cand_seed = derive_seed(seed, &["candidates", &scenario.scenario_id, &target.user]);
        match build_candidate_set(store, mask, &target.user, &gt.item_id, cand_seed) {
            Ok(candidate_set) => {
                let task = Task {
                    task_id: format!("{}-{:05}", scenario.scenario_id, out.tasks.len()),
                    scenario_id: scenario.scenario_id.clone(),
                    family,
                    target_user: target.user,
                    ground_truth: target.ground_truth,
                    candidate_set,
                    future_hidden,
                };
                apply_task_hiding(store, mask, &task)?;
                out.tasks.push(task);
            }
            Err(err) => out.skipped.push(Skipped {
                user_id: target.user,
                reason: err.to_string(),
            }),
        }
    }
    if out.tasks.len() < count {
        out.warnings.push(format!(
            "shortfall: generated {} of {count} requested {family} tasks",
            out.tasks.len()
        ));
    }
    Ok(out)
}

/// Full-history tasks: targets have at least two visible reviews; the
/// latest is the ground truth.
pub fn generate_classic_tasks(
    store: &UriStore,
    scenario: &Scenario,
    count: usize,
    seed: u64,
) -> Result<Generated, TaskGenError> {
    if scenario.time_filter.is_some() {
        return Err(mismatch(scenario, "classic scenarios take no time filter"));
    }
    let mask = build_mask(store, scenario)?;
    let targets = latest_review_targets(store, &mask, |n| n >= CLASSIC_MIN_REVIEWS);
    sample_tasks(store, scenario, &mask, TaskFamily::Classic, targets, count, seed)
}

/// Windowed tasks. The scenario's time filter must span exactly the
/// horizon's window (92 or 7 days).
pub fn generate_evolving_tasks(
    store: &UriStore,
    scenario: &Scenario,
    horizon: Horizon,
    count: usize,
    seed: u64,
) -> Result<Generated, TaskGenError> {
    let Some(window) = scenario.time_filter else {
        return Err(mismatch(scenario, "evolving-interest scenarios need a time filter"));
    };
    if window.length_secs() != horizon.window_secs() {
        return Err(mismatch(
            scenario,
            format!(
                "time filter spans {}s, horizon needs {}s",
                window.length_secs(),
                horizon.window_secs()
            ),
        ));
    }
    let mask = build_mask(store, scenario)?;
    let min = horizon.min_reviews();
    let targets = latest_review_targets(store, &mask, |n| n >= min);
    sample_tasks(store, scenario, &mask, horizon.family(), targets, count, seed)
}

/// Cold-start tasks. User side: targets have between 1 and `threshold - 1`
/// visible reviews. Item side: the positive item has fewer than `threshold`
/// visible reviews besides the ground truth itself.
pub fn generate_coldstart_tasks(
    store: &UriStore,
    scenario: &Scenario,
    side: ColdSide,
    threshold: u64,
    count: usize,
    seed: u64,
) -> Result<Generated, TaskGenError> {
    if threshold < 1 {
        return Err(TaskGenError::InvalidThreshold);
    }
    let mask = build_mask(store, scenario)?;
    let (family, targets) = match side {
        ColdSide::User => {
            let max = threshold as usize - 1;
            let targets = latest_review_targets(store, &mask, |n| (1..=max).contains(&n));
            (TaskFamily::UserCold, targets)
        }
        ColdSide::Item => {
            let view = MaskedView::new(store, &mask);
            let targets = mask
                .visible_users()
                .iter()
                .filter_map(|user| {
                    let reviews: Vec<_> = view.reviews_of_user(user).collect();
                    if reviews.len() < ITEM_COLD_MIN_USER_REVIEWS {
                        return None;
                    }
                    reviews
                        .iter()
                        .rev()
                        .find(|r| (view.item_stats(&r.item_id).review_count - 1) < threshold)
                        .map(|r| Target {
                            user: user.clone(),
                            ground_truth: r.review_id.clone(),
                        })
                })
                .collect();
            (TaskFamily::ItemCold, targets)
        }
    };
    sample_tasks(store, scenario, &mask, family, targets, count, seed)
}

/// Dispatches on the scenario's declared family. `count` overrides the
/// scenario's `task_count`.
pub fn generate_for_scenario(
    store: &UriStore,
    scenario: &Scenario,
    count: Option<usize>,
    seed: u64,
) -> Result<Generated, TaskGenError> {
    let family = scenario
        .family
        .ok_or_else(|| mismatch(scenario, "scenario declares no task family"))?;
    let count = count.or(scenario.task_count).unwrap_or(DEFAULT_TASK_COUNT);
    match family {
        TaskFamily::Classic => generate_classic_tasks(store, scenario, count, seed),
        TaskFamily::LongTerm => generate_evolving_tasks(store, scenario, Horizon::Long, count, seed),
        TaskFamily::ShortTerm => generate_evolving_tasks(store, scenario, Horizon::Short, count, seed),
        TaskFamily::UserCold => generate_coldstart_tasks(
            store,
            scenario,
            ColdSide::User,
            scenario.threshold.unwrap_or(DEFAULT_USER_COLD_THRESHOLD),
            count,
            seed,
        ),
        TaskFamily::ItemCold => generate_coldstart_tasks(
            store,
            scenario,
            ColdSide::Item,
            scenario.threshold.unwrap_or(DEFAULT_ITEM_COLD_THRESHOLD),
            count,
            seed,
        ),
    }
}
