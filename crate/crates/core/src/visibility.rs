//! Two-layer visibility control.
//!
//! The scenario layer filters the corpus by time window and item criteria.
//! The task layer hides a task's ground truth (and any later reviews by the
//! target user) on top of it. Every count an agent can observe is computed
//! through [`MaskedView`], so hidden reviews never leak through aggregates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::store::{ItemRecord, ItemType, ReviewRecord, Stats, UriStore, UserRecord};
use crate::taskgen::{Task, TaskFamily};

/// Closed interval of epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeFilter {
    pub start: i64,
    pub end: i64,
}

impl TimeFilter {
    pub fn contains(&self, timestamp: i64) -> bool {
        (self.start..=self.end).contains(&timestamp)
    }

    pub fn length_secs(&self) -> i64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFilter {
    #[serde(default)]
    pub min_review_count: u64,
    /// `None` admits every type.
    #[serde(default)]
    pub item_types: Option<Vec<ItemType>>,
}

impl ItemFilter {
    fn admits(&self, item: &ItemRecord, visible_count: u64) -> bool {
        visible_count >= self.min_review_count
            && self
                .item_types
                .as_ref()
                .is_none_or(|types| types.contains(&item.item_type))
    }
}

/// A scenario document: corpus-wide filters plus the task-generation
/// parameters for the family it is meant for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub time_filter: Option<TimeFilter>,
    #[serde(default)]
    pub item_filter: Option<ItemFilter>,
    /// Keep users with no visible reviews visible as bare profiles.
    #[serde(default)]
    pub expose_profile_without_reviews: bool,
    #[serde(default)]
    pub family: Option<TaskFamily>,
    #[serde(default)]
    pub task_count: Option<usize>,
    /// Cold-start threshold (m for users, n for items).
    #[serde(default)]
    pub threshold: Option<u64>,
}

impl Scenario {
    pub fn new(id: impl Into<String>) -> Scenario {
        Scenario {
            scenario_id: id.into(),
            description: String::new(),
            time_filter: None,
            item_filter: None,
            expose_profile_without_reviews: false,
            family: None,
            task_count: None,
            threshold: None,
        }
    }

    pub fn load(path: &Path) -> Result<Scenario, VisibilityError> {
        let text = std::fs::read_to_string(path).map_err(|e| VisibilityError::Load {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let scenario: Scenario = serde_json::from_str(&text).map_err(|e| VisibilityError::Load {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn check(&self) -> Result<(), VisibilityError> {
        if let Some(tf) = self.time_filter {
            if tf.start > tf.end {
                return Err(VisibilityError::InvertedTimeFilter {
                    start: tf.start,
                    end: tf.end,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisibilityError {
    #[error("time filter start {start} is after end {end}")]
    InvertedTimeFilter { start: i64, end: i64 },
    #[error("review {0} is not visible under the scenario mask")]
    NotVisible(String),
    #[error("loading scenario {path}: {reason}")]
    Load { path: String, reason: String },
}

/// The scenario layer. Immutable and shared between all tasks of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMask {
    scenario_id: String,
    visible_reviews: BTreeSet<String>,
    visible_items: BTreeSet<String>,
    visible_users: BTreeSet<String>,
    user_stats: BTreeMap<String, Stats>,
    item_stats: BTreeMap<String, Stats>,
}

/// Scenario layer plus the task layer's hidden reviews.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    scenario: Arc<ScenarioMask>,
    hidden: BTreeSet<String>,
    adjusted_users: BTreeMap<String, Stats>,
    adjusted_items: BTreeMap<String, Stats>,
}

impl VisibilityMask {
    pub fn scenario_id(&self) -> &str {
        &self.scenario.scenario_id
    }

    /// Reviews visible under the scenario layer, hidden ones included.
    pub fn scenario_reviews(&self) -> &BTreeSet<String> {
        &self.scenario.visible_reviews
    }

    pub fn visible_items(&self) -> &BTreeSet<String> {
        &self.scenario.visible_items
    }

    pub fn visible_users(&self) -> &BTreeSet<String> {
        &self.scenario.visible_users
    }

    pub fn hidden_ground_truth(&self) -> &BTreeSet<String> {
        &self.hidden
    }

    /// Set when filtering left nothing visible: the scenario is degenerate.
    pub fn is_degenerate(&self) -> bool {
        self.scenario.visible_reviews.is_empty()
    }

    /// Drops the task layer.
    pub fn scenario_layer(&self) -> VisibilityMask {
        VisibilityMask {
            scenario: Arc::clone(&self.scenario),
            hidden: BTreeSet::new(),
            adjusted_users: BTreeMap::new(),
            adjusted_items: BTreeMap::new(),
        }
    }

    /// Returns a new mask with `review_ids` hidden. Hiding subtracts only:
    /// every id must be visible under the scenario layer.
    pub fn hide<'a, I>(&self, store: &UriStore, review_ids: I) -> Result<VisibilityMask, VisibilityError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut next = self.clone();
        let mut touched_users = BTreeSet::new();
        let mut touched_items = BTreeSet::new();
        for id in review_ids {
            if !self.scenario.visible_reviews.contains(id) {
                return Err(VisibilityError::NotVisible(id.to_string()));
            }
            let review = store.review(id).ok_or_else(|| VisibilityError::NotVisible(id.to_string()))?;
            next.hidden.insert(id.to_string());
            touched_users.insert(review.user_id.clone());
            touched_items.insert(review.item_id.clone());
        }
        for user in touched_users {
            let stats = {
                let view = MaskedView::new(store, &next);
                Stats::from_ratings(view.reviews_of_user(&user).map(|r| r.rating))
            };
            next.adjusted_users.insert(user, stats);
        }
        for item in touched_items {
            let stats = {
                let view = MaskedView::new(store, &next);
                Stats::from_ratings(view.reviews_of_item(&item).map(|r| r.rating))
            };
            next.adjusted_items.insert(item, stats);
        }
        Ok(next)
    }
}

/// Builds the scenario layer.
///
/// Reviews pass the time filter first; items are then admitted on their
/// in-window review count and type; reviews of rejected items are dropped;
/// users are visible when they author a visible review (all users are
/// visible when there is no time filter, or when the scenario exposes bare
/// profiles).
pub fn build_mask(store: &UriStore, scenario: &Scenario) -> Result<VisibilityMask, VisibilityError> {
    scenario.check()?;
    let in_window: Vec<&ReviewRecord> = store
        .reviews()
        .filter(|r| store.user(&r.user_id).is_some() && store.item(&r.item_id).is_some())
        .filter(|r| scenario.time_filter.is_none_or(|tf| tf.contains(r.timestamp)))
        .collect();
    let mut window_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &in_window {
        *window_counts.entry(r.item_id.as_str()).or_default() += 1;
    }
    let item_filter = scenario.item_filter.clone().unwrap_or_default();
    let visible_items: BTreeSet<String> = store
        .items()
        .filter(|it| item_filter.admits(it, window_counts.get(it.item_id.as_str()).copied().unwrap_or(0)))
        .map(|it| it.item_id.clone())
        .collect();
    let visible_reviews: BTreeSet<String> = in_window
        .iter()
        .filter(|r| visible_items.contains(&r.item_id))
        .map(|r| r.review_id.clone())
        .collect();
    let visible_users: BTreeSet<String> =
        if scenario.time_filter.is_none() || scenario.expose_profile_without_reviews {
            store.users().map(|u| u.user_id.clone()).collect()
        } else {
            visible_reviews
                .iter()
                .map(|id| store.review(id).expect("visible review exists").user_id.clone())
                .collect()
        };

    let mut user_stats = BTreeMap::new();
    for user in &visible_users {
        let ratings = store
            .reviews_of_user(user)
            .filter(|r| visible_reviews.contains(&r.review_id))
            .map(|r| r.rating);
        user_stats.insert(user.clone(), Stats::from_ratings(ratings));
    }
    let mut item_stats = BTreeMap::new();
    for item in &visible_items {
        let ratings = store
            .reviews_of_item(item)
            .filter(|r| visible_reviews.contains(&r.review_id))
            .map(|r| r.rating);
        item_stats.insert(item.clone(), Stats::from_ratings(ratings));
    }

    Ok(VisibilityMask {
        scenario: Arc::new(ScenarioMask {
            scenario_id: scenario.scenario_id.clone(),
            visible_reviews,
            visible_items,
            visible_users,
            user_stats,
            item_stats,
        }),
        hidden: BTreeSet::new(),
        adjusted_users: BTreeMap::new(),
        adjusted_items: BTreeMap::new(),
    })
}

/// Hides the task's ground truth and its future-leak reviews.
pub fn apply_task_hiding(
    store: &UriStore,
    mask: &VisibilityMask,
    task: &Task,
) -> Result<VisibilityMask, VisibilityError> {
    mask.hide(store, task.hidden_reviews())
}

/// Read access to a store through a mask. Everything agents see goes
/// through here.
#[derive(Clone, Copy)]
pub struct MaskedView<'a> {
    pub store: &'a UriStore,
    pub mask: &'a VisibilityMask,
}

impl<'a> MaskedView<'a> {
    pub fn new(store: &'a UriStore, mask: &'a VisibilityMask) -> Self {
        MaskedView { store, mask }
    }

    pub fn review_visible(&self, id: &str) -> bool {
        self.mask.scenario.visible_reviews.contains(id) && !self.mask.hidden.contains(id)
    }

    pub fn item_visible(&self, id: &str) -> bool {
        self.mask.scenario.visible_items.contains(id)
    }

    pub fn user_visible(&self, id: &str) -> bool {
        self.mask.scenario.visible_users.contains(id)
    }

    pub fn review(&self, id: &str) -> Option<&'a ReviewRecord> {
        self.review_visible(id).then(|| self.store.review(id)).flatten()
    }

    pub fn item(&self, id: &str) -> Option<&'a ItemRecord> {
        self.item_visible(id).then(|| self.store.item(id)).flatten()
    }

    pub fn user(&self, id: &str) -> Option<&'a UserRecord> {
        self.user_visible(id).then(|| self.store.user(id)).flatten()
    }

    pub fn user_stats(&self, id: &str) -> Stats {
        self.mask
            .adjusted_users
            .get(id)
            .or_else(|| self.mask.scenario.user_stats.get(id))
            .copied()
            .unwrap_or_default()
    }

    pub fn item_stats(&self, id: &str) -> Stats {
        self.mask
            .adjusted_items
            .get(id)
            .or_else(|| self.mask.scenario.item_stats.get(id))
            .copied()
            .unwrap_or_default()
    }

    pub fn reviews(self) -> impl Iterator<Item = &'a ReviewRecord> + 'a {
        let mask = self.mask;
        let store = self.store;
        mask.scenario
            .visible_reviews
            .iter()
            .filter(move |id| !mask.hidden.contains(*id))
            .filter_map(move |id| store.review(id))
    }

    pub fn items(self) -> impl Iterator<Item = &'a ItemRecord> + 'a {
        let store = self.store;
        self.mask.scenario.visible_items.iter().filter_map(move |id| store.item(id))
    }

    pub fn users(self) -> impl Iterator<Item = &'a UserRecord> + 'a {
        let store = self.store;
        self.mask.scenario.visible_users.iter().filter_map(move |id| store.user(id))
    }

    /// Visible reviews by `user_id`, oldest first.
    pub fn reviews_of_user(self, user_id: &str) -> impl Iterator<Item = &'a ReviewRecord> + 'a {
        self.store
            .reviews_of_user(user_id)
            .filter(move |r| self.review_visible(&r.review_id))
    }

    /// Visible reviews of `item_id`, oldest first.
    pub fn reviews_of_item(self, item_id: &str) -> impl Iterator<Item = &'a ReviewRecord> + 'a {
        self.store
            .reviews_of_item(item_id)
            .filter(move |r| self.review_visible(&r.review_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::tests::review;
    use crate::store::{Platform, UserRecord};

    fn store() -> UriStore {
        UriStore::from_records(
            vec![
                UserRecord::new("u1", Platform::Yelp),
                UserRecord::new("u2", Platform::Yelp),
                UserRecord::new("u3", Platform::Yelp),
            ],
            vec![
                ItemRecord::new("i1", "One", Platform::Yelp),
                ItemRecord::new("i2", "Two", Platform::Yelp),
                ItemRecord::new("i3", "Three", Platform::Yelp),
            ],
            vec![
                review("r1", "u1", "i1", 4.0, 100),
                review("r2", "u1", "i2", 2.0, 200),
                review("r3", "u2", "i2", 5.0, 300),
                review("r9", "u1", "i2", 3.0, 400),
            ],
        )
    }

    #[test]
    fn no_filters_cover_the_whole_store() {
        let store = store();
        let mask = build_mask(&store, &Scenario::new("s")).unwrap();
        assert_eq!(mask.scenario_reviews().len(), 4);
        assert_eq!(mask.visible_items().len(), 3);
        assert_eq!(mask.visible_users().len(), 3);
        assert!(!mask.is_degenerate());
    }

    #[test]
    fn empty_window_is_degenerate() {
        let store = store();
        let mut scenario = Scenario::new("s");
        scenario.time_filter = Some(TimeFilter { start: 1000, end: 2000 });
        let mask = build_mask(&store, &scenario).unwrap();
        assert!(mask.scenario_reviews().is_empty());
        assert!(mask.visible_users().is_empty());
        assert!(mask.is_degenerate());
    }

    #[test]
    fn inverted_window_is_rejected() {
        let mut scenario = Scenario::new("s");
        scenario.time_filter = Some(TimeFilter { start: 5, end: 4 });
        assert!(matches!(
            build_mask(&store(), &scenario),
            Err(VisibilityError::InvertedTimeFilter { .. })
        ));
    }

    #[test]
    fn item_filter_gates_reviews_before_closure() {
        let store = store();
        let mut scenario = Scenario::new("s");
        scenario.time_filter = Some(TimeFilter { start: 0, end: 350 });
        scenario.item_filter = Some(ItemFilter { min_review_count: 2, item_types: None });
        let mask = build_mask(&store, &scenario).unwrap();
        // i2 has two reviews in the window (r2, r3); i1 has one
        assert_eq!(mask.visible_items().iter().collect::<Vec<_>>(), ["i2"]);
        assert_eq!(mask.scenario_reviews().iter().collect::<Vec<_>>(), ["r2", "r3"]);
        assert_eq!(mask.visible_users().iter().collect::<Vec<_>>(), ["u1", "u2"]);
    }

    #[test]
    fn hiding_decrements_only_through_the_view() {
        let store = store();
        let mask = build_mask(&store, &Scenario::new("s")).unwrap();
        let hidden = mask.hide(&store, ["r9"]).unwrap();
        let view = MaskedView::new(&store, &hidden);
        let ids: Vec<_> = view.reviews_of_user("u1").map(|r| r.review_id.as_str()).collect();
        assert_eq!(ids, ["r1", "r2"]);
        assert_eq!(view.user_stats("u1"), Stats { review_count: 2, average_rating: Some(3.0) });
        assert_eq!(view.item_stats("i2").review_count, 2);
        // item and user stay visible; other users' reviews of the item stay
        assert!(view.item_visible("i2") && view.user_visible("u1"));
        assert!(view.review_visible("r3"));
        assert_eq!(store.user("u1").unwrap().review_count, 3);
    }

    #[test]
    fn hiding_is_idempotent() {
        let store = store();
        let mask = build_mask(&store, &Scenario::new("s")).unwrap();
        let once = mask.hide(&store, ["r9"]).unwrap();
        let twice = once.hide(&store, ["r9"]).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn hiding_an_invisible_review_fails() {
        let store = store();
        let mut scenario = Scenario::new("s");
        scenario.time_filter = Some(TimeFilter { start: 0, end: 150 });
        let mask = build_mask(&store, &scenario).unwrap();
        assert_eq!(mask.hide(&store, ["r9"]), Err(VisibilityError::NotVisible("r9".into())));
    }

    #[test]
    fn bare_profiles_can_be_exposed() {
        let store = store();
        let mut scenario = Scenario::new("s");
        scenario.time_filter = Some(TimeFilter { start: 0, end: 150 });
        assert_eq!(build_mask(&store, &scenario).unwrap().visible_users().len(), 1);
        scenario.expose_profile_without_reviews = true;
        let mask = build_mask(&store, &scenario).unwrap();
        assert_eq!(mask.visible_users().len(), 3);
        assert_eq!(MaskedView::new(&store, &mask).user_stats("u3").review_count, 0);
    }
}
