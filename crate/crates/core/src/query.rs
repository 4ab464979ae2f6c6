//! The agent-facing query function: entity type, sort method and
//! formation, evaluated over a masked store with filters and pagination.
//!
//! Textual rendering templates (version [`TEMPLATE_VERSION`]):
//!
//! ```text
//! Review ({rating:.1}/5, {YYYY-MM-DD}): {text}
//! Item {item_id} [{item_type}]: {name}[; rating {avg:.1}/5]; {n} review(s)[; {key}: {value}]...
//! User {user_id} ({platform}); {n} review(s)[; average rating {avg:.1}/5]; {k} friend(s)
//! ```
//!
//! Bracketed clauses are omitted when the value is absent. Counts and
//! averages are always the masked-view values.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::store::{ItemRecord, ReviewRecord, Stats, UriStore, UserRecord};
use crate::visibility::{MaskedView, VisibilityMask};

pub const MAX_PAGE_LIMIT: usize = 100;
pub const DEFAULT_PAGE_LIMIT: usize = 20;
pub const TEMPLATE_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    User,
    Item,
    Review,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortMethod {
    Date,
    Relevance,
    Popularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFilters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_list: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword_terms: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
}

impl QueryFilters {
    /// Case-folded term set; empty when no keywords were given.
    pub fn terms(&self) -> BTreeSet<String> {
        self.keyword_terms
            .iter()
            .flatten()
            .flat_map(|t| tokenize(t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    #[serde(default)]
    pub offset: usize,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

fn default_limit() -> usize {
    DEFAULT_PAGE_LIMIT
}

impl Default for Page {
    fn default() -> Self {
        Page { offset: 0, limit: DEFAULT_PAGE_LIMIT }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub entity_type: EntityType,
    pub sort_method: SortMethod,
    #[serde(default)]
    pub textual_formation: bool,
    #[serde(default)]
    pub filters: QueryFilters,
    #[serde(default)]
    pub page: Page,
}

impl QuerySpec {
    pub fn new(entity_type: EntityType, sort_method: SortMethod) -> QuerySpec {
        QuerySpec {
            entity_type,
            sort_method,
            textual_formation: false,
            filters: QueryFilters::default(),
            page: Page::default(),
        }
    }

    pub fn parse_json(text: &str) -> Result<QuerySpec, QueryError> {
        let spec: QuerySpec = serde_json::from_str(text).map_err(|e| QueryError::Parse(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), QueryError> {
        if !(1..=MAX_PAGE_LIMIT).contains(&self.page.limit) {
            return Err(QueryError::PageLimit(self.page.limit));
        }
        if self.sort_method == SortMethod::Date && self.entity_type != EntityType::Review {
            return Err(QueryError::DateSortWithoutTimestamps);
        }
        if self.sort_method == SortMethod::Relevance && self.filters.terms().is_empty() {
            return Err(QueryError::RelevanceWithoutTerms);
        }
        if let Some(range) = self.filters.time_range {
            if self.entity_type != EntityType::Review {
                return Err(QueryError::TimeRangeWithoutTimestamps);
            }
            if range.start > range.end {
                return Err(QueryError::InvertedTimeRange);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("page.limit must be within 1..=100, got {0}")]
    PageLimit(usize),
    #[error("sort_method `date` is only defined for reviews")]
    DateSortWithoutTimestamps,
    #[error("sort_method `relevance` requires non-empty keyword_terms")]
    RelevanceWithoutTerms,
    #[error("time_range is only defined for reviews")]
    TimeRangeWithoutTimestamps,
    #[error("time_range start is after end")]
    InvertedTimeRange,
    #[error("unparseable query: {0}")]
    Parse(String),
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        "malformed_spec"
    }

    pub fn rejection(&self) -> QueryRejection {
        QueryRejection {
            code: self.code().to_string(),
            reason: self.to_string(),
        }
    }
}

/// A malformed spec as an agent sees it: environment feedback, not a crash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRejection {
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Structured(Map<String, Value>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub entries: Vec<Entry>,
    pub total_visible: usize,
    pub truncated: bool,
}

/// A visible entity with its masked-view aggregates attached.
#[derive(Debug, Clone, Copy)]
pub enum EntityView<'a> {
    User(&'a UserRecord, Stats),
    Item(&'a ItemRecord, Stats),
    Review(&'a ReviewRecord),
}

impl EntityView<'_> {
    pub fn id(&self) -> &str {
        match self {
            EntityView::User(u, _) => &u.user_id,
            EntityView::Item(i, _) => &i.item_id,
            EntityView::Review(r) => &r.review_id,
        }
    }

    /// Review count for users and items, helpfulness-vote sum for reviews.
    pub fn popularity(&self) -> u64 {
        match self {
            EntityView::User(_, s) | EntityView::Item(_, s) => s.review_count,
            EntityView::Review(r) => r.helpfulness.total(),
        }
    }

    pub fn tokens(&self) -> BTreeSet<String> {
        match self {
            EntityView::User(u, _) => tokenize(&u.user_id).collect(),
            EntityView::Item(i, _) => {
                let mut tokens: BTreeSet<String> = tokenize(&i.name).collect();
                for value in i.metadata.values() {
                    tokens.extend(tokenize(&value.to_string()));
                }
                tokens
            }
            EntityView::Review(r) => tokenize(&r.text).collect(),
        }
    }

    pub fn to_structured(&self) -> Map<String, Value> {
        let value = match self {
            EntityView::User(u, stats) => {
                let mut u = (*u).clone();
                u.review_count = stats.review_count;
                u.average_rating = stats.average_rating;
                serde_json::to_value(u)
            }
            EntityView::Item(i, stats) => {
                let mut i = (*i).clone();
                i.review_count = stats.review_count;
                i.average_rating = stats.average_rating;
                serde_json::to_value(i)
            }
            EntityView::Review(r) => serde_json::to_value(r),
        };
        match value.expect("records serialize") {
            Value::Object(map) => map,
            _ => unreachable!("records serialize to objects"),
        }
    }
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Fraction of `terms` present in `tokens`.
pub fn term_overlap(terms: &BTreeSet<String>, tokens: &BTreeSet<String>) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.intersection(tokens).count() as f64 / terms.len() as f64
}

/// `|terms ∩ entity_tokens| / |terms|` over case-folded tokens of the
/// entity's name, text and metadata values.
pub fn relevance_score(terms: &[String], entity: &EntityView<'_>) -> f64 {
    let terms: BTreeSet<String> = terms.iter().flat_map(|t| tokenize(t)).collect();
    term_overlap(&terms, &entity.tokens())
}

fn plural(n: u64, word: &str) -> String {
    if n == 1 {
        format!("1 {word}")
    } else {
        format!("{n} {word}s")
    }
}

pub fn render_textual(entity: &EntityView<'_>) -> String {
    match entity {
        EntityView::Review(r) => {
            let date = DateTime::from_timestamp(r.timestamp, 0)
                .map(|dt| dt.format("%Y-%m-%d").to_string())
                .unwrap_or_else(|| r.timestamp.to_string());
            format!("Review ({:.1}/5, {date}): {}", r.rating, r.text)
        }
        EntityView::Item(i, stats) => {
            let mut out = format!("Item {} [{}]: {}", i.item_id, i.item_type.as_str(), i.name);
            if let Some(avg) = stats.average_rating {
                out.push_str(&format!("; rating {avg:.1}/5"));
            }
            out.push_str(&format!("; {}", plural(stats.review_count, "review")));
            for (key, value) in &i.metadata {
                out.push_str(&format!("; {key}: {value}"));
            }
            out
        }
        EntityView::User(u, stats) => {
            let mut out = format!(
                "User {} ({}); {}",
                u.user_id,
                u.source_platform,
                plural(stats.review_count, "review")
            );
            if let Some(avg) = stats.average_rating {
                out.push_str(&format!("; average rating {avg:.1}/5"));
            }
            out.push_str(&format!("; {}", plural(u.friends.len() as u64, "friend")));
            out
        }
    }
}

/// Runs `spec` against the store as seen through `mask`.
pub fn query(store: &UriStore, mask: &VisibilityMask, spec: &QuerySpec) -> Result<QueryResult, QueryError> {
    spec.check()?;
    let view = MaskedView::new(store, mask);
    let filters = &spec.filters;
    let terms = filters.terms();
    let id_set: Option<BTreeSet<&str>> = filters
        .id_list
        .as_ref()
        .map(|ids| ids.iter().map(String::as_str).collect());

    let candidates: Vec<EntityView<'_>> = match spec.entity_type {
        EntityType::Review => {
            let seed: BTreeSet<&str> = if let Some(ids) = &id_set {
                ids.clone()
            } else if let Some(user) = &filters.by_user_id {
                view.reviews_of_user(user).map(|r| r.review_id.as_str()).collect()
            } else if let Some(item) = &filters.by_item_id {
                view.reviews_of_item(item).map(|r| r.review_id.as_str()).collect()
            } else {
                view.reviews().map(|r| r.review_id.as_str()).collect()
            };
            seed.into_iter()
                .filter_map(|id| view.review(id))
                .filter(|r| filters.by_user_id.as_ref().is_none_or(|u| &r.user_id == u))
                .filter(|r| filters.by_item_id.as_ref().is_none_or(|i| &r.item_id == i))
                .filter(|r| filters.time_range.is_none_or(|t| (t.start..=t.end).contains(&r.timestamp)))
                .map(EntityView::Review)
                .collect()
        }
        EntityType::Item => {
            let reviewed_by: Option<BTreeSet<&str>> = filters
                .by_user_id
                .as_ref()
                .map(|u| view.reviews_of_user(u).map(|r| r.item_id.as_str()).collect());
            let seed: BTreeSet<&str> = if let Some(ids) = &id_set {
                ids.clone()
            } else if let Some(item) = &filters.by_item_id {
                BTreeSet::from([item.as_str()])
            } else if let Some(items) = &reviewed_by {
                items.clone()
            } else {
                view.items().map(|i| i.item_id.as_str()).collect()
            };
            seed.into_iter()
                .filter_map(|id| view.item(id))
                .filter(|i| filters.by_item_id.as_ref().is_none_or(|x| &i.item_id == x))
                .filter(|i| reviewed_by.as_ref().is_none_or(|s| s.contains(i.item_id.as_str())))
                .map(|i| EntityView::Item(i, view.item_stats(&i.item_id)))
                .collect()
        }
        EntityType::User => {
            let authors_of: Option<BTreeSet<&str>> = filters
                .by_item_id
                .as_ref()
                .map(|i| view.reviews_of_item(i).map(|r| r.user_id.as_str()).collect());
            let seed: BTreeSet<&str> = if let Some(ids) = &id_set {
                ids.clone()
            } else if let Some(user) = &filters.by_user_id {
                BTreeSet::from([user.as_str()])
            } else if let Some(users) = &authors_of {
                users.clone()
            } else {
                view.users().map(|u| u.user_id.as_str()).collect()
            };
            seed.into_iter()
                .filter_map(|id| view.user(id))
                .filter(|u| filters.by_user_id.as_ref().is_none_or(|x| &u.user_id == x))
                .filter(|u| authors_of.as_ref().is_none_or(|s| s.contains(u.user_id.as_str())))
                .map(|u| EntityView::User(u, view.user_stats(&u.user_id)))
                .collect()
        }
    };

    let mut hits: Vec<(EntityView<'_>, f64)> = candidates
        .into_iter()
        .filter(|e| id_set.as_ref().is_none_or(|s| s.contains(e.id())))
        .map(|e| {
            let score = if terms.is_empty() { 0.0 } else { term_overlap(&terms, &e.tokens()) };
            (e, score)
        })
        .filter(|(_, score)| terms.is_empty() || *score > 0.0)
        .collect();

    hits.sort_by(|(a, sa), (b, sb)| {
        let primary = match spec.sort_method {
            SortMethod::Date => match (a, b) {
                (EntityView::Review(x), EntityView::Review(y)) => x.timestamp.cmp(&y.timestamp),
                _ => Ordering::Equal,
            },
            SortMethod::Popularity => b.popularity().cmp(&a.popularity()),
            SortMethod::Relevance => sb.total_cmp(sa),
        };
        primary.then_with(|| a.id().cmp(b.id()))
    });

    let total_visible = hits.len();
    let entries: Vec<Entry> = hits
        .iter()
        .skip(spec.page.offset)
        .take(spec.page.limit)
        .map(|(e, _)| {
            if spec.textual_formation {
                Entry::Text(render_textual(e))
            } else {
                Entry::Structured(e.to_structured())
            }
        })
        .collect();
    let truncated = spec.page.offset.saturating_add(entries.len()) < total_visible;
    Ok(QueryResult {
        entries,
        total_visible,
        truncated,
    })
}
