//! The User-Review-Item corpus: record types, the indexed in-memory store,
//! derived aggregates, and the canonical three-file on-disk format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::util::{self, JsonlError};

pub const USERS_FILE: &str = "users.jsonl";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const REVIEWS_FILE: &str = "reviews.jsonl";

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Amazon,
    Goodreads,
    Yelp,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Amazon, Platform::Goodreads, Platform::Yelp];

    /// The only item type a platform produces.
    pub fn item_type(self) -> ItemType {
        match self {
            Platform::Amazon => ItemType::Product,
            Platform::Goodreads => ItemType::Book,
            Platform::Yelp => ItemType::Business,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Amazon => "amazon",
            Platform::Goodreads => "goodreads",
            Platform::Yelp => "yelp",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown platform `{0}` (expected amazon, goodreads or yelp)")]
pub struct UnknownPlatform(pub String);

impl FromStr for Platform {
    type Err = UnknownPlatform;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "amazon" => Ok(Platform::Amazon),
            "goodreads" => Ok(Platform::Goodreads),
            "yelp" => Ok(Platform::Yelp),
            _ => Err(UnknownPlatform(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemType {
    Product,
    Business,
    Book,
}

impl ItemType {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemType::Product => "product",
            ItemType::Business => "business",
            ItemType::Book => "book",
        }
    }
}

/// A scalar-or-text metadata value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for MetaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaValue::Bool(b) => write!(f, "{b}"),
            MetaValue::Int(i) => write!(f, "{i}"),
            MetaValue::Float(x) => write!(f, "{x}"),
            MetaValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Helpfulness {
    #[serde(default)]
    pub funny: u64,
    #[serde(default)]
    pub useful: u64,
    #[serde(default)]
    pub cool: u64,
}

impl Helpfulness {
    pub fn total(&self) -> u64 {
        self.funny + self.useful + self.cool
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub review_count: u64,
    #[serde(default)]
    pub friends: Vec<String>,
    #[serde(default)]
    pub average_rating: Option<f64>,
    pub source_platform: Platform,
}

impl UserRecord {
    pub fn new(user_id: impl Into<String>, platform: Platform) -> Self {
        UserRecord {
            user_id: user_id.into(),
            review_count: 0,
            friends: Vec::new(),
            average_rating: None,
            source_platform: platform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    #[serde(default)]
    pub name: String,
    pub item_type: ItemType,
    #[serde(default)]
    pub metadata: BTreeMap<String, MetaValue>,
    #[serde(default)]
    pub average_rating: Option<f64>,
    #[serde(default)]
    pub review_count: u64,
    pub source_platform: Platform,
}

impl ItemRecord {
    pub fn new(item_id: impl Into<String>, name: impl Into<String>, platform: Platform) -> Self {
        ItemRecord {
            item_id: item_id.into(),
            name: name.into(),
            item_type: platform.item_type(),
            metadata: BTreeMap::new(),
            average_rating: None,
            review_count: 0,
            source_platform: platform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub review_id: String,
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    #[serde(default)]
    pub text: String,
    pub timestamp: i64,
    #[serde(default)]
    pub helpfulness: Helpfulness,
}

impl ReviewRecord {
    /// Ordering key used by every time-ordered index.
    pub fn time_key(&self) -> (i64, &str) {
        (self.timestamp, self.review_id.as_str())
    }
}

/// Count and mean rating over some set of reviews.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub review_count: u64,
    pub average_rating: Option<f64>,
}

impl Stats {
    pub fn from_ratings<I: IntoIterator<Item = f64>>(ratings: I) -> Stats {
        let mut count = 0u64;
        let mut sum = 0.0;
        for r in ratings {
            count += 1;
            sum += r;
        }
        Stats {
            review_count: count,
            average_rating: (count > 0).then(|| sum / count as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collection {
    Users,
    Items,
    Reviews,
}

/// A key seen more than once at construction. The first record wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateKey {
    pub collection: Collection,
    pub key: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Immutable, indexed U-R-I corpus.
///
/// Index orderings depend on content only: reviews by `(timestamp,
/// review_id)`, items by `(review_count desc, item_id)`.
#[derive(Debug, Clone, Default)]
pub struct UriStore {
    users: BTreeMap<String, UserRecord>,
    items: BTreeMap<String, ItemRecord>,
    reviews: BTreeMap<String, ReviewRecord>,
    duplicates: Vec<DuplicateKey>,
    by_user: BTreeMap<String, Vec<String>>,
    by_item: BTreeMap<String, Vec<String>>,
    items_by_review_count: Vec<String>,
}

impl UriStore {
    /// Builds a store and computes aggregates and indexes. Duplicate keys
    /// are kept out of the collections and remembered for validation.
    pub fn from_records(
        users: impl IntoIterator<Item = UserRecord>,
        items: impl IntoIterator<Item = ItemRecord>,
        reviews: impl IntoIterator<Item = ReviewRecord>,
    ) -> UriStore {
        let mut store = UriStore::default();
        for user in users {
            if store.users.contains_key(&user.user_id) {
                store.duplicates.push(DuplicateKey {
                    collection: Collection::Users,
                    key: user.user_id,
                });
            } else {
                store.users.insert(user.user_id.clone(), user);
            }
        }
        for item in items {
            if store.items.contains_key(&item.item_id) {
                store.duplicates.push(DuplicateKey {
                    collection: Collection::Items,
                    key: item.item_id,
                });
            } else {
                store.items.insert(item.item_id.clone(), item);
            }
        }
        for review in reviews {
            if store.reviews.contains_key(&review.review_id) {
                store.duplicates.push(DuplicateKey {
                    collection: Collection::Reviews,
                    key: review.review_id,
                });
            } else {
                store.reviews.insert(review.review_id.clone(), review);
            }
        }
        store.duplicates.sort_by(|a, b| (a.collection, &a.key).cmp(&(b.collection, &b.key)));
        store.compute_aggregates()
    }

    /// Recomputes every derived count and mean from the reviews, then
    /// rebuilds the indexes. Idempotent.
    pub fn compute_aggregates(mut self) -> UriStore {
        let mut by_user: BTreeMap<String, Vec<&ReviewRecord>> = BTreeMap::new();
        let mut by_item: BTreeMap<String, Vec<&ReviewRecord>> = BTreeMap::new();
        for review in self.reviews.values() {
            by_user.entry(review.user_id.clone()).or_default().push(review);
            by_item.entry(review.item_id.clone()).or_default().push(review);
        }
        for v in by_user.values_mut().chain(by_item.values_mut()) {
            v.sort_by(|a, b| a.time_key().cmp(&b.time_key()));
        }

        let mut user_stats = BTreeMap::new();
        for (id, reviews) in &by_user {
            user_stats.insert(id.clone(), Stats::from_ratings(reviews.iter().map(|r| r.rating)));
        }
        let mut item_stats = BTreeMap::new();
        for (id, reviews) in &by_item {
            item_stats.insert(id.clone(), Stats::from_ratings(reviews.iter().map(|r| r.rating)));
        }
        let by_user_ids: BTreeMap<String, Vec<String>> = by_user
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|r| r.review_id.clone()).collect()))
            .collect();
        let by_item_ids: BTreeMap<String, Vec<String>> = by_item
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|r| r.review_id.clone()).collect()))
            .collect();

        for user in self.users.values_mut() {
            let stats = user_stats.get(&user.user_id).copied().unwrap_or_default();
            user.review_count = stats.review_count;
            user.average_rating = stats.average_rating;
        }
        for item in self.items.values_mut() {
            let stats = item_stats.get(&item.item_id).copied().unwrap_or_default();
            item.review_count = stats.review_count;
            item.average_rating = stats.average_rating;
        }
        let mut ranked: Vec<(&String, u64)> =
            self.items.iter().map(|(id, it)| (id, it.review_count)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        self.items_by_review_count = ranked.into_iter().map(|(id, _)| id.clone()).collect();
        self.by_user = by_user_ids;
        self.by_item = by_item_ids;
        self
    }

    pub fn user(&self, id: &str) -> Option<&UserRecord> {
        self.users.get(id)
    }

    pub fn item(&self, id: &str) -> Option<&ItemRecord> {
        self.items.get(id)
    }

    pub fn review(&self, id: &str) -> Option<&ReviewRecord> {
        self.reviews.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }

    pub fn items(&self) -> impl Iterator<Item = &ItemRecord> {
        self.items.values()
    }

    pub fn reviews(&self) -> impl Iterator<Item = &ReviewRecord> {
        self.reviews.values()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn review_count(&self) -> usize {
        self.reviews.len()
    }

    pub fn duplicates(&self) -> &[DuplicateKey] {
        &self.duplicates
    }

    /// Reviews authored by `user_id`, oldest first.
    pub fn reviews_of_user<'a>(&'a self, user_id: &str) -> impl Iterator<Item = &'a ReviewRecord> + 'a {
        self.by_user
            .get(user_id)
            .into_iter()
            .flatten()
            .map(move |id| &self.reviews[id])
    }

    /// Reviews targeting `item_id`, oldest first.
    pub fn reviews_of_item<'a>(&'a self, item_id: &str) -> impl Iterator<Item = &'a ReviewRecord> + 'a {
        self.by_item
            .get(item_id)
            .into_iter()
            .flatten()
            .map(move |id| &self.reviews[id])
    }

    /// Item ids by descending review count, id tiebreak.
    pub fn items_by_review_count(&self) -> &[String] {
        &self.items_by_review_count
    }

    pub fn load_dir(dir: &Path) -> Result<UriStore, StoreError> {
        let users: Vec<UserRecord> = util::read_jsonl(&dir.join(USERS_FILE))?;
        let items: Vec<ItemRecord> = util::read_jsonl(&dir.join(ITEMS_FILE))?;
        let reviews: Vec<ReviewRecord> = util::read_jsonl(&dir.join(REVIEWS_FILE))?;
        Ok(UriStore::from_records(users, items, reviews))
    }

    /// Writes the canonical files in key order.
    pub fn write_dir(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Write {
            path: dir.display().to_string(),
            source,
        })?;
        let write_err = |name: &str| {
            let path = dir.join(name).display().to_string();
            move |source| StoreError::Write { path, source }
        };
        util::write_jsonl(&dir.join(USERS_FILE), self.users.values()).map_err(write_err(USERS_FILE))?;
        util::write_jsonl(&dir.join(ITEMS_FILE), self.items.values()).map_err(write_err(ITEMS_FILE))?;
        util::write_jsonl(&dir.join(REVIEWS_FILE), self.reviews.values())
            .map_err(write_err(REVIEWS_FILE))?;
        Ok(())
    }

    /// Content fingerprint over the canonical serialization of all three
    /// collections. Used to bind task bundles to the store they came from.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        for user in self.users.values() {
            serde_json::to_writer(&mut bytes, user).expect("serializable");
            bytes.push(b'\n');
        }
        bytes.push(0);
        for item in self.items.values() {
            serde_json::to_writer(&mut bytes, item).expect("serializable");
            bytes.push(b'\n');
        }
        bytes.push(0);
        for review in self.reviews.values() {
            serde_json::to_writer(&mut bytes, review).expect("serializable");
            bytes.push(b'\n');
        }
        util::sha256_hex(&bytes)
    }
}
