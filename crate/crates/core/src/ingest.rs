//! Platform adapters translating raw dump records into canonical records.
//!
//! Field mapping per platform:
//!
//! | canonical    | yelp                    | amazon                          | goodreads            |
//! |--------------|-------------------------|---------------------------------|----------------------|
//! | review_id    | `review_id`             | `review_id` or user+item+time   | `review_id`          |
//! | user_id      | `user_id`               | `reviewerID`                    | `user_id`            |
//! | item_id      | `business_id`           | `asin`                          | `book_id`            |
//! | rating       | `stars`                 | `overall`                       | `rating`             |
//! | text         | `text`                  | `reviewText`                    | `review_text`        |
//! | timestamp    | `date`                  | `unixReviewTime` / `reviewTime` | `date_added`         |
//! | helpfulness  | `useful`/`funny`/`cool` | `vote` → useful                 | `n_votes` → useful   |
//! | item name    | `name`                  | `title`                         | `title`              |
//!
//! Adapters never clamp: an out-of-range rating or unparseable date rejects
//! the record, and the rejection is collected into the [`IngestReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::store::{
    Helpfulness, ItemRecord, MetaValue, Platform, ReviewRecord, UnknownPlatform, UriStore, UserRecord,
    MAX_RATING, MIN_RATING,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    User,
    Item,
    Review,
}

#[derive(Debug, Clone)]
pub struct RawRecord {
    pub kind: RecordKind,
    /// Parsed JSON, or the parse error for a line that was not JSON.
    pub payload: Result<Value, String>,
}

impl RawRecord {
    pub fn new(kind: RecordKind, value: Value) -> Self {
        RawRecord { kind, payload: Ok(value) }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Prefix every key with `<platform>:` so merged corpora cannot collide.
    pub namespace_ids: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { namespace_ids: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub kind: RecordKind,
    /// Zero-based position within its kind's stream.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub platform: Platform,
    pub users_accepted: usize,
    pub items_accepted: usize,
    pub reviews_accepted: usize,
    pub users_synthesized: usize,
    pub rejections: Vec<Rejection>,
}

/// Normalized records not yet assembled into a [`UriStore`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialStore {
    pub users: Vec<UserRecord>,
    pub items: Vec<ItemRecord>,
    pub reviews: Vec<ReviewRecord>,
}

impl PartialStore {
    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.items.is_empty() && self.reviews.is_empty()
    }

    pub fn into_store(self) -> UriStore {
        UriStore::from_records(self.users, self.items, self.reviews)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    UnknownPlatform(#[from] UnknownPlatform),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Normalizes a stream of raw records from one platform.
///
/// Malformed records are rejected one by one; only an unknown platform
/// aborts. When the stream carries no user records (Amazon and Goodreads
/// review dumps have none), users are synthesized from review authors.
pub fn ingest_source<I>(
    records: I,
    source: &str,
    options: &IngestOptions,
) -> Result<(PartialStore, IngestReport), IngestError>
where
    I: IntoIterator<Item = RawRecord>,
{
    let platform: Platform = source.parse()?;
    let adapter = Adapter { platform, options };
    let mut out = PartialStore::default();
    let mut rejections = Vec::new();
    let mut counters: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut saw_user_records = false;

    for raw in records {
        let slot = counters
            .entry(match raw.kind {
                RecordKind::User => "user",
                RecordKind::Item => "item",
                RecordKind::Review => "review",
            })
            .or_default();
        let index = *slot;
        *slot += 1;
        if raw.kind == RecordKind::User {
            saw_user_records = true;
        }
        let result = match raw.payload {
            Err(e) => Err(format!("malformed json: {e}")),
            Ok(Value::Object(obj)) => match raw.kind {
                RecordKind::User => adapter.user(&obj).map(|u| out.users.push(u)),
                RecordKind::Item => adapter.item(&obj).map(|i| out.items.push(i)),
                RecordKind::Review => adapter.review(&obj).map(|r| out.reviews.push(r)),
            },
            Ok(_) => Err("record is not an object".to_string()),
        };
        if let Err(reason) = result {
            rejections.push(Rejection { kind: raw.kind, index, reason });
        }
    }

    let mut synthesized = 0;
    if !saw_user_records {
        let authors: BTreeSet<&str> = out.reviews.iter().map(|r| r.user_id.as_str()).collect();
        out.users = authors
            .into_iter()
            .map(|id| UserRecord::new(id, platform))
            .collect();
        synthesized = out.users.len();
    }

    let report = IngestReport {
        platform,
        users_accepted: out.users.len() - synthesized,
        items_accepted: out.items.len(),
        reviews_accepted: out.reviews.len(),
        users_synthesized: synthesized,
        rejections,
    };
    Ok((out, report))
}

/// Reads `users`, `items` and `reviews` (`.jsonl` or `.json`, one object per
/// line) from a raw dump directory. Missing files are treated as empty.
/// Lines that are not JSON become rejected records rather than errors.
pub fn read_source_dir(dir: &Path) -> Result<Vec<RawRecord>, IngestError> {
    let mut records = Vec::new();
    for (stem, kind) in [
        ("users", RecordKind::User),
        ("items", RecordKind::Item),
        ("reviews", RecordKind::Review),
    ] {
        let Some(path) = ["jsonl", "json"]
            .iter()
            .map(|ext| dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file())
        else {
            continue;
        };
        let io_err = |source| IngestError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(&path).map_err(io_err)?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let payload = serde_json::from_str::<Value>(&line).map_err(|e| e.to_string());
            records.push(RawRecord { kind, payload });
        }
    }
    Ok(records)
}

struct Adapter<'a> {
    platform: Platform,
    options: &'a IngestOptions,
}

impl Adapter<'_> {
    fn key(&self, raw: String) -> String {
        if self.options.namespace_ids {
            format!("{}:{raw}", self.platform)
        } else {
            raw
        }
    }

    fn user(&self, obj: &Map<String, Value>) -> Result<UserRecord, String> {
        let field = match self.platform {
            Platform::Amazon => "reviewerID",
            Platform::Goodreads | Platform::Yelp => "user_id",
        };
        let id = text_field(obj, &[field, "user_id"]).ok_or("missing user_id")?;
        let friends = match obj.get("friends") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(s)) if s.trim().is_empty() || s.trim() == "None" => Vec::new(),
            Some(Value::String(s)) => s
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| self.key(s.to_string()))
                .collect(),
            Some(Value::Array(list)) => list
                .iter()
                .filter_map(scalar_text)
                .map(|s| self.key(s))
                .collect(),
            Some(_) => return Err("invalid friends".into()),
        };
        let mut user = UserRecord::new(self.key(id), self.platform);
        user.friends = friends;
        Ok(user)
    }

    fn item(&self, obj: &Map<String, Value>) -> Result<ItemRecord, String> {
        let (id_field, name_field, derived): (&str, &str, &[&str]) = match self.platform {
            Platform::Yelp => ("business_id", "name", &["stars", "review_count"]),
            Platform::Amazon => ("asin", "title", &[]),
            Platform::Goodreads => (
                "book_id",
                "title",
                &["average_rating", "ratings_count", "text_reviews_count"],
            ),
        };
        let id = text_field(obj, &[id_field, "item_id"]).ok_or("missing item_id")?;
        let name = text_field(obj, &[name_field, "name"]).unwrap_or_default();
        let mut item = ItemRecord::new(self.key(id), name, self.platform);
        for (key, value) in obj {
            if key == id_field || key == name_field || key == "item_id" || key == "name" {
                continue;
            }
            if derived.contains(&key.as_str()) {
                continue;
            }
            if let Some(meta) = meta_value(value) {
                item.metadata.insert(key.clone(), meta);
            }
        }
        Ok(item)
    }

    fn review(&self, obj: &Map<String, Value>) -> Result<ReviewRecord, String> {
        let (user_f, item_f, rating_f, text_f) = match self.platform {
            Platform::Yelp => ("user_id", "business_id", "stars", "text"),
            Platform::Amazon => ("reviewerID", "asin", "overall", "reviewText"),
            Platform::Goodreads => ("user_id", "book_id", "rating", "review_text"),
        };
        let user_id = text_field(obj, &[user_f, "user_id"]).ok_or("missing user_id")?;
        let item_id = text_field(obj, &[item_f, "item_id"]).ok_or("missing item_id")?;
        let rating = match obj.get(rating_f).or_else(|| obj.get("rating")) {
            None | Some(Value::Null) => return Err("missing rating".into()),
            Some(v) => number(v).ok_or("invalid rating")?,
        };
        if !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(format!("rating out of range: {rating}"));
        }
        let timestamp = self.timestamp(obj)?;
        if timestamp <= 0 {
            return Err(format!("timestamp out of range: {timestamp}"));
        }
        let review_id = match text_field(obj, &["review_id"]) {
            Some(id) => id,
            None if self.platform == Platform::Amazon => format!("{user_id}|{item_id}|{timestamp}"),
            None => return Err("missing review_id".into()),
        };
        let text = text_field(obj, &[text_f, "text"]).unwrap_or_default();
        let helpfulness = match self.platform {
            Platform::Yelp => Helpfulness {
                funny: count(obj.get("funny"))?,
                useful: count(obj.get("useful"))?,
                cool: count(obj.get("cool"))?,
            },
            Platform::Amazon => Helpfulness {
                useful: count(obj.get("vote"))?,
                ..Helpfulness::default()
            },
            Platform::Goodreads => Helpfulness {
                useful: count(obj.get("n_votes"))?,
                ..Helpfulness::default()
            },
        };
        Ok(ReviewRecord {
            review_id: self.key(review_id),
            user_id: self.key(user_id),
            item_id: self.key(item_id),
            rating,
            text,
            timestamp,
            helpfulness,
        })
    }

    fn timestamp(&self, obj: &Map<String, Value>) -> Result<i64, String> {
        if let Some(v) = obj.get("timestamp").filter(|v| !v.is_null()) {
            return v.as_i64().ok_or_else(|| "invalid timestamp".to_string());
        }
        match self.platform {
            Platform::Yelp => {
                let raw = text_field(obj, &["date"]).ok_or("missing timestamp")?;
                parse_date_time(&raw, &["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"], &["%Y-%m-%d"])
            }
            Platform::Amazon => {
                if let Some(v) = obj.get("unixReviewTime").filter(|v| !v.is_null()) {
                    return number(v)
                        .map(|x| x as i64)
                        .ok_or_else(|| "invalid timestamp".to_string());
                }
                let raw = text_field(obj, &["reviewTime"]).ok_or("missing timestamp")?;
                parse_date_time(&raw, &[], &["%m %d, %Y", "%Y-%m-%d"])
            }
            Platform::Goodreads => {
                let raw = text_field(obj, &["date_added", "date_updated"]).ok_or("missing timestamp")?;
                DateTime::parse_from_str(&raw, "%a %b %d %H:%M:%S %z %Y")
                    .map(|dt| dt.timestamp())
                    .or_else(|_| parse_date_time(&raw, &["%Y-%m-%d %H:%M:%S"], &["%Y-%m-%d"]))
            }
        }
    }
}

/// Parses a naive UTC date-time; date-only forms map to midnight UTC.
fn parse_date_time(raw: &str, datetime_fmts: &[&str], date_fmts: &[&str]) -> Result<i64, String> {
    let raw = raw.trim();
    for fmt in datetime_fmts {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    for fmt in date_fmts {
        if let Ok(d) = NaiveDate::parse_from_str(raw, fmt) {
            return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
        }
    }
    Err(format!("invalid timestamp: {raw:?}"))
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn text_field(obj: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .filter_map(|k| obj.get(*k))
        .find_map(scalar_text)
        .filter(|s| !s.trim().is_empty())
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Vote counts: absent means zero; strings may carry thousands separators.
fn count(v: Option<&Value>) -> Result<u64, String> {
    match v {
        None | Some(Value::Null) => Ok(0),
        Some(Value::Number(n)) => n.as_u64().ok_or_else(|| format!("invalid vote count: {n}")),
        Some(Value::String(s)) => s
            .replace(',', "")
            .trim()
            .parse()
            .map_err(|_| format!("invalid vote count: {s:?}")),
        Some(other) => Err(format!("invalid vote count: {other}")),
    }
}

fn meta_value(v: &Value) -> Option<MetaValue> {
    match v {
        Value::Null => None,
        Value::Bool(b) => Some(MetaValue::Bool(*b)),
        Value::Number(n) => Some(match n.as_i64() {
            Some(i) => MetaValue::Int(i),
            None => MetaValue::Float(n.as_f64()?),
        }),
        Value::String(s) => Some(MetaValue::Text(s.clone())),
        Value::Array(list) if list.iter().all(|x| !x.is_array() && !x.is_object()) => Some(MetaValue::Text(
            list.iter()
                .filter_map(|x| match x {
                    Value::String(s) => Some(s.clone()),
                    Value::Null => None,
                    other => Some(other.to_string()),
                })
                .collect::<Vec<_>>()
                .join(", "),
        )),
        nested => Some(MetaValue::Text(nested.to_string())),
    }
}
