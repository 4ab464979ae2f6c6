//! Seeded synthetic corpora with Zipf-skewed item popularity and per-user
//! category affinity. Used for fixtures, calibration and load tests.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

use crate::ingest::{RawRecord, RecordKind};
use crate::store::{Helpfulness, ItemRecord, MetaValue, Platform, ReviewRecord, UriStore, UserRecord};
use crate::taskgen::{TaskFamily, DAY_SECS, LONG_WINDOW_DAYS, SHORT_WINDOW_DAYS};
use crate::util::{derive_seed, seeded_rng};
use crate::visibility::{Scenario, TimeFilter};

const CATEGORIES: [&str; 10] = [
    "pizza", "sushi", "tacos", "ramen", "bakery", "coffee", "steakhouse", "vegan", "barbecue", "thai",
];
const CITIES: [&str; 4] = ["Tucson", "Phoenix", "Reno", "Tampa"];
const ADJECTIVES: [&str; 8] = ["Golden", "Little", "Urban", "Old Town", "Blue", "Sunny", "Corner", "Lucky"];
const NOUNS: [&str; 6] = ["House", "Kitchen", "Spot", "Place", "Bar", "Co"];
const PRAISE: [&str; 5] = ["awful", "meh", "decent", "great", "outstanding"];

/// Epoch seconds of 2019-01-01T00:00:00Z.
pub const DEFAULT_BASE_TIMESTAMP: i64 = 1_546_300_800;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    /// Inclusive range of reviews written per user.
    pub reviews_per_user: (usize, usize),
    pub days: i64,
    pub base_timestamp: i64,
    /// Exponent `s` of the popularity weights `1 / rank^s`.
    pub zipf_exponent: f64,
    /// Probability a review targets the user's preferred category.
    pub category_affinity: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// About 300 reviews: 30 users, 60 items, 120 days.
    pub fn tiny() -> SynthConfig {
        SynthConfig {
            users: 30,
            items: 60,
            reviews_per_user: (1, 19),
            days: 120,
            base_timestamp: DEFAULT_BASE_TIMESTAMP,
            zipf_exponent: 1.0,
            category_affinity: 0.6,
            seed: 20190101,
        }
    }

    /// Enough eligible users for 1000 classic tasks with a strong
    /// popularity signal.
    pub fn popularity() -> SynthConfig {
        SynthConfig {
            users: 1200,
            items: 150,
            reviews_per_user: (2, 12),
            days: 365,
            zipf_exponent: 1.1,
            seed: 7,
            ..SynthConfig::tiny()
        }
    }

    /// Over 2000 classic-eligible users.
    pub fn calibration() -> SynthConfig {
        SynthConfig {
            users: 2200,
            items: 300,
            reviews_per_user: (2, 8),
            days: 365,
            seed: 11,
            ..SynthConfig::tiny()
        }
    }
}

fn user_id(i: usize) -> String {
    format!("yelp:u{i:05}")
}

fn item_id(i: usize) -> String {
    format!("yelp:b{i:05}")
}

/// Generates a Yelp-shaped corpus. Ids carry the `yelp:` namespace so the
/// raw form round-trips through ingestion.
pub fn generate(config: &SynthConfig) -> UriStore {
    let mut rng = seeded_rng(derive_seed(config.seed, &["synth"]));
    let categories: Vec<usize> = (0..config.items).map(|_| rng.random_range(0..CATEGORIES.len())).collect();
    let items: Vec<ItemRecord> = (0..config.items)
        .map(|i| {
            let cat = CATEGORIES[categories[i]];
            let adj = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
            let noun = NOUNS[rng.random_range(0..NOUNS.len())];
            let mut item = ItemRecord::new(item_id(i), format!("{adj} {noun} {i}"), Platform::Yelp);
            item.metadata.insert("categories".into(), MetaValue::Text(cat.to_string()));
            item.metadata
                .insert("city".into(), MetaValue::Text(CITIES[rng.random_range(0..CITIES.len())].into()));
            item
        })
        .collect();

    // popularity rank is a random permutation of the items
    let mut ranked: Vec<usize> = (0..config.items).collect();
    ranked.shuffle(&mut rng);
    let mut weight = vec![0.0; config.items];
    for (rank, &i) in ranked.iter().enumerate() {
        weight[i] = 1.0 / ((rank + 1) as f64).powf(config.zipf_exponent);
    }
    let overall = WeightedIndex::new(&weight).expect("positive weights");
    let by_category: Vec<Option<(Vec<usize>, WeightedIndex<f64>)>> = (0..CATEGORIES.len())
        .map(|c| {
            let members: Vec<usize> = (0..config.items).filter(|&i| categories[i] == c).collect();
            let dist = WeightedIndex::new(members.iter().map(|&i| weight[i])).ok()?;
            Some((members, dist))
        })
        .collect();

    let mut users = Vec::with_capacity(config.users);
    let mut reviews = Vec::new();
    let span = config.days * DAY_SECS;
    let (lo, hi) = config.reviews_per_user;
    for u in 0..config.users {
        let mut user = UserRecord::new(user_id(u), Platform::Yelp);
        for _ in 0..rng.random_range(0..=3) {
            let f = rng.random_range(0..config.users);
            if f != u && !user.friends.contains(&user_id(f)) {
                user.friends.push(user_id(f));
            }
        }
        users.push(user);

        let preferred = rng.random_range(0..CATEGORIES.len());
        let want = rng.random_range(lo..=hi).min(config.items);
        let mut chosen = BTreeSet::new();
        let mut attempts = 0;
        while chosen.len() < want && attempts < want * 50 {
            attempts += 1;
            let item = match &by_category[preferred] {
                Some((members, dist)) if rng.random_bool(config.category_affinity) => members[dist.sample(&mut rng)],
                _ => overall.sample(&mut rng),
            };
            chosen.insert(item);
        }
        for item in chosen {
            let rating = rng.random_range(1..=5u8) as f64;
            let cat = CATEGORIES[categories[item]];
            reviews.push(ReviewRecord {
                review_id: format!("yelp:r{:07}", reviews.len()),
                user_id: user_id(u),
                item_id: item_id(item),
                rating,
                text: format!("The {cat} here was {}.", PRAISE[rating as usize - 1]),
                timestamp: config.base_timestamp + rng.random_range(0..span),
                helpfulness: Helpfulness {
                    funny: rng.random_range(0..3),
                    useful: rng.random_range(0..5),
                    cool: rng.random_range(0..3),
                },
            });
        }
    }
    UriStore::from_records(users, items, reviews)
}

fn strip(id: &str) -> &str {
    id.strip_prefix("yelp:").unwrap_or(id)
}

/// Renders a Yelp-namespaced store in the raw dump format, for exercising
/// ingestion end to end.
pub fn to_yelp_raw(store: &UriStore) -> Vec<RawRecord> {
    let mut out = Vec::new();
    for u in store.users() {
        let friends: Vec<&str> = u.friends.iter().map(|f| strip(f)).collect();
        out.push(RawRecord::new(
            RecordKind::User,
            json!({"user_id": strip(&u.user_id), "name": "anon", "friends": friends.join(", ")}),
        ));
    }
    for i in store.items() {
        let mut obj = json!({
            "business_id": strip(&i.item_id),
            "name": i.name,
            "stars": i.average_rating,
            "review_count": i.review_count,
        });
        for (k, v) in &i.metadata {
            obj[k] = serde_json::to_value(v).expect("serializable");
        }
        out.push(RawRecord::new(RecordKind::Item, obj));
    }
    for r in store.reviews() {
        let date = chrono::DateTime::from_timestamp(r.timestamp, 0)
            .expect("in range")
            .format("%Y-%m-%d %H:%M:%S")
            .to_string();
        out.push(RawRecord::new(
            RecordKind::Review,
            json!({
                "review_id": strip(&r.review_id),
                "user_id": strip(&r.user_id),
                "business_id": strip(&r.item_id),
                "stars": r.rating,
                "text": r.text,
                "date": date,
                "useful": r.helpfulness.useful,
                "funny": r.helpfulness.funny,
                "cool": r.helpfulness.cool,
            }),
        ));
    }
    out
}

/// Writes raw records as `users.json`, `items.json` and `reviews.json`.
pub fn write_raw_dir(records: &[RawRecord], dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (kind, stem) in [
        (RecordKind::User, "users"),
        (RecordKind::Item, "items"),
        (RecordKind::Review, "reviews"),
    ] {
        let mut text = String::new();
        for r in records.iter().filter(|r| r.kind == kind) {
            let value: &Value = r.payload.as_ref().map_err(|e| std::io::Error::other(e.clone()))?;
            text.push_str(&serde_json::to_string(value)?);
            text.push('\n');
        }
        std::fs::write(dir.join(format!("{stem}.json")), text)?;
    }
    Ok(())
}

/// One scenario per task family over a corpus starting at `base`: the
/// long window covers the first 92 days, the short window days 56 to 63.
pub fn family_scenarios(base: i64) -> Vec<Scenario> {
    let make = |id: &str, family: TaskFamily, description: &str| {
        let mut s = Scenario::new(id);
        s.family = Some(family);
        s.description = description.to_string();
        s
    };
    let mut classic = make("classic", TaskFamily::Classic, "Recommend the next business for a user with a known history.");
    classic.task_count = Some(20);
    let mut long = make(
        "long_term",
        TaskFamily::LongTerm,
        "Only reviews from a three-month window are visible. Recommend the next business.",
    );
    long.time_filter = Some(TimeFilter { start: base, end: base + LONG_WINDOW_DAYS * DAY_SECS });
    let mut short = make(
        "short_term",
        TaskFamily::ShortTerm,
        "Only reviews from a one-week window are visible. Recommend the next business.",
    );
    let start = base + 56 * DAY_SECS;
    short.time_filter = Some(TimeFilter { start, end: start + SHORT_WINDOW_DAYS * DAY_SECS });
    let mut user_cold = make("user_cold", TaskFamily::UserCold, "The user has written only a few reviews.");
    user_cold.threshold = Some(5);
    let mut item_cold = make("item_cold", TaskFamily::ItemCold, "The business to recommend has few reviews.");
    item_cold.threshold = Some(10);
    vec![classic, long, short, user_cold, item_cold]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_source, IngestOptions};
    use crate::validate::validate_store;

    #[test]
    fn deterministic_in_the_seed() {
        let a = generate(&SynthConfig::tiny());
        let b = generate(&SynthConfig::tiny());
        assert_eq!(a.digest(), b.digest());
        let c = generate(&SynthConfig { seed: 1, ..SynthConfig::tiny() });
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn tiny_corpus_shape() {
        let store = generate(&SynthConfig::tiny());
        assert_eq!(store.user_count(), 30);
        assert_eq!(store.item_count(), 60);
        assert!((150..=450).contains(&store.review_count()), "{}", store.review_count());
        assert!(validate_store(&store).is_consistent());
    }

    #[test]
    fn popularity_is_skewed() {
        let store = generate(&SynthConfig::popularity());
        let counts: Vec<u64> = store
            .items_by_review_count()
            .iter()
            .map(|i| store.item(i).unwrap().review_count)
            .collect();
        let top_decile: u64 = counts[..counts.len() / 10].iter().sum();
        let total: u64 = counts.iter().sum();
        assert!(top_decile as f64 > 0.25 * total as f64, "{top_decile} of {total}");
    }

    #[test]
    fn raw_form_round_trips_through_ingestion() {
        let store = generate(&SynthConfig::tiny());
        let (partial, report) = ingest_source(to_yelp_raw(&store), "yelp", &IngestOptions::default()).unwrap();
        assert!(report.rejections.is_empty(), "{:?}", report.rejections);
        assert_eq!(partial.into_store().digest(), store.digest());
    }

    #[test]
    fn scenarios_match_the_windows() {
        for s in family_scenarios(0) {
            s.check().unwrap();
            if let Some(tf) = s.time_filter {
                assert!([LONG_WINDOW_DAYS * DAY_SECS, SHORT_WINDOW_DAYS * DAY_SECS].contains(&tf.length_secs()));
            }
        }
    }
}
