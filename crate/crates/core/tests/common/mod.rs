//! Shared fixtures and brute-force oracles for the integration tests.
//!
//! The oracles here deliberately avoid the store's indexes and the mask
//! internals: they walk the raw record lists with plain loops.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use agentrec::bundle::{prepare_tasks, Bundle, PreparedTask};
use agentrec::service::{EnvConfig, Environment};
use agentrec::store::{Stats, UriStore};
use agentrec::taskgen::{generate_for_scenario, TaskFamily};
use agentrec::visibility::Scenario;
use serde::Serialize;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny")
}

pub fn raw_fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny_raw_yelp")
}

pub fn fixture_store() -> UriStore {
    UriStore::load_dir(&fixture_dir()).expect("fixture store loads")
}

pub fn fixture_scenarios() -> Vec<Scenario> {
    ["classic", "long_term", "short_term", "user_cold", "item_cold"]
        .iter()
        .map(|id| Scenario::load(&fixture_dir().join(format!("scenarios/{id}.json"))).expect("scenario loads"))
        .collect()
}

/// One bundle per fixture scenario, every eligible target included.
pub fn fixture_bundles(store: &UriStore, seed: u64) -> Vec<Bundle> {
    fixture_scenarios()
        .iter()
        .map(|s| {
            let generated = generate_for_scenario(store, s, Some(10_000), seed).expect("generation succeeds");
            Bundle::new(store, s, &generated, 10_000, seed)
        })
        .collect()
}

pub fn fixture_tasks(store: &UriStore, seed: u64) -> (Vec<Bundle>, Vec<PreparedTask>) {
    let bundles = fixture_bundles(store, seed);
    let tasks = prepare_tasks(store, &bundles).expect("bundles match the store");
    (bundles, tasks)
}

/// Sorted-key JSON text.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's default map is ordered, so a round trip through Value sorts keys
    serde_json::to_string(&serde_json::to_value(value).unwrap()).unwrap()
}

/// What a scenario exposes, recomputed with two passes over the raw lists.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMask {
    pub reviews: BTreeSet<String>,
    pub items: BTreeSet<String>,
    pub users: BTreeSet<String>,
}

pub fn brute_mask(store: &UriStore, scenario: &Scenario) -> BruteMask {
    let user_ids: BTreeSet<&str> = store.users().map(|u| u.user_id.as_str()).collect();
    let item_ids: BTreeSet<&str> = store.items().map(|i| i.item_id.as_str()).collect();

    // pass one: time window over reviews with resolvable references
    let mut window = Vec::new();
    for r in store.reviews() {
        if !user_ids.contains(r.user_id.as_str()) || !item_ids.contains(r.item_id.as_str()) {
            continue;
        }
        if let Some(tf) = scenario.time_filter {
            if r.timestamp < tf.start || r.timestamp > tf.end {
                continue;
            }
        }
        window.push(r);
    }

    // pass two: item criteria on in-window counts
    let filter = scenario.item_filter.clone().unwrap_or_default();
    let mut items = BTreeSet::new();
    for it in store.items() {
        let count = window.iter().filter(|r| r.item_id == it.item_id).count() as u64;
        let type_ok = match &filter.item_types {
            None => true,
            Some(types) => types.contains(&it.item_type),
        };
        if count >= filter.min_review_count && type_ok {
            items.insert(it.item_id.clone());
        }
    }
    let reviews: BTreeSet<String> = window
        .iter()
        .filter(|r| items.contains(&r.item_id))
        .map(|r| r.review_id.clone())
        .collect();
    let users: BTreeSet<String> = if scenario.time_filter.is_none() || scenario.expose_profile_without_reviews {
        user_ids.iter().map(|s| s.to_string()).collect()
    } else {
        window
            .iter()
            .filter(|r| reviews.contains(&r.review_id))
            .map(|r| r.user_id.clone())
            .collect()
    };
    BruteMask { reviews, items, users }
}

/// Review count and mean rating over `visible`, by a linear scan.
pub fn brute_stats(store: &UriStore, visible: &BTreeSet<String>, by_user: bool, id: &str) -> Stats {
    let mut n = 0u64;
    let mut sum = 0.0;
    for r in store.reviews() {
        let owner = if by_user { &r.user_id } else { &r.item_id };
        if owner == id && visible.contains(&r.review_id) {
            n += 1;
            sum += r.rating;
        }
    }
    Stats {
        review_count: n,
        average_rating: (n > 0).then(|| sum / n as f64),
    }
}

/// Visible reviews of `user` in (timestamp, review id) order.
pub fn brute_history<'a>(store: &'a UriStore, visible: &BTreeSet<String>, user: &str) -> Vec<&'a agentrec::store::ReviewRecord> {
    let mut out: Vec<_> = store
        .reviews()
        .filter(|r| r.user_id == user && visible.contains(&r.review_id))
        .collect();
    out.sort_by(|a, b| (a.timestamp, &a.review_id).cmp(&(b.timestamp, &b.review_id)));
    out
}

/// Eligible (user, ground-truth review) pairs for a family, from the rules
/// stated as plain predicates.
pub fn brute_eligible(store: &UriStore, scenario: &Scenario) -> BTreeMap<String, String> {
    let family = scenario.family.expect("scenario declares a family");
    let m = brute_mask(store, scenario);
    let mut out = BTreeMap::new();
    for user in &m.users {
        let history = brute_history(store, &m.reviews, user);
        let n = history.len();
        let target = match family {
            TaskFamily::Classic => (n >= 2).then(|| history.last()),
            TaskFamily::LongTerm => (n >= 5).then(|| history.last()),
            TaskFamily::ShortTerm => (n >= 2).then(|| history.last()),
            TaskFamily::UserCold => {
                let threshold = scenario.threshold.unwrap_or(5) as usize;
                (n >= 1 && n < threshold).then(|| history.last())
            }
            TaskFamily::ItemCold => {
                let threshold = scenario.threshold.unwrap_or(10);
                (n >= 2).then(|| {
                    history.iter().rev().find(|r| {
                        let others = brute_stats(store, &m.reviews, false, &r.item_id).review_count - 1;
                        others < threshold
                    })
                })
            }
        };
        if let Some(Some(r)) = target {
            out.insert(user.clone(), r.review_id.clone());
        }
    }
    out
}

pub fn environment(store: UriStore, tasks: Vec<PreparedTask>, config: EnvConfig) -> Arc<Environment> {
    Arc::new(Environment::new(Arc::new(store), tasks, config))
}

/// A live HTTP service on an ephemeral port. Dropping it shuts the server
/// down.
pub struct Server {
    pub base: String,
    _runtime: tokio::runtime::Runtime,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Server {
    pub fn start(env: Arc<Environment>) -> Server {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let (listener, local) = runtime.block_on(agentrec::http::bind(addr)).unwrap();
        runtime.spawn(agentrec::http::serve(env, listener, async {
            let _ = stopped.await;
        }));
        Server {
            base: format!("http://{local}"),
            _runtime: runtime,
            stop: Some(stop),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::new()
}
