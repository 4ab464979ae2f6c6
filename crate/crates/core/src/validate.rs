//! Integrity checks over a loaded store. Validation never mutates.

use serde::{Deserialize, Serialize};

use crate::store::{Collection, UriStore, MAX_RATING, MIN_RATING};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    DanglingUserId { review_id: String, user_id: String },
    DanglingItemId { review_id: String, item_id: String },
    DanglingFriendId { user_id: String, friend_id: String },
    RatingOutOfRange { review_id: String, rating: f64 },
    TimestampOutOfRange { review_id: String, timestamp: i64 },
    DuplicateKey { collection: Collection, key: String },
    PlatformMismatch { item_id: String },
}

impl Finding {
    /// Dangling references are the only findings `--allow-dangling` waives.
    pub fn is_dangling(&self) -> bool {
        matches!(
            self,
            Finding::DanglingUserId { .. } | Finding::DanglingItemId { .. } | Finding::DanglingFriendId { .. }
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    /// An empty report: the store is consistent.
    pub fn is_consistent(&self) -> bool {
        self.findings.is_empty()
    }

    /// True when something other than an off-corpus friend id is wrong.
    /// Friend lists routinely point outside a sub-sampled corpus, so those
    /// findings alone do not block task generation.
    pub fn has_integrity_errors(&self) -> bool {
        self.findings
            .iter()
            .any(|f| !matches!(f, Finding::DanglingFriendId { .. }))
    }

    pub fn blocking(&self, allow_dangling: bool) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(move |f| !(allow_dangling && f.is_dangling()))
    }
}

pub fn validate_store(store: &UriStore) -> ValidationReport {
    let mut findings = Vec::new();
    for review in store.reviews() {
        if store.user(&review.user_id).is_none() {
            findings.push(Finding::DanglingUserId {
                review_id: review.review_id.clone(),
                user_id: review.user_id.clone(),
            });
        }
        if store.item(&review.item_id).is_none() {
            findings.push(Finding::DanglingItemId {
                review_id: review.review_id.clone(),
                item_id: review.item_id.clone(),
            });
        }
        if !(MIN_RATING..=MAX_RATING).contains(&review.rating) {
            findings.push(Finding::RatingOutOfRange {
                review_id: review.review_id.clone(),
                rating: review.rating,
            });
        }
        if review.timestamp <= 0 {
            findings.push(Finding::TimestampOutOfRange {
                review_id: review.review_id.clone(),
                timestamp: review.timestamp,
            });
        }
    }
    for user in store.users() {
        for friend in &user.friends {
            if store.user(friend).is_none() {
                findings.push(Finding::DanglingFriendId {
                    user_id: user.user_id.clone(),
                    friend_id: friend.clone(),
                });
            }
        }
    }
    for item in store.items() {
        if item.item_type != item.source_platform.item_type() {
            findings.push(Finding::PlatformMismatch {
                item_id: item.item_id.clone(),
            });
        }
    }
    for dup in store.duplicates() {
        findings.push(Finding::DuplicateKey {
            collection: dup.collection,
            key: dup.key.clone(),
        });
    }
    ValidationReport { findings }
}
