//! Task bundles: the on-disk output of task generation.
//!
//! A bundle directory holds `tasks.jsonl` (what agents may see),
//! `answers.jsonl` (held-out positives and hidden reviews), the scenario
//! document and a manifest binding the bundle to a store digest.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::store::UriStore;
use crate::taskgen::{Generated, PublicTask, Task, TaskAnswer, TaskFamily, TaskGenError};
use crate::util::{read_jsonl, write_jsonl, JsonlError};
use crate::visibility::{apply_task_hiding, build_mask, Scenario, VisibilityError, VisibilityMask};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub store_digest: String,
    pub scenario_id: String,
    pub family: TaskFamily,
    pub seed: u64,
    pub requested: usize,
    pub generated: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("bundle was built from store {expected}, but the loaded store is {actual}")]
    StoreMismatch { expected: String, actual: String },
    #[error("task {0} has no answer")]
    MissingAnswer(String),
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error(transparent)]
    Task(#[from] TaskGenError),
    #[error(transparent)]
    Visibility(#[from] VisibilityError),
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub scenario: Scenario,
    pub tasks: Vec<PublicTask>,
    pub answers: Vec<TaskAnswer>,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BundleError> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|e| BundleError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(io_error(path))
}

impl Bundle {
    pub fn new(store: &UriStore, scenario: &Scenario, generated: &Generated, requested: usize, seed: u64) -> Bundle {
        Bundle {
            manifest: Manifest {
                store_digest: store.digest(),
                scenario_id: scenario.scenario_id.clone(),
                family: scenario.family.unwrap_or(TaskFamily::Classic),
                seed,
                requested,
                generated: generated.tasks.len(),
                warnings: generated.warnings.clone(),
            },
            scenario: scenario.clone(),
            tasks: generated.tasks.iter().map(Task::public).collect(),
            answers: generated.tasks.iter().map(Task::answer).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        std::fs::create_dir_all(dir).map_err(io_error(dir))?;
        let tasks = dir.join(TASKS_FILE);
        write_jsonl(&tasks, &self.tasks).map_err(io_error(&tasks))?;
        let answers = dir.join(ANSWERS_FILE);
        write_jsonl(&answers, &self.answers).map_err(io_error(&answers))?;
        write_json(&dir.join(SCENARIO_FILE), &self.scenario)?;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Bundle, BundleError> {
        let scenario: Scenario = read_json(&dir.join(SCENARIO_FILE))?;
        scenario.check()?;
        Ok(Bundle {
            manifest: read_json(&dir.join(MANIFEST_FILE))?,
            scenario,
            tasks: read_jsonl(&dir.join(TASKS_FILE))?,
            answers: read_jsonl(&dir.join(ANSWERS_FILE))?,
        })
    }

    pub fn check_store(&self, store: &UriStore) -> Result<(), BundleError> {
        let actual = store.digest();
        if actual != self.manifest.store_digest {
            return Err(BundleError::StoreMismatch {
                expected: self.manifest.store_digest.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// Joins public tasks with their answers.
    pub fn full_tasks(&self) -> Result<Vec<Task>, BundleError> {
        let mut answers: BTreeMap<&str, &TaskAnswer> = BTreeMap::new();
        for a in &self.answers {
            answers.insert(&a.task_id, a);
        }
        self.tasks
            .iter()
            .map(|t| {
                let answer = answers
                    .get(t.task_id.as_str())
                    .ok_or_else(|| BundleError::MissingAnswer(t.task_id.clone()))?;
                Ok(Task::from_parts(t.clone(), (*answer).clone())?)
            })
            .collect()
    }
}

/// A task ready to run: its scenario text and the mask with the task's
/// hiding layer applied.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task: Task,
    pub scenario_description: Arc<str>,
    pub mask: VisibilityMask,
}

/// Checks every bundle against `store`, then builds per-task masks.
/// Scenario masks are built once per bundle and shared.
pub fn prepare_tasks(store: &UriStore, bundles: &[Bundle]) -> Result<Vec<PreparedTask>, BundleError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for bundle in bundles {
        bundle.check_store(store)?;
        let scenario_mask = build_mask(store, &bundle.scenario)?;
        let description: Arc<str> = Arc::from(bundle.scenario.description.as_str());
        for task in bundle.full_tasks()? {
            if !seen.insert(task.task_id.clone()) {
                return Err(BundleError::DuplicateTask(task.task_id));
            }
            let mask = apply_task_hiding(store, &scenario_mask, &task)?;
            out.push(PreparedTask {
                task,
                scenario_description: description.clone(),
                mask,
            });
        }
    }
    Ok(out)
}

/// Answer key for a set of bundles, keyed by task id.
pub fn answer_key(bundles: &[Bundle]) -> BTreeMap<String, TaskAnswer> {
    bundles
        .iter()
        .flat_map(|b| &b.answers)
        .map(|a| (a.task_id.clone(), a.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::tests::review;
    use crate::store::{ItemRecord, Platform, UserRecord};
    use crate::taskgen::generate_for_scenario;

    fn store(extra: bool) -> UriStore {
        let mut reviews: Vec<_> = (0..3).map(|i| review(&format!("r{i}"), "u0", &format!("i{i:02}"), 4.0, 100 + i)).collect();
        if extra {
            reviews.push(review("r9", "u0", "i09", 1.0, 1));
        }
        UriStore::from_records(
            vec![UserRecord::new("u0", Platform::Yelp)],
            (0..25).map(|i| ItemRecord::new(format!("i{i:02}"), "", Platform::Yelp)),
            reviews,
        )
    }

    fn bundle(store: &UriStore) -> Bundle {
        let mut scenario = Scenario::new("s");
        scenario.family = Some(TaskFamily::Classic);
        let generated = generate_for_scenario(store, &scenario, Some(1), 4).unwrap();
        Bundle::new(store, &scenario, &generated, 1, 4)
    }

    #[test]
    fn round_trip_and_join() {
        let store = store(false);
        let dir = tempfile::tempdir().unwrap();
        let b = bundle(&store);
        b.write(dir.path()).unwrap();
        let loaded = Bundle::load(dir.path()).unwrap();
        assert_eq!(loaded.manifest, b.manifest);
        assert_eq!(loaded.tasks, b.tasks);
        let prepared = prepare_tasks(&store, &[loaded]).unwrap();
        assert_eq!(prepared.len(), 1);
        assert!(prepared[0].mask.hidden_ground_truth().contains("r2"));
    }

    #[test]
    fn public_file_carries_no_answer() {
        let store = store(false);
        let dir = tempfile::tempdir().unwrap();
        bundle(&store).write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(TASKS_FILE)).unwrap();
        assert!(!text.contains("positive") && !text.contains("r2"), "{text}");
    }

    #[test]
    fn store_mismatch_is_rejected() {
        let b = bundle(&store(false));
        assert!(matches!(
            prepare_tasks(&store(true), &[b]),
            Err(BundleError::StoreMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_task_ids_are_rejected() {
        let s = store(false);
        let b = bundle(&s);
        assert!(matches!(prepare_tasks(&s, &[b.clone(), b]), Err(BundleError::DuplicateTask(_))));
    }
}
