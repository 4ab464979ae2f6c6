//! Hit-Rate@N scoring and run-level reports.
//!
//! Invalid episodes stay in the test set and count as misses at every
//! cutoff. Reports are pure functions of the scored episodes, so re-scoring
//! persisted traces reproduces them exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::episode::{EpisodeTrace, Ranking};
use crate::taskgen::{TaskAnswer, TaskFamily, CANDIDATE_COUNT};

/// The cutoffs averaged into `avg_hr`.
pub const REPORTED_CUTOFFS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("cutoff {0} outside 1..=20")]
    InvalidCutoff(usize),
    #[error("episodes from different runs: {0} and {1}")]
    MixedRunIds(String, String),
    #[error("no answer for task {0}")]
    MissingAnswer(String),
}

/// `HR@n = (1/|T|) Σ 1[positive ∈ top-n]`. `None` rankings are invalid
/// episodes: they count in `|T|` and never hit.
pub fn hit_rate_at_n(rankings: &[(Option<&Ranking>, &str)], n: usize) -> Result<f64, MetricsError> {
    if !(1..=CANDIDATE_COUNT).contains(&n) {
        return Err(MetricsError::InvalidCutoff(n));
    }
    if rankings.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let hits = rankings
        .iter()
        .filter(|(ranking, positive)| {
            ranking
                .and_then(|r| r.position(positive))
                .is_some_and(|p| p <= n)
        })
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// One episode reduced to what scoring needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredEpisode {
    pub run_id: String,
    pub task_id: String,
    pub scenario_id: String,
    pub family: TaskFamily,
    pub agent: String,
    pub seed: Option<u64>,
    pub valid: bool,
    /// One-based rank of the positive; `None` for invalid episodes.
    pub hit_position: Option<usize>,
}

pub fn score_trace(trace: &EpisodeTrace, positive_item: &str) -> ScoredEpisode {
    let valid = trace.outcome.is_valid();
    ScoredEpisode {
        run_id: trace.run_id.clone(),
        task_id: trace.task_id.clone(),
        scenario_id: trace.scenario_id.clone(),
        family: trace.family,
        agent: trace.agent.clone(),
        seed: trace.seed,
        valid,
        hit_position: if valid {
            trace.final_ranking.as_ref().and_then(|r| r.position(positive_item))
        } else {
            None
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tasks: usize,
    pub valid: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMetrics {
    /// Cutoff → hit rate in [0, 1].
    pub hr_at: BTreeMap<usize, f64>,
    /// Mean of `hr_at` over the reported cutoffs.
    pub avg_hr: f64,
    /// `avg_hr × 100`, one decimal, as published in result tables.
    pub avg_hr_percent: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: String,
    pub agent: String,
    pub seed: Option<u64>,
    pub scenario_ids: Vec<String>,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metadata: RunMetadata,
    pub overall: FamilyMetrics,
    pub families: BTreeMap<TaskFamily, FamilyMetrics>,
}

pub fn percent_one_decimal(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

fn family_metrics(episodes: &[&ScoredEpisode]) -> FamilyMetrics {
    let tasks = episodes.len();
    let valid = episodes.iter().filter(|e| e.valid).count();
    let mut hr_at = BTreeMap::new();
    for n in REPORTED_CUTOFFS {
        let hits = episodes
            .iter()
            .filter(|e| e.hit_position.is_some_and(|p| p <= n))
            .count();
        hr_at.insert(n, hits as f64 / tasks as f64);
    }
    let rates: Vec<f64> = hr_at.values().copied().collect();
    assert!(
        rates.windows(2).all(|w| w[0] <= w[1]),
        "hit rate must be monotone in N: {rates:?}"
    );
    let avg_hr = rates.iter().sum::<f64>() / rates.len() as f64;
    FamilyMetrics {
        hr_at,
        avg_hr,
        avg_hr_percent: percent_one_decimal(avg_hr),
        counts: Counts {
            tasks,
            valid,
            invalid: tasks - valid,
        },
    }
}

/// Aggregates one run's episodes into overall and per-family metrics.
pub fn aggregate_report(
    episodes: &[ScoredEpisode],
    timestamp: Option<String>,
) -> Result<MetricReport, MetricsError> {
    let first = episodes.first().ok_or(MetricsError::EmptyTestSet)?;
    if let Some(other) = episodes.iter().find(|e| e.run_id != first.run_id) {
        return Err(MetricsError::MixedRunIds(first.run_id.clone(), other.run_id.clone()));
    }
    let agents: BTreeSet<&str> = episodes.iter().map(|e| e.agent.as_str()).collect();
    let seeds: BTreeSet<Option<u64>> = episodes.iter().map(|e| e.seed).collect();
    let scenario_ids: BTreeSet<&str> = episodes.iter().map(|e| e.scenario_id.as_str()).collect();
    let metadata = RunMetadata {
        run_id: first.run_id.clone(),
        agent: agents.into_iter().collect::<Vec<_>>().join("+"),
        seed: if seeds.len() == 1 { first.seed } else { None },
        scenario_ids: scenario_ids.into_iter().map(String::from).collect(),
        timestamp,
    };

    let all: Vec<&ScoredEpisode> = episodes.iter().collect();
    let mut by_family: BTreeMap<TaskFamily, Vec<&ScoredEpisode>> = BTreeMap::new();
    for e in episodes {
        by_family.entry(e.family).or_default().push(e);
    }
    Ok(MetricReport {
        metadata,
        overall: family_metrics(&all),
        families: by_family
            .into_iter()
            .map(|(family, eps)| (family, family_metrics(&eps)))
            .collect(),
    })
}

/// Re-scores persisted traces against the answers file.
pub fn report_from_traces(
    traces: &[EpisodeTrace],
    answers: &BTreeMap<String, TaskAnswer>,
    timestamp: Option<String>,
) -> Result<MetricReport, MetricsError> {
    let scored = traces
        .iter()
        .map(|t| {
            let answer = answers
                .get(&t.task_id)
                .ok_or_else(|| MetricsError::MissingAnswer(t.task_id.clone()))?;
            Ok(score_trace(t, &answer.positive_item))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    aggregate_report(&scored, timestamp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking_with_positive_at(pos: usize) -> Ranking {
        let mut items: Vec<String> = (0..20).map(|i| format!("n{i}")).collect();
        items[pos - 1] = "p".into();
        Ranking(items)
    }

    fn scored(run: &str, family: TaskFamily, hit: Option<usize>, valid: bool) -> ScoredEpisode {
        ScoredEpisode {
            run_id: run.into(),
            task_id: format!("t{hit:?}"),
            scenario_id: "s".into(),
            family,
            agent: "a".into(),
            seed: Some(1),
            valid,
            hit_position: hit,
        }
    }

    #[test]
    fn positive_always_first_is_perfect() {
        let r = ranking_with_positive_at(1);
        let rows: Vec<_> = (0..10).map(|_| (Some(&r), "p")).collect();
        assert_eq!(hit_rate_at_n(&rows, 1).unwrap(), 1.0);
    }

    #[test]
    fn direct_count_at_three() {
        let rs: Vec<Ranking> = [1, 4, 20].iter().map(|&p| ranking_with_positive_at(p)).collect();
        let rows: Vec<_> = rs.iter().map(|r| (Some(r), "p")).collect();
        assert_eq!(hit_rate_at_n(&rows, 3).unwrap(), 1.0 / 3.0);
        assert_eq!(hit_rate_at_n(&rows, 20).unwrap(), 1.0);
    }

    #[test]
    fn empty_set_and_bad_cutoffs_are_errors() {
        assert_eq!(hit_rate_at_n(&[], 1), Err(MetricsError::EmptyTestSet));
        let r = ranking_with_positive_at(1);
        assert_eq!(hit_rate_at_n(&[(Some(&r), "p")], 0), Err(MetricsError::InvalidCutoff(0)));
        assert_eq!(hit_rate_at_n(&[(Some(&r), "p")], 21), Err(MetricsError::InvalidCutoff(21)));
        assert_eq!(aggregate_report(&[], None), Err(MetricsError::EmptyTestSet));
    }

    #[test]
    fn invalid_episodes_count_as_misses() {
        let r = ranking_with_positive_at(1);
        let rows = [(Some(&r), "p"), (None, "p")];
        assert_eq!(hit_rate_at_n(&rows, 20).unwrap(), 0.5);
    }

    #[test]
    fn all_valid_classic_run_counts() {
        let eps: Vec<_> = (0..100).map(|_| scored("r", TaskFamily::Classic, Some(1), true)).collect();
        let report = aggregate_report(&eps, None).unwrap();
        assert_eq!(report.overall.counts, Counts { tasks: 100, valid: 100, invalid: 0 });
        assert_eq!(report.overall.avg_hr_percent, 100.0);
        assert_eq!(report.families.len(), 1);
    }

    #[test]
    fn five_invalid_episodes() {
        let mut eps: Vec<_> = (0..95).map(|_| scored("r", TaskFamily::Classic, Some(2), true)).collect();
        eps.extend((0..5).map(|_| scored("r", TaskFamily::Classic, None, false)));
        let report = aggregate_report(&eps, None).unwrap();
        assert_eq!(report.overall.counts, Counts { tasks: 100, valid: 95, invalid: 5 });
        assert_eq!(report.overall.hr_at[&1], 0.0);
        assert_eq!(report.overall.hr_at[&3], 0.95);
        let m = &report.overall;
        assert_eq!(m.avg_hr, (m.hr_at[&1] + m.hr_at[&3] + m.hr_at[&5]) / 3.0);
    }

    #[test]
    fn mixed_runs_are_rejected() {
        let eps = [scored("a", TaskFamily::Classic, Some(1), true), scored("b", TaskFamily::Classic, Some(1), true)];
        assert!(matches!(aggregate_report(&eps, None), Err(MetricsError::MixedRunIds(..))));
    }

    #[test]
    fn per_family_split() {
        let eps = [
            scored("r", TaskFamily::Classic, Some(1), true),
            scored("r", TaskFamily::UserCold, Some(10), true),
        ];
        let report = aggregate_report(&eps, None).unwrap();
        assert_eq!(report.families[&TaskFamily::Classic].avg_hr, 1.0);
        assert_eq!(report.families[&TaskFamily::UserCold].avg_hr, 0.0);
        assert_eq!(report.overall.avg_hr, 0.5);
        let json = serde_json::to_string(&report).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(percent_one_decimal(0.15), 15.0);
        assert_eq!(percent_one_decimal(2.0 / 3.0), 66.7);
        assert_eq!(percent_one_decimal(0.54), 54.0);
    }
}
