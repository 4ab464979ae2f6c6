//! Append-only leaderboard: one JSON line per submission, plus a
//! regenerated Markdown table sorted by score.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::MetricReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub agent: String,
    pub model_tag: String,
    pub dataset_tag: String,
    pub family: String,
    /// Average HR over N ∈ {1, 3, 5}, × 100, one decimal.
    pub avg_hr: f64,
    pub submitted_at: String,
}

#[derive(Debug, Clone, Default)]
pub struct SubmissionTags {
    pub model_tag: String,
    pub dataset_tag: String,
}

#[derive(Debug, thiserror::Error)]
pub enum LeaderboardError {
    #[error("leaderboard {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("leaderboard {path}:{line}: {source}")]
    Corrupt {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub struct Leaderboard {
    path: PathBuf,
}

impl Leaderboard {
    pub fn at(path: impl Into<PathBuf>) -> Leaderboard {
        Leaderboard { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// The generated table lives next to the log with a `.md` extension.
    pub fn view_path(&self) -> PathBuf {
        self.path.with_extension("md")
    }

    fn io_err(&self) -> impl Fn(std::io::Error) -> LeaderboardError + '_ {
        move |source| LeaderboardError::Io {
            path: self.path.display().to_string(),
            source,
        }
    }

    /// Appends under an exclusive file lock, then regenerates the sorted
    /// view while still holding it.
    pub fn append(&self, entry: &LeaderboardEntry) -> Result<(), LeaderboardError> {
        let mut line = serde_json::to_vec(entry).expect("entries serialize");
        line.push(b'\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(self.io_err())?;
        file.lock().map_err(self.io_err())?;
        let result = file
            .write_all(&line)
            .and_then(|_| file.flush())
            .map_err(self.io_err())
            .and_then(|_| self.write_view());
        let _ = file.unlock();
        result
    }

    /// Entries in submission order.
    pub fn entries(&self) -> Result<Vec<LeaderboardEntry>, LeaderboardError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io_err()(e)),
        };
        let mut out = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(self.io_err())?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|source| LeaderboardError::Corrupt {
                path: self.path.display().to_string(),
                line: idx + 1,
                source,
            })?);
        }
        Ok(out)
    }

    /// Entries by descending score; equal scores keep submission order.
    pub fn sorted(&self) -> Result<Vec<LeaderboardEntry>, LeaderboardError> {
        let mut entries = self.entries()?;
        entries.sort_by(|a, b| b.avg_hr.total_cmp(&a.avg_hr));
        Ok(entries)
    }

    pub fn render_markdown(&self) -> Result<String, LeaderboardError> {
        let mut out = String::from("| rank | agent | model | dataset | family | avg HR@{1,3,5} | submitted |\n");
        out.push_str("|---:|---|---|---|---|---:|---|\n");
        for (i, e) in self.sorted()?.iter().enumerate() {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.1} | {} |\n",
                i + 1,
                e.agent,
                e.model_tag,
                e.dataset_tag,
                e.family,
                e.avg_hr,
                e.submitted_at
            ));
        }
        Ok(out)
    }

    fn write_view(&self) -> Result<(), LeaderboardError> {
        let table = self.render_markdown()?;
        let view = self.view_path();
        let tmp = view.with_extension("md.tmp");
        std::fs::write(&tmp, table)
            .and_then(|_| std::fs::rename(&tmp, &view))
            .map_err(self.io_err())
    }
}

/// Builds the entry for a report. A single-family report is filed under that
/// family; a mixed run under `all`.
pub fn entry_for(report: &MetricReport, tags: &SubmissionTags, submitted_at: String) -> LeaderboardEntry {
    let family = match report.families.keys().collect::<Vec<_>>().as_slice() {
        [only] => only.to_string(),
        _ => "all".to_string(),
    };
    LeaderboardEntry {
        agent: report.metadata.agent.clone(),
        model_tag: tags.model_tag.clone(),
        dataset_tag: tags.dataset_tag.clone(),
        family,
        avg_hr: report.overall.avg_hr_percent,
        submitted_at,
    }
}

/// Appends the report's entry. On failure the caller still owns the report.
pub fn update_leaderboard(
    report: &MetricReport,
    board_path: &Path,
    tags: &SubmissionTags,
) -> Result<LeaderboardEntry, LeaderboardError> {
    let entry = entry_for(report, tags, chrono::Utc::now().to_rfc3339());
    Leaderboard::at(board_path).append(&entry)?;
    Ok(entry)
}
