//! Annotator decisions and the export gate.
//!
//! Decisions are appended to `review/decisions.jsonl` and never rewritten.
//! For each (item, annotator) the latest record wins; an item is excluded from
//! export when any annotator's latest verdict is `reject` or `flag_ethics`.

use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::{NfsItem, TcvItem};
use crate::jsonl::{read_jsonl_file, JsonlError};

pub const DECISION_LOG: &str = "review/decisions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    FlagEthics,
}

impl Verdict {
    pub fn excludes(self) -> bool {
        matches!(self, Verdict::Reject | Verdict::FlagEthics)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub item: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
    pub annotator: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("flag_ethics requires a note")]
    MissingNote,
    #[error("annotator must not be empty")]
    MissingAnnotator,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Log(#[from] JsonlError),
}

impl ReviewDecision {
    pub fn validate(&self) -> Result<(), ReviewError> {
        if self.annotator.trim().is_empty() {
            return Err(ReviewError::MissingAnnotator);
        }
        if self.verdict == Verdict::FlagEthics && self.note.trim().is_empty() {
            return Err(ReviewError::MissingNote);
        }
        Ok(())
    }
}

/// Append-only decision log.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
}

impl DecisionLog {
    pub fn at_root(root: &Path) -> Self {
        Self {
            path: root.join(DECISION_LOG),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read(&self) -> Result<Vec<ReviewDecision>, ReviewError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        Ok(read_jsonl_file(&self.path)?)
    }

    /// Validate and append one record, flushed to disk before returning.
    pub fn append(&self, d: &ReviewDecision) -> Result<(), ReviewError> {
        d.validate()?;
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut line = serde_json::to_string(d).map_err(io::Error::other)?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

/// Latest decision per (item, annotator), by log order.
pub fn latest_decisions(log: &[ReviewDecision]) -> HashMap<(&str, &str), &ReviewDecision> {
    let mut out = HashMap::new();
    for d in log {
        out.insert((d.item.as_str(), d.annotator.as_str()), d);
    }
    out
}

pub fn excluded_items(log: &[ReviewDecision]) -> HashSet<String> {
    latest_decisions(log)
        .into_values()
        .filter(|d| d.verdict.excludes())
        .map(|d| d.item.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub nfs: Vec<NfsItem>,
    pub tcv: Vec<TcvItem>,
    pub excluded: Vec<String>,
}

/// Manifests minus excluded items. Pure in (manifests, log).
pub fn export(nfs: &[NfsItem], tcv: &[TcvItem], log: &[ReviewDecision]) -> Export {
    let ex = excluded_items(log);
    let mut excluded: Vec<String> = ex.iter().cloned().collect();
    excluded.sort();
    Export {
        nfs: nfs.iter().filter(|i| !ex.contains(&i.id)).cloned().collect(),
        tcv: tcv.iter().filter(|i| !ex.contains(&i.id)).cloned().collect(),
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(item: &str, who: &str, v: Verdict, note: &str) -> ReviewDecision {
        ReviewDecision {
            item: item.into(),
            verdict: v,
            note: note.into(),
            annotator: who.into(),
            timestamp: "2026-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn latest_decision_per_annotator_wins() {
        let log = vec![
            d("a", "ann1", Verdict::Reject, ""),
            d("a", "ann1", Verdict::Accept, ""),
            d("b", "ann1", Verdict::Accept, ""),
            d("b", "ann2", Verdict::FlagEthics, "face visible"),
            d("c", "ann1", Verdict::Accept, ""),
            d("c", "ann1", Verdict::Reject, ""),
        ];
        let ex = excluded_items(&log);
        assert_eq!(ex, ["b", "c"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn flag_needs_note() {
        assert!(matches!(d("a", "x", Verdict::FlagEthics, " ").validate(), Err(ReviewError::MissingNote)));
        assert!(matches!(d("a", "", Verdict::Accept, "").validate(), Err(ReviewError::MissingAnnotator)));
        d("a", "x", Verdict::FlagEthics, "why").validate().unwrap();
    }

    #[test]
    fn log_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let log = DecisionLog::at_root(dir.path());
        assert!(log.read().unwrap().is_empty());
        log.append(&d("a", "x", Verdict::Reject, "")).unwrap();
        log.append(&d("a", "x", Verdict::Accept, "")).unwrap();
        assert!(log.append(&d("a", "x", Verdict::FlagEthics, "")).is_err());
        let all = log.read().unwrap();
        assert_eq!(all.len(), 2);
        assert!(excluded_items(&all).is_empty());
    }
}
