//! Video and comment records: JSONL loading, text cleaning, keyword and
//! language filtering, plus a minimal paged search client.

mod clean;
mod fetch;
mod filter;
mod language;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::{clean_text, normalize_for_match};
pub use fetch::{FetchClient, FetchOutcome};
pub use filter::{filter_videos, DropReason, FilterOutcome, FilterRules};
pub use language::{
    filter_language, japanese_script_ratio, ClassifierError, Language, LanguageClassifier,
    LanguageFilterOutcome, ScriptRatioClassifier,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDoc {
    pub video_id: String,
    pub channel: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub transcript: String,
    #[serde(with = "crate::time::timestamp")]
    pub published_at: DateTime<Utc>,
}

impl VideoDoc {
    /// Title, description and transcript joined into one modeling document.
    pub fn full_text(&self) -> String {
        [&self.title, &self.description, &self.transcript]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn cleaned(&self) -> VideoDoc {
        VideoDoc {
            video_id: self.video_id.clone(),
            channel: self.channel.clone(),
            title: clean_text(&self.title),
            description: clean_text(&self.description),
            transcript: clean_text(&self.transcript),
            published_at: self.published_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: String,
    pub video_id: String,
    pub text: String,
    #[serde(with = "crate::time::timestamp")]
    pub published_at: DateTime<Utc>,
}

/// Records that can be loaded from JSONL with a unique, nonempty key.
pub trait Keyed {
    const KEY_FIELD: &'static str;
    fn key(&self) -> &str;
}

impl Keyed for VideoDoc {
    const KEY_FIELD: &'static str = "video_id";
    fn key(&self) -> &str {
        &self.video_id
    }
}

impl Keyed for Comment {
    const KEY_FIELD: &'static str = "comment_id";
    fn key(&self) -> &str {
        &self.comment_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub skipped: Vec<SkippedLine>,
}

pub fn load_videos(path: impl AsRef<Path>) -> Result<Loaded<VideoDoc>> {
    load_jsonl(path)
}

pub fn load_comments(path: impl AsRef<Path>) -> Result<Loaded<Comment>> {
    load_jsonl(path)
}

/// Loads keyed JSONL records in file order. Malformed lines, empty keys and
/// duplicate keys are skipped and reported; blank lines are ignored.
pub fn load_jsonl<T: DeserializeOwned + Keyed>(path: impl AsRef<Path>) -> Result<Loaded<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<T> = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let reason = match serde_json::from_str::<T>(&line) {
            Ok(rec) if rec.key().is_empty() => format!("empty {}", T::KEY_FIELD),
            Ok(rec) if !seen.insert(rec.key().to_owned()) => {
                format!("duplicate {} {:?}", T::KEY_FIELD, rec.key())
            }
            Ok(rec) => {
                records.push(rec);
                continue;
            }
            Err(e) => e.to_string(),
        };
        log::warn!("{}:{}: skipping line: {}", path.display(), lineno, reason);
        skipped.push(SkippedLine {
            line: lineno,
            reason,
        });
    }
    Ok(Loaded { records, skipped })
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Ids of comments whose `video_id` does not refer to a loaded video.
pub fn orphaned_comments<'a>(comments: &'a [Comment], videos: &[VideoDoc]) -> Vec<&'a str> {
    let ids: HashSet<&str> = videos.iter().map(|v| v.video_id.as_str()).collect();
    comments
        .iter()
        .filter(|c| !ids.contains(c.video_id.as_str()))
        .map(|c| c.comment_id.as_str())
        .collect()
}
