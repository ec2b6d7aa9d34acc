use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_for_match, VideoDoc};
use crate::error::{Error, Result};

/// Keyword rules applied to video titles and descriptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    pub required_any: Vec<String>,
    #[serde(default)]
    pub excluded_any: Vec<String>,
}

impl FilterRules {
    /// Reads rules from a `.json` file, or TOML otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rules: FilterRules = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<()> {
        if self.required_any.iter().all(|k| k.trim().is_empty()) {
            return Err(Error::Config(
                "filter rules need at least one required_any keyword".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    MissingRequired,
    ExcludedKeyword(String),
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::MissingRequired => f.write_str("missing-required"),
            DropReason::ExcludedKeyword(kw) => write!(f, "excluded-keyword:{kw}"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<VideoDoc>,
    pub dropped: Vec<(String, DropReason)>,
}

/// Keeps a video iff a required keyword occurs in its title or description
/// and no excluded keyword does. The required check is reported first.
pub fn filter_videos(videos: &[VideoDoc], rules: &FilterRules) -> Result<FilterOutcome> {
    rules.validate()?;
    let required: Vec<String> = rules
        .required_any
        .iter()
        .filter(|k| !k.trim().is_empty())
        .map(|k| normalize_for_match(k))
        .collect();
    let excluded: Vec<(String, &String)> = rules
        .excluded_any
        .iter()
        .filter(|k| !k.trim().is_empty())
        .map(|k| (normalize_for_match(k), k))
        .collect();

    let mut out = FilterOutcome::default();
    for video in videos {
        let haystack = format!(
            "{}\n{}",
            normalize_for_match(&video.title),
            normalize_for_match(&video.description)
        );
        let reason = if !required.iter().any(|k| haystack.contains(k.as_str())) {
            Some(DropReason::MissingRequired)
        } else {
            excluded
                .iter()
                .find(|(norm, _)| haystack.contains(norm.as_str()))
                .map(|(_, raw)| DropReason::ExcludedKeyword((*raw).clone()))
        };
        match reason {
            Some(r) => out.dropped.push((video.video_id.clone(), r)),
            None => out.kept.push(video.clone()),
        }
    }
    Ok(out)
}
