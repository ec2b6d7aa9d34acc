//! Three-way comment sentiment: lexicon scoring, LLM prompting and
//! weighted evaluation against gold labels.

mod lexicon;
mod llm;
mod metrics;
mod prompt;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lexicon::{
    classify_from_ratio, classify_from_score, lexicon_score, LexiconBuilder, LexiconConflict,
    LexiconScore, Polarity, PolarityLexicon, NEUTRAL_BAND,
};
pub use llm::{
    llm_classify, ChatChoice, ChatMessage, ChatRequest, ChatResponse, LlmBackendConfig,
    LlmFailure, LlmRun,
};
pub use metrics::{
    evaluate, read_benchmark_csv, write_benchmark_csv, write_confusion_csv, BenchmarkRow,
    ClassMetrics, ConfusionMatrix, Evaluation,
};
pub use prompt::{
    build_prompt, default_few_shot_examples, parse_llm_response, AliasTable, FewShotExample,
    Prompt, PromptMode, PromptTemplate, ZERO_SHOT_SHA256, ZERO_SHOT_SYSTEM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Neutral,
    Negative,
}

impl SentimentLabel {
    /// Fixed order used for confusion matrices.
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Positive,
        SentimentLabel::Neutral,
        SentimentLabel::Negative,
    ];

    pub fn index(self) -> usize {
        match self {
            SentimentLabel::Positive => 0,
            SentimentLabel::Neutral => 1,
            SentimentLabel::Negative => 2,
        }
    }

    /// +1, 0 or −1.
    pub fn value(self) -> i64 {
        match self {
            SentimentLabel::Positive => 1,
            SentimentLabel::Neutral => 0,
            SentimentLabel::Negative => -1,
        }
    }

    /// The option string the LLM is asked to output.
    pub fn japanese(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "ポジティブ",
            SentimentLabel::Neutral => "中立・判断不可能",
            SentimentLabel::Negative => "ネガティブ",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Negative => "negative",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Ok(SentimentLabel::Positive),
            "neutral" => Ok(SentimentLabel::Neutral),
            "negative" => Ok(SentimentLabel::Negative),
            _ => Err(Error::Config(format!("unknown sentiment label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lexicon,
    Llm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lexicon => "lexicon",
            Method::Llm => "llm",
        })
    }
}

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledComment {
    pub comment_id: String,
    pub label: SentimentLabel,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default)]
    pub model_tag: String,
}

impl LabeledComment {
    /// Lexicon result; unscored comments carry no score and are neutral.
    pub fn from_lexicon(comment_id: impl Into<String>, score: &LexiconScore, tag: &str) -> Self {
        LabeledComment {
            comment_id: comment_id.into(),
            label: score.label(),
            method: Method::Lexicon,
            score: score.value(),
            model_tag: tag.to_owned(),
        }
    }

    /// Checks the score/method pairing and threshold consistency.
    pub fn validate(&self) -> Result<()> {
        match (self.method, self.score) {
            (Method::Llm, Some(_)) => Err(Error::Data(format!(
                "{}: LLM labels carry no score",
                self.comment_id
            ))),
            (Method::Lexicon, Some(s)) if !(-1.0..=1.0).contains(&s) => Err(Error::Data(format!(
                "{}: score {s} outside [-1, 1]",
                self.comment_id
            ))),
            (Method::Lexicon, Some(s)) if classify_from_score(Some(s)) != self.label => {
                Err(Error::Data(format!(
                    "{}: label {} inconsistent with score {s}",
                    self.comment_id, self.label
                )))
            }
            (Method::Lexicon, None) if self.label != SentimentLabel::Neutral => Err(Error::Data(
                format!("{}: unscored comment must be neutral", self.comment_id),
            )),
            _ => Ok(()),
        }
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabeledComment>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Gold labels: JSONL lines with at least `comment_id` and `label`.
pub fn read_gold(path: impl AsRef<Path>) -> Result<Vec<(String, SentimentLabel)>> {
    #[derive(Deserialize)]
    struct Gold {
        comment_id: String,
        label: SentimentLabel,
    }
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<Gold>(l)
                .map(|g| (g.comment_id, g.label))
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}
