use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use super::SentimentLabel;
use crate::error::{Error, Result};

/// Zero-shot system prompt, byte for byte.
pub const ZERO_SHOT_SYSTEM: &str = "次に提供されるYouTubeのコメントの全体的な感情を分類してください。感情の分類は、以下の3つの選択肢から1つを選んでください：ポジティブ、中立・判断不可能、ネガティブ。選択肢のみを出力してください。";

/// SHA-256 of [`ZERO_SHOT_SYSTEM`] as UTF-8.
pub const ZERO_SHOT_SHA256: &str =
    "bf04015760df17a7663c81ee707234f0417a9d23765e2bcfdf91ed475d64e950";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero_shot",
            PromptMode::FewShot => "few_shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub comment: String,
    pub label: SentimentLabel,
}

/// Two examples per class; the first is the published positive example.
pub fn default_few_shot_examples() -> Vec<FewShotExample> {
    let ex = |comment: &str, label| FewShotExample {
        comment: comment.into(),
        label,
    };
    vec![
        ex("しっかり勉強するのは良い事です自分を学び治す為にも", SentimentLabel::Positive),
        ex("丁寧な説明でとても分かりやすかったです。ありがとうございます", SentimentLabel::Positive),
        ex("処理水の放出は来週から始まるそうです", SentimentLabel::Neutral),
        ex("次の審査はいつ行われるのでしょうか", SentimentLabel::Neutral),
        ex("こんな対応では不安しかない。誰も責任を取らないのか", SentimentLabel::Negative),
        ex("説明が全く足りないし、政府の発表は信用できません", SentimentLabel::Negative),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    mode: PromptMode,
    system: String,
}

impl PromptTemplate {
    pub fn zero_shot() -> Self {
        PromptTemplate {
            mode: PromptMode::ZeroShot,
            system: ZERO_SHOT_SYSTEM.to_owned(),
        }
    }

    /// Appends the examples in the given order; there must be exactly two per class.
    pub fn few_shot(examples: &[FewShotExample]) -> Result<Self> {
        if examples.len() != 6 {
            return Err(Error::Config(format!(
                "few-shot prompt needs 6 examples, got {}",
                examples.len()
            )));
        }
        for label in SentimentLabel::ALL {
            let n = examples.iter().filter(|e| e.label == label).count();
            if n != 2 {
                return Err(Error::Config(format!(
                    "few-shot prompt needs 2 {label} examples, got {n}"
                )));
            }
        }
        if let Some(e) = examples.iter().find(|e| e.comment.trim().is_empty()) {
            return Err(Error::Config(format!("empty {} few-shot example", e.label)));
        }
        let mut system = ZERO_SHOT_SYSTEM.to_owned();
        for e in examples {
            system.push_str("\n\n例:\nコメント: ");
            system.push_str(e.comment.trim());
            system.push('\n');
            system.push_str(e.label.japanese());
        }
        Ok(PromptTemplate {
            mode: PromptMode::FewShot,
            system,
        })
    }

    pub fn new(mode: PromptMode, examples: &[FewShotExample]) -> Result<Self> {
        match mode {
            PromptMode::ZeroShot => Ok(Self::zero_shot()),
            PromptMode::FewShot => Self::few_shot(examples),
        }
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }

    pub fn system_text(&self) -> &str {
        &self.system
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.system.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// System text from the template and the comment itself as the user turn;
/// `None` for blank comments.
pub fn build_prompt(comment: &str, template: &PromptTemplate) -> Option<Prompt> {
    if comment.trim().is_empty() {
        return None;
    }
    Some(Prompt {
        system: template.system.clone(),
        user: comment.to_owned(),
    })
}

/// Extra accepted spellings, compared after NFKC and lowercasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasTable(pub BTreeMap<String, SentimentLabel>);

impl Default for AliasTable {
    fn default() -> Self {
        AliasTable(BTreeMap::from([
            ("positive".into(), SentimentLabel::Positive),
            ("neutral".into(), SentimentLabel::Neutral),
            ("negative".into(), SentimentLabel::Negative),
            ("中立".into(), SentimentLabel::Neutral),
            ("判断不可能".into(), SentimentLabel::Neutral),
        ]))
    }
}

impl AliasTable {
    pub fn empty() -> Self {
        AliasTable(BTreeMap::new())
    }
}

fn trimmable(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation() || "。、．，！？「」『』（）【】“”‘’…：；".contains(c)
}

/// Matches the trimmed response against the three option strings, then the aliases.
pub fn parse_llm_response(text: &str, aliases: &AliasTable) -> Result<SentimentLabel> {
    let normalized: String = text.nfkc().collect();
    let core = normalized.trim_matches(trimmable);
    if let Some(label) = SentimentLabel::ALL.into_iter().find(|l| l.japanese() == core) {
        return Ok(label);
    }
    let folded = core.to_lowercase();
    aliases
        .0
        .iter()
        .find(|(alias, _)| alias.nfkc().collect::<String>().to_lowercase() == folded)
        .map(|(_, l)| *l)
        .ok_or_else(|| Error::UnparsableResponse {
            raw: text.to_owned(),
        })
}
