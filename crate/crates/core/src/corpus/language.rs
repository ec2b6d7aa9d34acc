use rayon::prelude::*;
use thiserror::Error;

use super::Comment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Language {
    Japanese,
    NotJapanese,
}

#[derive(Debug, Error)]
#[error("language classification failed: {0}")]
pub struct ClassifierError(pub String);

/// Decides whether a comment is written in Japanese.
pub trait LanguageClassifier: Send + Sync {
    fn classify(&self, text: &str) -> Result<Language, ClassifierError>;
}

fn is_japanese_script(c: char) -> bool {
    matches!(c,
        '\u{3040}'..='\u{309F}'   // hiragana
        | '\u{30A0}'..='\u{30FF}' // katakana
        | '\u{31F0}'..='\u{31FF}' // katakana phonetic extensions
        | '\u{FF66}'..='\u{FF9F}' // half-width katakana
        | '\u{3400}'..='\u{4DBF}' // CJK extension A
        | '\u{4E00}'..='\u{9FFF}' // CJK unified
        | '\u{F900}'..='\u{FAFF}' // CJK compatibility
        | '\u{20000}'..='\u{2FA1F}'
        | '々' | '〆')
}

/// Share of letters that are kana or kanji; `None` when the text has no letters.
pub fn japanese_script_ratio(text: &str) -> Option<f64> {
    let (mut jp, mut letters) = (0usize, 0usize);
    for c in text.chars() {
        if is_japanese_script(c) {
            jp += 1;
            letters += 1;
        } else if c.is_alphabetic() {
            letters += 1;
        }
    }
    (letters > 0).then(|| jp as f64 / letters as f64)
}

/// Labels text Japanese when the kana/kanji share of its letters reaches
/// `threshold`. Text without any letters counts as not Japanese.
#[derive(Debug, Clone, Copy)]
pub struct ScriptRatioClassifier {
    pub threshold: f64,
}

impl Default for ScriptRatioClassifier {
    fn default() -> Self {
        ScriptRatioClassifier { threshold: 0.3 }
    }
}

impl LanguageClassifier for ScriptRatioClassifier {
    fn classify(&self, text: &str) -> Result<Language, ClassifierError> {
        Ok(match japanese_script_ratio(text) {
            Some(r) if r >= self.threshold => Language::Japanese,
            _ => Language::NotJapanese,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct LanguageFilterOutcome {
    pub kept: Vec<Comment>,
    pub removed: Vec<Comment>,
    /// Comments the classifier failed on; they are kept.
    pub flagged: Vec<(String, String)>,
}

pub fn filter_language(
    comments: &[Comment],
    classifier: &dyn LanguageClassifier,
) -> LanguageFilterOutcome {
    let verdicts: Vec<_> = comments
        .par_iter()
        .map(|c| classifier.classify(&c.text))
        .collect();
    let mut out = LanguageFilterOutcome::default();
    for (comment, verdict) in comments.iter().zip(verdicts) {
        match verdict {
            Ok(Language::Japanese) => out.kept.push(comment.clone()),
            Ok(Language::NotJapanese) => out.removed.push(comment.clone()),
            Err(e) => {
                log::warn!("comment {}: {e}; keeping it", comment.comment_id);
                out.flagged.push((comment.comment_id.clone(), e.to_string()));
                out.kept.push(comment.clone());
            }
        }
    }
    out
}
