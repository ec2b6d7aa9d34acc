use std::sync::OnceLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)https?://\S*").unwrap())
}

// NFKC folds the full-width ＃ to #, so one ASCII class covers both forms.
fn hashtag_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(^|\s)#\S*").unwrap())
}

fn whitespace_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s+").unwrap())
}

/// NFKC-normalizes `raw`, removes URLs and hashtags (with the word attached
/// to the `#`), collapses whitespace runs and trims.
pub fn clean_text(raw: &str) -> String {
    let normalized: String = raw.nfkc().collect();
    let no_urls = url_pattern().replace_all(&normalized, " ");
    let no_tags = hashtag_pattern().replace_all(&no_urls, "$1");
    whitespace_pattern()
        .replace_all(&no_tags, " ")
        .trim()
        .to_owned()
}

/// Form used for keyword comparison: NFKC with lowercase letters.
pub fn normalize_for_match(text: &str) -> String {
    text.nfkc().collect::<String>().to_lowercase()
}
