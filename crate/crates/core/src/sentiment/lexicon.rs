use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::SentimentLabel;
use crate::error::{Error, Result};

/// Scores in `[-NEUTRAL_BAND, NEUTRAL_BAND]` are neutral.
pub const NEUTRAL_BAND: f64 = 0.33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    fn parse(raw: &str) -> Option<Self> {
        match raw.trim() {
            "+1" | "1" | "+" | "p" | "pos" | "positive" => Some(Polarity::Positive),
            "-1" | "\u{2212}1" | "-" | "n" | "neg" | "negative" => Some(Polarity::Negative),
            _ => None,
        }
    }
}

fn normalize_term(term: &str) -> String {
    term.trim().nfkc().collect::<String>().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarityLexicon {
    entries: BTreeMap<String, (Polarity, String)>,
}

impl PolarityLexicon {
    pub fn get(&self, term: &str) -> Option<Polarity> {
        self.entries.get(term).map(|(p, _)| *p)
    }

    pub fn source(&self, term: &str) -> Option<&str> {
        self.entries.get(term).map(|(_, s)| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, Polarity)> {
        self.entries.iter().map(|(t, (p, _))| (t.as_str(), *p))
    }

    /// Merges TSV files, each tagged with its file name; conflicting terms
    /// are dropped and returned.
    pub fn load_tsv(paths: &[impl AsRef<Path>]) -> Result<(Self, Vec<LexiconConflict>)> {
        let mut builder = LexiconBuilder::default();
        for p in paths {
            let p = p.as_ref();
            let tag = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            builder.add_tsv(p, &tag)?;
        }
        builder.build()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconConflict {
    pub term: String,
    pub sources: Vec<String>,
}

/// Accumulates polarity entries from several sources. A term given both
/// polarities anywhere is removed from the final lexicon.
#[derive(Debug, Default)]
pub struct LexiconBuilder {
    entries: BTreeMap<String, (Polarity, String)>,
    conflicted: BTreeMap<String, BTreeSet<String>>,
}

impl LexiconBuilder {
    pub fn add(&mut self, term: &str, polarity: Polarity, source: &str) {
        let term = normalize_term(term);
        if term.is_empty() {
            return;
        }
        if let Some(sources) = self.conflicted.get_mut(&term) {
            sources.insert(source.to_owned());
            return;
        }
        match self.entries.get(&term) {
            None => {
                self.entries.insert(term, (polarity, source.to_owned()));
            }
            Some((p, _)) if *p == polarity => {}
            Some((_, first)) => {
                let sources = BTreeSet::from([first.clone(), source.to_owned()]);
                self.entries.remove(&term);
                self.conflicted.insert(term, sources);
            }
        }
    }

    /// Lines are `term<TAB>polarity` with polarity `+1` or `-1`; `#` lines are comments.
    pub fn add_tsv(&mut self, path: &Path, source: &str) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed = line
                .split_once('\t')
                .and_then(|(t, p)| Some((t, Polarity::parse(p)?)));
            match parsed {
                Some((term, polarity)) => self.add(term, polarity, source),
                None => {
                    return Err(Error::Data(format!(
                        "{}:{}: expected term<TAB>+1|-1",
                        path.display(),
                        n + 1
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn build(self) -> Result<(PolarityLexicon, Vec<LexiconConflict>)> {
        let conflicts: Vec<LexiconConflict> = self
            .conflicted
            .into_iter()
            .map(|(term, sources)| LexiconConflict {
                term,
                sources: sources.into_iter().collect(),
            })
            .collect();
        for c in &conflicts {
            log::warn!("lexicon: dropping {:?}, conflicting polarity in {:?}", c.term, c.sources);
        }
        if self.entries.is_empty() {
            return Err(Error::Config("polarity lexicon is empty".into()));
        }
        Ok((
            PolarityLexicon {
                entries: self.entries,
            },
            conflicts,
        ))
    }
}

/// Counts of positive and negative tokens in one comment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LexiconScore {
    pub positive: u32,
    pub negative: u32,
}

impl LexiconScore {
    /// `(pos − neg) / (pos + neg)` as an exact fraction; `None` when no
    /// token carries sentiment.
    pub fn ratio(&self) -> Option<Ratio<i64>> {
        let total = self.positive as i64 + self.negative as i64;
        (total > 0).then(|| Ratio::new(self.positive as i64 - self.negative as i64, total))
    }

    pub fn value(&self) -> Option<f64> {
        self.ratio().map(|r| *r.numer() as f64 / *r.denom() as f64)
    }

    pub fn label(&self) -> SentimentLabel {
        classify_from_ratio(self.ratio())
    }
}

pub fn lexicon_score<S: AsRef<str>>(tokens: &[S], lexicon: &PolarityLexicon) -> LexiconScore {
    let mut score = LexiconScore::default();
    for t in tokens {
        match lexicon.get(t.as_ref()) {
            Some(Polarity::Positive) => score.positive += 1,
            Some(Polarity::Negative) => score.negative += 1,
            None => {}
        }
    }
    score
}

/// Neutral for scores within ±0.33 inclusive and for unscored comments.
pub fn classify_from_score(score: Option<f64>) -> SentimentLabel {
    match score {
        Some(s) if s > NEUTRAL_BAND => SentimentLabel::Positive,
        Some(s) if s < -NEUTRAL_BAND => SentimentLabel::Negative,
        _ => SentimentLabel::Neutral,
    }
}

/// Exact-arithmetic form of [`classify_from_score`].
pub fn classify_from_ratio(score: Option<Ratio<i64>>) -> SentimentLabel {
    let band = Ratio::new(33, 100);
    match score {
        Some(s) if s > band => SentimentLabel::Positive,
        Some(s) if s < -band => SentimentLabel::Negative,
        _ => SentimentLabel::Neutral,
    }
}
