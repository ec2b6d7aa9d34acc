//! Topic coherence over a reference corpus of term-id sequences.
//!
//! UMass scores ordered word pairs by document co-occurrence:
//! `log((D(wi, wj) + 1) / D(wj))` for every later word `wi` and earlier
//! word `wj`. C_v counts co-occurrence in boolean sliding windows, maps each
//! top word to its NPMI vector against the whole top-word set and averages
//! the cosine between each word vector and the sum of all vectors.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoherenceMeasure {
    #[serde(rename = "c_v", alias = "cv", alias = "CV")]
    Cv,
    #[serde(rename = "u_mass", alias = "umass", alias = "UMASS")]
    UMass,
}

impl fmt::Display for CoherenceMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoherenceMeasure::Cv => "c_v",
            CoherenceMeasure::UMass => "u_mass",
        })
    }
}

impl FromStr for CoherenceMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c_v" | "cv" => Ok(CoherenceMeasure::Cv),
            "u_mass" | "umass" => Ok(CoherenceMeasure::UMass),
            _ => Err(Error::Config(format!("unknown coherence measure {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceConfig {
    pub measure: CoherenceMeasure,
    pub top_n: usize,
    pub window: usize,
    pub epsilon: f64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig {
            measure: CoherenceMeasure::Cv,
            top_n: 10,
            window: 110,
            epsilon: 1e-12,
        }
    }
}

impl CoherenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n < 2 {
            return Err(Error::Config("coherence top_n must be at least 2".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("coherence window must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("coherence epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoherenceScores {
    /// `None` for topics with fewer than two scorable words.
    pub per_topic: Vec<Option<f64>>,
    /// Mean of the defined per-topic scores.
    pub mean: Option<f64>,
    pub warnings: Vec<String>,
}

impl CoherenceScores {
    fn finish(per_topic: Vec<Option<f64>>, warnings: Vec<String>) -> Self {
        let defined: Vec<f64> = per_topic.iter().flatten().copied().collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        for w in &warnings {
            log::warn!("{w}");
        }
        CoherenceScores {
            per_topic,
            mean,
            warnings,
        }
    }
}

/// Dense indexing of every word that appears in some topic.
struct Relevant {
    index: HashMap<u32, usize>,
}

impl Relevant {
    fn new(topics: &[Vec<u32>]) -> Self {
        let mut index = HashMap::new();
        for &w in topics.iter().flatten() {
            let next = index.len();
            index.entry(w).or_insert(next);
        }
        Relevant { index }
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

/// Occurrence counts of relevant words over a set of boolean "virtual documents".
struct Occurrences {
    units: u64,
    single: Vec<u64>,
    pair: Vec<u64>,
    n: usize,
}

impl Occurrences {
    fn new(n: usize) -> Self {
        Occurrences {
            units: 0,
            single: vec![0; n],
            pair: vec![0; n * n],
            n,
        }
    }

    /// `present` must be sorted and deduplicated.
    fn add_unit(&mut self, present: &[usize]) {
        self.units += 1;
        for (a, &i) in present.iter().enumerate() {
            self.single[i] += 1;
            for &j in &present[a + 1..] {
                self.pair[i * self.n + j] += 1;
            }
        }
    }

    fn single(&self, i: usize) -> u64 {
        self.single[i]
    }

    fn joint(&self, i: usize, j: usize) -> u64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => self.single[i],
            std::cmp::Ordering::Less => self.pair[i * self.n + j],
            std::cmp::Ordering::Greater => self.pair[j * self.n + i],
        }
    }
}

fn document_occurrences(relevant: &Relevant, docs: &[Vec<u32>]) -> Occurrences {
    let mut occ = Occurrences::new(relevant.len());
    let mut present = Vec::new();
    for doc in docs {
        present.clear();
        present.extend(doc.iter().filter_map(|w| relevant.index.get(w).copied()));
        present.sort_unstable();
        present.dedup();
        occ.add_unit(&present);
    }
    occ
}

fn window_occurrences(relevant: &Relevant, docs: &[Vec<u32>], window: usize) -> Occurrences {
    let mut occ = Occurrences::new(relevant.len());
    let mut present = Vec::new();
    for doc in docs {
        if doc.is_empty() {
            continue;
        }
        // (position, dense id) of relevant tokens, in position order
        let hits: Vec<(usize, usize)> = doc
            .iter()
            .enumerate()
            .filter_map(|(p, w)| relevant.index.get(w).map(|&r| (p, r)))
            .collect();
        let starts = if doc.len() <= window {
            1
        } else {
            doc.len() - window + 1
        };
        let mut lo = 0;
        let mut hi = 0;
        for start in 0..starts {
            let end = start + window;
            while lo < hits.len() && hits[lo].0 < start {
                lo += 1;
            }
            while hi < hits.len() && hits[hi].0 < end {
                hi += 1;
            }
            present.clear();
            present.extend(hits[lo..hi].iter().map(|&(_, r)| r));
            present.sort_unstable();
            present.dedup();
            occ.add_unit(&present);
        }
    }
    occ
}

/// UMass coherence with document co-occurrence counts. Words absent from
/// every document are dropped from their topic with a warning.
pub fn coherence_umass(topics: &[Vec<u32>], docs: &[Vec<u32>]) -> CoherenceScores {
    let relevant = Relevant::new(topics);
    let occ = document_occurrences(&relevant, docs);
    let mut warnings = Vec::new();
    let per_topic = topics
        .iter()
        .enumerate()
        .map(|(t, words)| {
            let ids = scorable(t, words, &relevant, &occ, &mut warnings);
            if ids.len() < 2 {
                warnings.push(format!("topic {t}: fewer than two scorable words"));
                return None;
            }
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 1..ids.len() {
                for j in 0..i {
                    let joint = occ.joint(ids[i], ids[j]) as f64;
                    total += ((joint + 1.0) / occ.single(ids[j]) as f64).ln();
                    pairs += 1;
                }
            }
            Some(total / pairs as f64)
        })
        .collect();
    CoherenceScores::finish(per_topic, warnings)
}

fn scorable(
    topic: usize,
    words: &[u32],
    relevant: &Relevant,
    occ: &Occurrences,
    warnings: &mut Vec<String>,
) -> Vec<usize> {
    let mut seen = Vec::new();
    for w in words {
        let r = relevant.index[w];
        if occ.single(r) == 0 {
            warnings.push(format!("topic {topic}: word {w} never occurs in the reference corpus"));
        } else if !seen.contains(&r) {
            seen.push(r);
        }
    }
    seen
}

/// Normalized PMI with `epsilon` added to the joint probability. When the
/// joint probability is (numerically) one the limit value 1 is returned.
pub fn npmi(p_joint: f64, p_a: f64, p_b: f64, epsilon: f64) -> f64 {
    let denom = -(p_joint + epsilon).ln();
    if denom <= 0.0 {
        return 1.0;
    }
    ((p_joint + epsilon) / (p_a * p_b)).ln() / denom
}

/// C_v coherence with boolean sliding windows of `config.window` tokens.
/// Documents no longer than the window form a single window.
pub fn coherence_cv(
    topics: &[Vec<u32>],
    docs: &[Vec<u32>],
    config: &CoherenceConfig,
) -> CoherenceScores {
    let relevant = Relevant::new(topics);
    let occ = window_occurrences(&relevant, docs, config.window.max(1));
    let mut warnings = Vec::new();
    if occ.units == 0 {
        warnings.push("reference corpus has no windows".into());
        return CoherenceScores::finish(vec![None; topics.len()], warnings);
    }
    let units = occ.units as f64;
    let per_topic = topics
        .iter()
        .enumerate()
        .map(|(t, words)| {
            let ids = scorable(t, words, &relevant, &occ, &mut warnings);
            if ids.len() < 2 {
                warnings.push(format!("topic {t}: fewer than two scorable words"));
                return None;
            }
            let vectors: Vec<Vec<f64>> = ids
                .iter()
                .map(|&a| {
                    ids.iter()
                        .map(|&b| {
                            npmi(
                                occ.joint(a, b) as f64 / units,
                                occ.single(a) as f64 / units,
                                occ.single(b) as f64 / units,
                                config.epsilon,
                            )
                        })
                        .collect()
                })
                .collect();
            let mut sum = vec![0.0; ids.len()];
            for v in &vectors {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
            let total: f64 = vectors
                .iter()
                .map(|v| match cosine(v, &sum) {
                    Some(c) => c,
                    None => {
                        warnings.push(format!("topic {t}: zero context vector, cosine set to 0"));
                        0.0
                    }
                })
                .sum();
            Some(total / ids.len() as f64)
        })
        .collect();
    CoherenceScores::finish(per_topic, warnings)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn coherence(
    topics: &[Vec<u32>],
    docs: &[Vec<u32>],
    config: &CoherenceConfig,
) -> CoherenceScores {
    match config.measure {
        CoherenceMeasure::Cv => coherence_cv(topics, docs, config),
        CoherenceMeasure::UMass => coherence_umass(topics, docs),
    }
}

/// `topic_id,measure,score` rows followed by an `overall` row per measure.
pub fn write_coherence_csv(
    path: impl AsRef<Path>,
    results: &[(CoherenceMeasure, &CoherenceScores)],
) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["topic_id", "measure", "score"]).map_err(err)?;
    let fmt = |s: Option<f64>| s.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (measure, scores) in results {
        for (t, s) in scores.per_topic.iter().enumerate() {
            w.write_record([t.to_string(), measure.to_string(), fmt(*s)])
                .map_err(err)?;
        }
        w.write_record(["overall".to_string(), measure.to_string(), fmt(scores.mean)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
