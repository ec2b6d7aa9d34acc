use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::{train_lda, LdaConfig, LdaModel};
use crate::coherence::{coherence_cv, coherence_umass, CoherenceConfig, CoherenceMeasure};
use crate::error::{Error, Result};
use crate::tokenize::BowDoc;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepScores {
    pub coherence_cv: Option<f64>,
    pub coherence_umass: Option<f64>,
    pub perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub num_topics: usize,
    pub seed: u64,
    pub outcome: std::result::Result<SweepScores, String>,
    pub wallclock_s: f64,
    pub model: Option<LdaModel>,
}

impl SweepRecord {
    pub fn failed(&self) -> bool {
        self.outcome.is_err()
    }

    pub fn coherence(&self, measure: CoherenceMeasure) -> Option<f64> {
        let scores = self.outcome.as_ref().ok()?;
        match measure {
            CoherenceMeasure::Cv => scores.coherence_cv,
            CoherenceMeasure::UMass => scores.coherence_umass,
        }
    }
}

/// One config per topic count, seeded `base.seed + K`; `alpha` follows K
/// when the base leaves it unset.
pub fn sweep_configs(topic_counts: impl IntoIterator<Item = usize>, base: &LdaConfig) -> Vec<LdaConfig> {
    topic_counts
        .into_iter()
        .map(|k| LdaConfig {
            num_topics: k,
            seed: base.seed.wrapping_add(k as u64),
            ..base.clone()
        })
        .collect()
}

/// Trains one model per config (in parallel) and scores each with C_v,
/// UMass and training perplexity. Failures are recorded, not propagated.
pub fn sweep_topics(
    docs: &[BowDoc],
    vocab_size: usize,
    reference: &[Vec<u32>],
    configs: &[LdaConfig],
    coherence: &CoherenceConfig,
) -> Result<Vec<SweepRecord>> {
    if configs.is_empty() {
        return Err(Error::Config("topic sweep needs at least one topic count".into()));
    }
    coherence.validate()?;
    let records = configs
        .par_iter()
        .map(|config| {
            let started = Instant::now();
            let trained = train_lda(docs, vocab_size, config).and_then(|model| {
                let topics = (0..model.num_topics())
                    .map(|k| model.top_keywords(k, coherence.top_n))
                    .collect::<Result<Vec<_>>>()?;
                let scores = SweepScores {
                    coherence_cv: coherence_cv(&topics, reference, coherence).mean,
                    coherence_umass: coherence_umass(&topics, reference).mean,
                    perplexity: model.perplexity(docs)?,
                };
                Ok((model, scores))
            });
            let wallclock_s = started.elapsed().as_secs_f64();
            match trained {
                Ok((model, scores)) => SweepRecord {
                    num_topics: config.num_topics,
                    seed: config.seed,
                    outcome: Ok(scores),
                    wallclock_s,
                    model: Some(model),
                },
                Err(e) => {
                    log::warn!("sweep K={}: {e}", config.num_topics);
                    SweepRecord {
                        num_topics: config.num_topics,
                        seed: config.seed,
                        outcome: Err(e.to_string()),
                        wallclock_s,
                        model: None,
                    }
                }
            }
        })
        .collect();
    Ok(records)
}

/// Topic count with the highest coherence under `measure`, ties by smaller K.
pub fn best_by_coherence(records: &[SweepRecord], measure: CoherenceMeasure) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in records {
        if let Some(c) = r.coherence(measure) {
            let better = match best {
                None => true,
                Some((k, b)) => c > b || (c == b && r.num_topics < k),
            };
            if better {
                best = Some((r.num_topics, c));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// `K,coherence_cv,coherence_umass,perplexity,wallclock_s,status` rows.
pub fn write_sweep_csv(path: impl AsRef<Path>, records: &[SweepRecord]) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "K",
        "coherence_cv",
        "coherence_umass",
        "perplexity",
        "wallclock_s",
        "status",
    ])
    .map_err(err)?;
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in records {
        let (cv, umass, perplexity, status) = match &r.outcome {
            Ok(s) => (
                fmt(s.coherence_cv),
                fmt(s.coherence_umass),
                fmt(Some(s.perplexity)),
                "ok".to_string(),
            ),
            Err(e) => (String::new(), String::new(), String::new(), format!("failed: {e}")),
        };
        w.write_record([
            r.num_topics.to_string(),
            cv,
            umass,
            perplexity,
            format!("{:.3}", r.wallclock_s),
            status,
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn corpus() -> (Vec<BowDoc>, Vec<Vec<u32>>) {
        let seqs: Vec<Vec<u32>> = (0..12)
            .map(|d| {
                if d % 2 == 0 {
                    vec![0, 1, 2, 0, 1]
                } else {
                    vec![3, 4, 5, 3, 5]
                }
            })
            .collect();
        let docs = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut counts = BTreeMap::new();
                for &w in s {
                    *counts.entry(w).or_insert(0) += 1;
                }
                BowDoc::new(format!("d{i}"), counts)
            })
            .collect();
        (docs, seqs)
    }

    fn base() -> LdaConfig {
        LdaConfig {
            iterations: 40,
            burn_in: 10,
            seed: 100,
            ..LdaConfig::new(2)
        }
    }

    #[test]
    fn configs_derive_seeds_from_k() {
        let cfgs = sweep_configs(2..=20, &base());
        assert_eq!(cfgs.len(), 19);
        assert_eq!(cfgs[0].seed, 102);
        assert_eq!(cfgs[18].num_topics, 20);
        assert_eq!(cfgs[18].alpha(), 2.5);
    }

    #[test]
    fn singleton_sweep() {
        let (docs, seqs) = corpus();
        let recs = sweep_topics(&docs, 6, &seqs, &sweep_configs([3], &base()), &CoherenceConfig::default()).unwrap();
        assert_eq!(recs.len(), 1);
        let s = recs[0].outcome.as_ref().unwrap();
        assert!(s.perplexity > 1.0);
        assert!(s.coherence_cv.is_some() && s.coherence_umass.is_some());
    }

    #[test]
    fn failing_entry_is_flagged_and_sweep_continues() {
        let (docs, seqs) = corpus();
        let mut cfgs = sweep_configs(2..=4, &base());
        cfgs[1].burn_in = cfgs[1].iterations;
        let recs = sweep_topics(&docs, 6, &seqs, &cfgs, &CoherenceConfig::default()).unwrap();
        let failed: Vec<bool> = recs.iter().map(SweepRecord::failed).collect();
        assert_eq!(failed, [false, true, false]);
        assert!(recs[1].model.is_none());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "K,coherence_cv,coherence_umass,perplexity,wallclock_s,status");
        assert!(lines[2].starts_with("3,,,,"));
        assert!(lines[2].contains("failed"));
        assert!(lines[1].ends_with(",ok"));
    }

    #[test]
    fn empty_range_is_config_error() {
        let (docs, seqs) = corpus();
        assert!(sweep_topics(&docs, 6, &seqs, &[], &CoherenceConfig::default()).unwrap_err().is_config());
    }

    #[test]
    fn best_prefers_smaller_k_on_ties() {
        let rec = |k, c| SweepRecord {
            num_topics: k,
            seed: 0,
            outcome: Ok(SweepScores { coherence_cv: Some(c), coherence_umass: None, perplexity: 1.0 }),
            wallclock_s: 0.0,
            model: None,
        };
        let recs = vec![rec(2, 0.4), rec(3, 0.6), rec(4, 0.6), rec(5, 0.1)];
        assert_eq!(best_by_coherence(&recs, CoherenceMeasure::Cv), Some(3));
        assert_eq!(best_by_coherence(&recs, CoherenceMeasure::UMass), None);
    }
}
