//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p opinion-cli --test acceptance`; the summary lines
//! go straight to stdout so they show up without `--nocapture`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{FixedOffset, TimeZone, Utc};
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use sha2::{Digest, Sha256};

use opinion_core::aggregate::{monthly_scores, topic_sentiment, AggregateOptions, SentimentRecord};
use opinion_core::coherence::{coherence_cv, coherence_umass, CoherenceConfig};
use opinion_core::cooccur::{build_graph, split_sentences, to_graphml, CooccurrenceGraph, GraphOptions};
use opinion_core::lda::{perplexity_with, sweep_configs, sweep_topics, train_lda, train_lda_observed, LdaConfig};
use opinion_core::sentiment::{
    classify_from_ratio, classify_from_score, evaluate, llm_classify, parse_llm_response, AliasTable,
    ConfusionMatrix, LexiconBuilder, LexiconScore, LlmBackendConfig, Polarity, PromptMode, SentimentLabel,
    ZERO_SHOT_SHA256,
};
use opinion_core::stub::StubServer;
use opinion_core::synth::{self, best_match_purity, two_topic_corpus};
use opinion_core::tokenize::{BaselineTokenizer, Pos, Tokenizer, UserDictionary};

// Tolerances and limits, fixed here so no criterion can drift.
const SCORER_MAX: Duration = Duration::from_secs(1);
const LDA_MAX: Duration = Duration::from_secs(30);
const PIPELINE_MAX: Duration = Duration::from_secs(120);
const PURITY_MIN: f64 = 0.95;
const PERPLEXITY_TOL: f64 = 1e-9;
const COHERENCE_TOL: f64 = 1e-9;
const UMASS_HAND_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-4;
const SHARE_TOL: f64 = 1e-9;
const FUZZ_MATRICES: u32 = 1000;

/// The zero-shot system prompt, kept verbatim and independent of the
/// library's own copy.
const ZERO_SHOT_TEXT: &str = "次に提供されるYouTubeのコメントの全体的な感情を分類してください。感情の分類は、以下の3つの選択肢から1つを選んでください：ポジティブ、中立・判断不可能、ネガティブ。選択肢のみを出力してください。";

type Check = Result<String, String>;
type Criterion = fn() -> Check;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng() -> TestRunner {
    TestRunner::new_with_rng(
        PropConfig {
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

/// Runs `check` on `cases` generated values; the first failure is reported.
fn fuzz<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Result<(), String>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = rng();
    for _ in 0..cases {
        let value = strategy
            .new_tree(&mut runner)
            .map_err(|e| format!("generator failed: {e}"))?
            .current();
        let shown = format!("{value:?}");
        check(value).map_err(|e| format!("{e} (input {})", truncate(&shown, 200)))?;
    }
    Ok(())
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_owned()
    } else {
        format!("{}...", s.chars().take(n).collect::<String>())
    }
}

// 1 -----------------------------------------------------------------------

fn scorer() -> Check {
    let start = Instant::now();
    let mut lex = LexiconBuilder::default();
    lex.add("良い", Polarity::Positive, "t");
    lex.add("悪い", Polarity::Negative, "t");
    let (lexicon, _) = lex.build().map_err(|e| e.to_string())?;
    for pos in 0..=10u32 {
        for neg in 0..=10u32 {
            let mut tokens = vec!["良い"; pos as usize];
            tokens.extend(vec!["悪い"; neg as usize]);
            tokens.push("中立語");
            let score = opinion_core::sentiment::lexicon_score(&tokens, &lexicon);
            ensure!(score == LexiconScore { positive: pos, negative: neg }, "counts for ({pos},{neg}): {score:?}");
            let total = (pos + neg) as i64;
            let want_label = match score.ratio() {
                None => {
                    ensure!(total == 0, "({pos},{neg}) has no score");
                    SentimentLabel::Neutral
                }
                Some(r) => {
                    ensure!(
                        r * Ratio::from_integer(total) == Ratio::from_integer(pos as i64 - neg as i64),
                        "score·(pos+neg) ≠ pos−neg at ({pos},{neg})"
                    );
                    // 100·(pos−neg) vs 33·(pos+neg), all in integers
                    let lhs = 100 * (pos as i64 - neg as i64);
                    if lhs > 33 * total {
                        SentimentLabel::Positive
                    } else if lhs < -33 * total {
                        SentimentLabel::Negative
                    } else {
                        SentimentLabel::Neutral
                    }
                }
            };
            ensure!(score.label() == want_label, "label at ({pos},{neg}): {:?}", score.label());
        }
    }
    let r = |n, d| Some(Ratio::new(n, d));
    ensure!(classify_from_ratio(r(33, 100)) == SentimentLabel::Neutral, "0.33 must be neutral");
    ensure!(classify_from_ratio(r(-33, 100)) == SentimentLabel::Neutral, "-0.33 must be neutral");
    ensure!(classify_from_ratio(r(1, 3)) == SentimentLabel::Positive, "1/3 must be positive");
    ensure!(classify_from_ratio(r(-1, 3)) == SentimentLabel::Negative, "-1/3 must be negative");
    ensure!(classify_from_score(Some(0.33)) == SentimentLabel::Neutral, "f64 0.33 must be neutral");
    ensure!(classify_from_score(Some(-0.33)) == SentimentLabel::Neutral, "f64 -0.33 must be neutral");
    ensure!(classify_from_score(Some(1.0 / 3.0)) == SentimentLabel::Positive, "f64 1/3 must be positive");
    ensure!(classify_from_score(Some(-1.0 / 3.0)) == SentimentLabel::Negative, "f64 -1/3 must be negative");
    ensure!(classify_from_ratio(None) == SentimentLabel::Neutral, "unscored must be neutral");
    let elapsed = start.elapsed();
    ensure!(elapsed < SCORER_MAX, "took {elapsed:?}");
    Ok(format!("121 count pairs and 9 boundary cases in {elapsed:.2?}"))
}

// 2 -----------------------------------------------------------------------

fn lda_config(k: usize) -> LdaConfig {
    LdaConfig {
        iterations: 500,
        seed: 7,
        ..LdaConfig::new(k)
    }
}

fn lda_recovery() -> Check {
    let start = Instant::now();
    let c = two_topic_corpus(2024, 100, 10, 50);
    let mut sweeps = 0;
    let mut violation = None;
    let model = train_lda_observed(&c.docs, c.vocab_size, &lda_config(2), |sweep, state| {
        sweeps += 1;
        if violation.is_none() {
            if let Err(e) = state.check_conservation() {
                violation = Some(format!("sweep {sweep}: {e}"));
            }
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(v) = violation {
        return Err(v);
    }
    ensure!(sweeps == 500, "observed {sweeps} sweeps");
    let purity = best_match_purity(&model.phi, &c.topic_words);
    ensure!(purity >= PURITY_MIN, "purity {purity}");
    let again = train_lda(&c.docs, c.vocab_size, &lda_config(2)).map_err(|e| e.to_string())?;
    let bits = |m: &opinion_core::lda::LdaModel| {
        m.phi.iter().chain(&m.theta).flatten().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    ensure!(bits(&model) == bits(&again) && model.z == again.z && model.n_dk == again.n_dk, "reruns differ");
    let elapsed = start.elapsed();
    ensure!(elapsed < LDA_MAX, "took {elapsed:?}");
    Ok(format!("purity {purity:.4}, 500 sweeps conserved, reruns identical, {elapsed:.2?}"))
}

// 3 -----------------------------------------------------------------------

fn perplexity() -> Check {
    let c = two_topic_corpus(99, 100, 10, 50);
    let v = c.vocab_size;
    for k in [1, 2, 5] {
        let theta = vec![vec![1.0 / k as f64; k]; c.docs.len()];
        let phi = vec![vec![1.0 / v as f64; v]; k];
        let p = perplexity_with(&theta, &phi, &c.docs).map_err(|e| e.to_string())?;
        ensure!((p - v as f64).abs() <= PERPLEXITY_TOL, "uniform K={k} perplexity {p}");
    }
    let one = train_lda(&c.docs, v, &lda_config(1)).map_err(|e| e.to_string())?;
    let two = train_lda(&c.docs, v, &lda_config(2)).map_err(|e| e.to_string())?;
    let p1 = one.perplexity(&c.docs).map_err(|e| e.to_string())?;
    let p2 = two.perplexity(&c.docs).map_err(|e| e.to_string())?;
    ensure!(p2 < p1, "K=2 perplexity {p2} not below K=1 {p1}");
    Ok(format!("uniform = {v}; K=1 {p1:.4} > K=2 {p2:.4}"))
}

// 4 -----------------------------------------------------------------------

fn dedup_occurring(topic: &[u32], count: impl Fn(u32) -> usize) -> Vec<u32> {
    let mut out = Vec::new();
    for &w in topic {
        if count(w) > 0 && !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn oracle_npmi(joint: f64, a: f64, b: f64, eps: f64) -> f64 {
    let l = (joint + eps).ln();
    if -l <= 0.0 {
        1.0
    } else {
        ((joint + eps) / (a * b)).ln() / -l
    }
}

/// C_v by explicit enumeration of every sliding window as a word set.
fn oracle_cv(topic: &[u32], docs: &[Vec<u32>], window: usize, eps: f64) -> Option<f64> {
    let mut windows: Vec<HashSet<u32>> = Vec::new();
    for doc in docs.iter().filter(|d| !d.is_empty()) {
        if doc.len() <= window {
            windows.push(doc.iter().copied().collect());
        } else {
            for s in 0..=doc.len() - window {
                windows.push(doc[s..s + window].iter().copied().collect());
            }
        }
    }
    if windows.is_empty() {
        return None;
    }
    let n = windows.len() as f64;
    let with = |ws: &[u32]| windows.iter().filter(|w| ws.iter().all(|x| w.contains(x))).count() as f64;
    let words = dedup_occurring(topic, |w| with(&[w]) as usize);
    if words.len() < 2 {
        return None;
    }
    let vectors: Vec<Vec<f64>> = words
        .iter()
        .map(|&a| {
            words
                .iter()
                .map(|&b| oracle_npmi(with(&[a, b]) / n, with(&[a]) / n, with(&[b]) / n, eps))
                .collect()
        })
        .collect();
    let total: Vec<f64> = (0..words.len()).map(|j| vectors.iter().map(|v| v[j]).sum()).collect();
    let cos = |v: &[f64]| {
        let dot: f64 = v.iter().zip(&total).map(|(x, y)| x * y).sum();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nt = total.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv == 0.0 || nt == 0.0 {
            0.0
        } else {
            (dot / (nv * nt)).clamp(-1.0, 1.0)
        }
    };
    Some(vectors.iter().map(|v| cos(v)).sum::<f64>() / words.len() as f64)
}

fn oracle_umass(topic: &[u32], docs: &[Vec<u32>]) -> Option<f64> {
    let sets: Vec<HashSet<u32>> = docs.iter().map(|d| d.iter().copied().collect()).collect();
    let d = |ws: &[u32]| sets.iter().filter(|s| ws.iter().all(|x| s.contains(x))).count() as f64;
    let words = dedup_occurring(topic, |w| d(&[w]) as usize);
    if words.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for i in 1..words.len() {
        for j in 0..i {
            sum += ((d(&[words[i], words[j]]) + 1.0) / d(&[words[j]])).ln();
            pairs += 1.0;
        }
    }
    Some(sum / pairs)
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

fn coherence() -> Check {
    let corpus = (
        proptest::collection::vec(proptest::collection::vec(0u32..15, 0..160), 1..=50),
        proptest::collection::vec(proptest::collection::vec(0u32..18, 1..8), 1..5),
        prop_oneof![Just(110usize), 2usize..20],
    );
    fuzz(120, corpus, |(docs, topics, window)| {
        let cfg = CoherenceConfig {
            window,
            ..CoherenceConfig::default()
        };
        let cv = coherence_cv(&topics, &docs, &cfg);
        let um = coherence_umass(&topics, &docs);
        for (t, topic) in topics.iter().enumerate() {
            let want = oracle_cv(topic, &docs, window, cfg.epsilon);
            ensure!(close(cv.per_topic[t], want, COHERENCE_TOL), "C_v topic {t}: {:?} vs {want:?}", cv.per_topic[t]);
            let want = oracle_umass(topic, &docs);
            ensure!(close(um.per_topic[t], want, COHERENCE_TOL), "UMass topic {t}: {:?} vs {want:?}", um.per_topic[t]);
        }
        Ok(())
    })?;

    // words 0, 1, 2 always appear together; 3..6 fill the rest
    let mut docs: Vec<Vec<u32>> = (0..12).map(|i| vec![0, 1, 2, 3 + i % 4, 0]).collect();
    docs.extend((0..8).map(|i| vec![3 + i % 4, 4, 5]));
    let together = coherence_cv(&[vec![0, 1, 2]], &docs, &CoherenceConfig::default());
    let v = together.per_topic[0].ok_or("always-co-occurring topic has no C_v")?;
    ensure!((v - 1.0).abs() <= COHERENCE_TOL, "always-co-occurring C_v {v}");

    // ten documents hold w0 and w1; five more hold only w2
    let mut docs: Vec<Vec<u32>> = vec![vec![0, 1]; 10];
    docs.extend(vec![vec![2]; 5]);
    let both = coherence_umass(&[vec![0, 1]], &docs).per_topic[0].ok_or("no UMass for {w0,w1}")?;
    ensure!((both - (11.0f64 / 10.0).ln()).abs() <= UMASS_HAND_TOL, "UMass log 11/10 case: {both}");
    let never = coherence_umass(&[vec![0, 2]], &docs).per_topic[0].ok_or("no UMass for {w0,w2}")?;
    ensure!((never - (1.0f64 / 10.0).ln()).abs() <= UMASS_HAND_TOL, "UMass log 1/10 case: {never}");
    Ok(format!("120 fuzzed corpora match oracles; C_v together = {v:.12}"))
}

// 5 -----------------------------------------------------------------------

fn sweep() -> Check {
    let c = two_topic_corpus(5, 60, 10, 40);
    let base = LdaConfig {
        seed: 42,
        ..LdaConfig::new(2)
    };
    let configs = sweep_configs(2..=20, &base);
    let records = sweep_topics(&c.docs, c.vocab_size, &c.sequences, &configs, &CoherenceConfig::default())
        .map_err(|e| e.to_string())?;
    ensure!(records.len() == 19, "{} records", records.len());
    for (r, k) in records.iter().zip(2..=20usize) {
        ensure!(r.num_topics == k, "record order: K {} at position {k}", r.num_topics);
        ensure!(r.seed == 42 + k as u64, "K={k} seed {}", r.seed);
        let s = r.outcome.as_ref().map_err(|e| format!("K={k} failed: {e}"))?;
        ensure!(s.coherence_cv.is_some_and(f64::is_finite), "K={k} C_v missing");
        ensure!(s.coherence_umass.is_some_and(f64::is_finite), "K={k} UMass missing");
        ensure!(s.perplexity.is_finite() && s.perplexity > 0.0, "K={k} perplexity {}", s.perplexity);
    }
    Ok("19 records, K = 2..20, all scores populated".into())
}

// 6 -----------------------------------------------------------------------

fn weighted_metrics() -> Check {
    let mut gold = Vec::new();
    for i in 0..100 {
        let label = match i {
            0..=69 => SentimentLabel::Negative,
            70..=84 => SentimentLabel::Positive,
            _ => SentimentLabel::Neutral,
        };
        gold.push((format!("g{i}"), label));
    }
    let preds: Vec<_> = gold.iter().map(|(id, _)| (id.clone(), SentimentLabel::Negative)).collect();
    let e = evaluate(&preds, &gold).map_err(|e| e.to_string())?;
    // hand oracle: only the negative class has nonzero precision and recall
    let f1_neg = 2.0 * 0.7 * 1.0 / 1.7;
    let want = [(e.accuracy, 0.70), (e.precision, 0.49), (e.recall, 0.70), (e.f1, 0.7 * f1_neg)];
    for (name, (got, w)) in ["accuracy", "precision", "recall", "f1"].iter().zip(want) {
        ensure!((got - w).abs() <= METRIC_TOL, "{name} {got} vs {w}");
    }
    ensure!((e.f1 - 0.5765).abs() <= METRIC_TOL, "f1 {} vs 0.5765", e.f1);

    let matrix = proptest::array::uniform3(proptest::array::uniform3(0u64..60));
    fuzz(FUZZ_MATRICES, matrix, |counts| {
        let m = ConfusionMatrix { counts };
        let e = m.evaluation();
        ensure!((e.recall - e.accuracy).abs() <= 1e-12, "recall {} vs accuracy {}", e.recall, e.accuracy);
        Ok(())
    })?;
    Ok(format!(
        "acc {:.4} / prec {:.4} / rec {:.4} / f1 {:.4}; {FUZZ_MATRICES} fuzzed matrices",
        e.accuracy, e.precision, e.recall, e.f1
    ))
}

// 7 -----------------------------------------------------------------------

fn llm_client() -> Check {
    let text_hash = hex::encode(Sha256::digest(ZERO_SHOT_TEXT.as_bytes()));
    ensure!(text_hash == ZERO_SHOT_SHA256, "stored template hash {ZERO_SHOT_SHA256} vs {text_hash}");
    let stub = StubServer::chat(|req| {
        let user = &req.messages.last()?.content;
        Some(synth::keyword_label(user).japanese().to_owned())
    })
    .map_err(|e| e.to_string())?;
    let cache = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = LlmBackendConfig::new(stub.url(), "stub-model", PromptMode::ZeroShot);
    cfg.seed = 20240501;
    cfg.cache_dir = Some(cache.path().to_owned());
    let comments: Vec<(String, String)> = ["処理水の放出に賛成です", "危険だし不安", "ニュースを見た"]
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("c{i}"), t.to_string()))
        .collect();
    let cold = llm_classify(&comments, &cfg).map_err(|e| e.to_string())?;
    let labels: Vec<_> = cold.labels.iter().map(|l| l.label).collect();
    ensure!(
        labels == [SentimentLabel::Positive, SentimentLabel::Negative, SentimentLabel::Neutral],
        "labels {labels:?}"
    );
    let requests = stub.requests();
    ensure!(requests.len() == 3, "{} cold requests", requests.len());
    for r in &requests {
        let body: serde_json::Value = serde_json::from_str(&r.body).map_err(|e| e.to_string())?;
        ensure!(body["temperature"].as_f64() == Some(0.0), "temperature {}", body["temperature"]);
        ensure!(body["seed"].as_i64() == Some(20240501), "seed {}", body["seed"]);
        let system = body["messages"][0]["content"].as_str().unwrap_or("");
        ensure!(hex::encode(Sha256::digest(system.as_bytes())) == text_hash, "system prompt hash differs");
    }
    let warm = llm_classify(&comments, &cfg).map_err(|e| e.to_string())?;
    ensure!(stub.hits() == 3 && warm.requests == 0, "warm run sent {} requests", warm.requests);

    let strict = AliasTable::empty();
    for (text, want) in [
        ("ポジティブ", SentimentLabel::Positive),
        ("中立・判断不可能", SentimentLabel::Neutral),
        ("ネガティブ", SentimentLabel::Negative),
        (" ネガティブ。\n", SentimentLabel::Negative),
    ] {
        let got = parse_llm_response(text, &strict).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(got == want, "{text:?} parsed as {got:?}");
    }
    for bad in ["とても良い", "ポジティブかネガティブ", "", "positive", "5"] {
        ensure!(parse_llm_response(bad, &strict).is_err(), "{bad:?} accepted");
    }
    for bad in ["mixed", "ポジティブ寄り"] {
        ensure!(parse_llm_response(bad, &AliasTable::default()).is_err(), "{bad:?} accepted with aliases");
    }
    Ok("template hash, temperature 0, seed, warm cache 0 requests, strict parsing".into())
}

// 8 -----------------------------------------------------------------------

fn record(i: usize, ts: chrono::DateTime<Utc>, label: SentimentLabel, topic: Option<usize>) -> SentimentRecord {
    SentimentRecord {
        comment_id: format!("c{i}"),
        video_id: format!("v{}", i % 7),
        published_at: ts,
        label,
        main_topic: topic,
    }
}

fn aggregation() -> Check {
    let fx = synth::fixture(42, 6, 8);
    let positive: HashSet<&str> = fx
        .gold
        .iter()
        .filter(|(_, l)| *l == SentimentLabel::Positive)
        .map(|(id, _)| id.as_str())
        .collect();
    let records: Vec<SentimentRecord> = fx
        .comments
        .iter()
        .filter(|c| positive.contains(c.comment_id.as_str()))
        .map(|c| SentimentRecord {
            comment_id: c.comment_id.clone(),
            video_id: c.video_id.clone(),
            published_at: c.published_at,
            label: SentimentLabel::Positive,
            main_topic: fx.video_topics.get(&c.video_id).copied(),
        })
        .collect();
    ensure!(!records.is_empty(), "fixture has no positive comments");
    let opts = AggregateOptions {
        date_floor: None,
        ..AggregateOptions::default()
    };
    let series = monthly_scores(&records, &opts);
    let filled: Vec<_> = series.entries.iter().filter(|e| e.counts.total() > 0).collect();
    ensure!(!filled.is_empty(), "no populated month");
    for e in &filled {
        ensure!(e.score == Some(Ratio::from_integer(1)), "{} scores {:?}", e.month, e.score);
    }

    let labels = prop_oneof![
        Just(SentimentLabel::Positive),
        Just(SentimentLabel::Neutral),
        Just(SentimentLabel::Negative)
    ];
    let input = proptest::collection::vec((0i64..400_000_000, labels, proptest::option::of(0usize..4), -12i32..=14), 0..300);
    fuzz(200, input, |rows| {
        let offset_h = rows.first().map(|r| r.3).unwrap_or(0);
        let records: Vec<SentimentRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(secs, label, topic, _))| {
                record(i, Utc.timestamp_opt(1_500_000_000 + secs, 0).unwrap(), label, topic)
            })
            .collect();
        let opts = AggregateOptions {
            date_floor: None,
            offset: FixedOffset::east_opt(offset_h * 3600).unwrap(),
            only_topic_assigned: false,
        };
        let series = monthly_scores(&records, &opts);
        let mut seen = 0;
        for e in &series.entries {
            let c = e.counts;
            seen += c.total();
            match e.score {
                Some(s) => ensure!(
                    s * Ratio::from_integer(c.total() as i64) == Ratio::from_integer(c.n_pos as i64 - c.n_neg as i64),
                    "{}: score·count ≠ n_pos − n_neg",
                    e.month
                ),
                None => ensure!(c.total() == 0, "{} has counts but no score", e.month),
            }
        }
        ensure!(seen as usize == records.len(), "months hold {seen} of {} comments", records.len());
        let table = topic_sentiment(&records, &[0, 1, 2, 3]);
        let mut n = table.unassigned.total();
        for row in &table.rows {
            n += row.counts.total();
            if let Some(s) = row.shares {
                let sum: f64 = s.iter().sum();
                ensure!((sum - 1.0).abs() <= SHARE_TOL, "topic {} shares sum {sum}", row.topic);
            } else {
                ensure!(row.counts.total() == 0, "topic {} has counts but no shares", row.topic);
            }
        }
        ensure!(n as usize == records.len(), "topic table holds {n} of {}", records.len());
        Ok(())
    })?;
    Ok(format!("{} all-positive months score exactly 1; 200 fuzzed inputs", filled.len()))
}

// 9 -----------------------------------------------------------------------

fn brute_force_edges(sentences: &[Vec<String>]) -> BTreeMap<(String, String), u64> {
    let terms: BTreeSet<&String> = sentences.iter().flatten().collect();
    let terms: Vec<&String> = terms.into_iter().collect();
    let mut out = BTreeMap::new();
    for (i, a) in terms.iter().enumerate() {
        for b in &terms[i + 1..] {
            let n = sentences.iter().filter(|s| s.contains(a) && s.contains(b)).count() as u64;
            if n > 0 {
                out.insert(((*a).clone(), (*b).clone()), n);
            }
        }
    }
    out
}

fn check_graph(g: &CooccurrenceGraph, sentences: &[Vec<String>]) -> Result<(), String> {
    ensure!(g.edges == brute_force_edges(sentences), "edge counts differ from pair enumeration");
    for (t, f) in &g.nodes {
        let n = sentences.iter().filter(|s| s.contains(t)).count() as u64;
        ensure!(*f == n, "node {t}: {f} vs {n}");
    }
    let terms: Vec<&String> = g.nodes.keys().collect();
    for a in &terms {
        for b in &terms {
            ensure!(g.weight(a, b) == g.weight(b, a), "weight({a},{b}) asymmetric");
        }
    }
    let mut prev: Option<CooccurrenceGraph> = None;
    for k in 1..=5u64 {
        let t = g.threshold(k).map_err(|e| e.to_string())?;
        ensure!(t.nodes.values().all(|&f| f >= k), "node below {k} kept");
        ensure!(
            g.nodes.iter().filter(|(_, &f)| f >= k).count() == t.nodes.len(),
            "threshold {k} dropped a qualifying node"
        );
        for ((a, b), w) in &t.edges {
            ensure!(t.nodes.contains_key(a) && t.nodes.contains_key(b), "dangling edge at {k}");
            ensure!(g.weight(a, b) == *w, "weight changed at {k}");
        }
        let expected_edges = g
            .edges
            .keys()
            .filter(|(a, b)| t.nodes.contains_key(a) && t.nodes.contains_key(b))
            .count();
        ensure!(t.edges.len() == expected_edges, "threshold {k} dropped an edge between kept nodes");
        if let Some(p) = &prev {
            ensure!(t.nodes.keys().all(|n| p.nodes.contains_key(n)), "nodes grew from {} to {k}", k - 1);
            ensure!(t.edges.keys().all(|e| p.edges.contains_key(e)), "edges grew from {} to {k}", k - 1);
        }
        validate_graphml(&to_graphml(&t))?;
        prev = Some(t);
    }
    Ok(())
}

/// Structural GraphML validation: the constraints of the published schema
/// that matter for this output, checked on the parsed document.
fn validate_graphml(xml: &str) -> Result<(), String> {
    const NS: &str = "http://graphml.graphdrawing.org/xmlns";
    let doc = roxmltree::Document::parse(xml).map_err(|e| format!("XML: {e}"))?;
    let root = doc.root_element();
    ensure!(root.tag_name().name() == "graphml" && root.tag_name().namespace() == Some(NS), "root is not graphml");
    let children: Vec<_> = root.children().filter(|n| n.is_element()).collect();
    for c in &children {
        ensure!(c.tag_name().namespace() == Some(NS), "foreign element {:?}", c.tag_name());
        ensure!(matches!(c.tag_name().name(), "key" | "graph" | "desc" | "data"), "unexpected {}", c.tag_name().name());
    }
    let first_graph = children.iter().position(|c| c.has_tag_name((NS, "graph"))).ok_or("no graph element")?;
    ensure!(children[first_graph..].iter().all(|c| !c.has_tag_name((NS, "key"))), "key after graph");
    let mut keys: HashMap<&str, (&str, &str)> = HashMap::new();
    for k in children.iter().filter(|c| c.has_tag_name((NS, "key"))) {
        let id = k.attribute("id").ok_or("key without id")?;
        let domain = k.attribute("for").unwrap_or("all");
        ensure!(matches!(domain, "all" | "graph" | "node" | "edge" | "hyperedge" | "port" | "endpoint" | "graphml"), "key {id} for={domain}");
        let ty = k.attribute("attr.type").unwrap_or("string");
        ensure!(matches!(ty, "boolean" | "int" | "long" | "float" | "double" | "string"), "key {id} attr.type={ty}");
        ensure!(keys.insert(id, (domain, ty)).is_none(), "duplicate key id {id}");
    }
    let mut ids = HashSet::new();
    for g in children.iter().filter(|c| c.has_tag_name((NS, "graph"))) {
        let default = g.attribute("edgedefault").ok_or("graph without edgedefault")?;
        ensure!(default == "directed" || default == "undirected", "edgedefault={default}");
        let mut nodes = HashSet::new();
        for n in g.children().filter(|n| n.has_tag_name((NS, "node"))) {
            let id = n.attribute("id").ok_or("node without id")?;
            ensure!(nodes.insert(id) && ids.insert(id), "duplicate id {id}");
        }
        for e in g.children().filter(|n| n.has_tag_name((NS, "edge"))) {
            for end in ["source", "target"] {
                let v = e.attribute(end).ok_or("edge endpoint missing")?;
                ensure!(nodes.contains(v), "edge {end} {v} is not a node");
            }
            if let Some(id) = e.attribute("id") {
                ensure!(ids.insert(id), "duplicate id {id}");
            }
        }
        for d in g.descendants().filter(|n| n.has_tag_name((NS, "data"))) {
            let key = d.attribute("key").ok_or("data without key")?;
            let &(domain, ty) = keys.get(key).ok_or(format!("data refers to undeclared key {key}"))?;
            let owner = d.parent_element().ok_or("orphan data")?.tag_name().name();
            ensure!(domain == "all" || domain == owner, "key {key} is for {domain}, used on {owner}");
            let v = d.text().unwrap_or("");
            let ok = match ty {
                "int" => v.trim().parse::<i32>().is_ok(),
                "long" => v.trim().parse::<i64>().is_ok(),
                "float" | "double" => v.trim().parse::<f64>().is_ok(),
                "boolean" => matches!(v.trim(), "true" | "false"),
                _ => true,
            };
            ensure!(ok, "data {key} value {v:?} is not {ty}");
        }
    }
    Ok(())
}

fn cooccurrence() -> Check {
    let terms = prop_oneof![
        Just("処理水"), Just("原発"), Just("海"), Just("漁業"), Just("a&b"), Just("<tag>"), Just("\"q\""), Just("風評")
    ];
    let sentences = proptest::collection::vec(proptest::collection::vec(terms, 0..6), 0..=200);
    fuzz(60, sentences, |raw| {
        let sentences: Vec<Vec<String>> = raw.iter().map(|s| s.iter().map(|t| t.to_string()).collect()).collect();
        check_graph(&CooccurrenceGraph::from_sentences(&sentences), &sentences)
    })?;

    // the fixture's negative comments through the tokenizer
    let fx = synth::fixture(42, 4, 6);
    let negative: HashSet<&str> =
        fx.gold.iter().filter(|(_, l)| *l == SentimentLabel::Negative).map(|(id, _)| id.as_str()).collect();
    let texts: Vec<&str> = fx
        .comments
        .iter()
        .filter(|c| negative.contains(c.comment_id.as_str()))
        .map(|c| c.text.as_str())
        .collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = synth::write_fixture(dir.path(), &fx).map_err(|e| e.to_string())?;
    let tokenizer = BaselineTokenizer::new(UserDictionary::load(&paths.user_dict).map_err(|e| e.to_string())?);
    let mut sentences = Vec::new();
    for t in &texts {
        for s in split_sentences(t) {
            let tokens = tokenizer.tokenize(s).map_err(|e| e.to_string())?;
            sentences.push(
                tokens
                    .into_iter()
                    .filter(|t| t.pos == Pos::Noun && !t.normalized.is_empty())
                    .map(|t| t.normalized)
                    .collect::<Vec<_>>(),
            );
        }
    }
    ensure!(sentences.len() <= 200 && !sentences.is_empty(), "{} fixture sentences", sentences.len());
    let g = build_graph(&texts, &tokenizer, &GraphOptions::new(1)).map_err(|e| e.to_string())?;
    check_graph(&g, &sentences)?;
    ensure!(!g.edges.is_empty(), "fixture graph has no edges");
    Ok(format!(
        "60 fuzzed sentence sets + fixture ({} sentences, {} edges); GraphML valid",
        sentences.len(),
        g.edges.len()
    ))
}

// 10 ----------------------------------------------------------------------

const ARTIFACTS: &[(&str, &str)] = &[
    ("ingest/videos.jsonl", ""),
    ("ingest/comments.jsonl", ""),
    ("filter/videos.jsonl", ""),
    ("filter/comments.jsonl", ""),
    ("bow/bow.jsonl", ""),
    ("bow/freq.csv", "term,corpus_freq"),
    ("lda-sweep/sweep.csv", "K,coherence_cv,coherence_umass,perplexity,wallclock_s"),
    ("lda-train/model.json", ""),
    ("lda-train/doc_topics.csv", "doc_id,main_topic"),
    ("lda-train/coherence.csv", "topic_id,measure,score"),
    ("sentiment-lexicon/labels.jsonl", ""),
    ("sentiment-llm/labels.jsonl", ""),
    ("benchmark/benchmark.csv", "method,accuracy,precision,recall,f1"),
    ("aggregate/monthly_scores.csv", "month,n_pos,n_neu,n_neg,score"),
    ("aggregate/topic_sentiment.csv", "topic,share_pos,share_neu,share_neg,n"),
    ("aggregate/topic_monthly.csv", "topic,month,n_videos"),
    ("cooccur/graph.graphml", ""),
    ("cooccur/graph.dot", ""),
    ("cooccur/graph.json", ""),
    ("report/report.md", ""),
];

fn run_opinion(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_opinion"))
        .current_dir(dir)
        .args(args)
        .env_remove("OPINION_API_KEY")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "opinion {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if let Ok(bytes) = std::fs::read(&p) {
                out.insert(p.strip_prefix(root).unwrap().to_owned(), bytes);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Drops run-dependent fields: manifest timestamps and the sweep timings
/// (plus the sweep.csv hash that records those timings).
fn normalize(path: &Path, bytes: &[u8]) -> Vec<u8> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name == "manifest.json" {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap_or_default();
        if let Some(m) = v.as_object_mut() {
            m.remove("created_at");
            if m.get("stage").and_then(|s| s.as_str()) == Some("lda-sweep") {
                for o in m.get_mut("outputs").and_then(|o| o.as_array_mut()).into_iter().flatten() {
                    if o["path"] == "sweep.csv" {
                        o["sha256"] = serde_json::Value::Null;
                    }
                }
            }
        }
        return serde_json::to_vec(&v).unwrap();
    }
    if name == "sweep.csv" {
        let text = String::from_utf8_lossy(bytes);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let col = header.iter().position(|h| *h == "wallclock_s");
        let mut out = header.join(",");
        for l in lines {
            let cells: Vec<&str> = l.split(',').enumerate().filter(|(i, _)| Some(*i) != col).map(|(_, c)| c).collect();
            out.push('\n');
            out.push_str(&cells.join(","));
        }
        return out.into_bytes();
    }
    bytes.to_vec()
}

fn end_to_end() -> Check {
    let stub = StubServer::chat(|req| {
        let user = &req.messages.last()?.content;
        Some(synth::keyword_label(user).japanese().to_owned())
    })
    .map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    run_opinion(dir, &["synth", "--dir", ".", "--llm-endpoint", &stub.url()])?;

    let start = Instant::now();
    run_opinion(dir, &["pipeline"])?;
    let elapsed = start.elapsed();
    ensure!(elapsed < PIPELINE_MAX, "pipeline took {elapsed:?}");
    let out = dir.join("out");
    for (artifact, header) in ARTIFACTS {
        let p = out.join(artifact);
        let text = std::fs::read_to_string(&p).map_err(|_| format!("missing {artifact}"))?;
        ensure!(!text.trim().is_empty(), "{artifact} is empty");
        ensure!(text.lines().next().unwrap_or("").starts_with(header), "{artifact} header: {:?}", text.lines().next());
    }
    validate_graphml(&std::fs::read_to_string(out.join("cooccur/graph.graphml")).unwrap())?;
    let stages = [
        "ingest", "filter", "bow", "lda-sweep", "lda-train", "sentiment-lexicon", "sentiment-llm", "benchmark",
        "aggregate", "cooccur", "report",
    ];
    for s in stages {
        ensure!(out.join(s).join("manifest.json").is_file(), "{s} has no manifest");
    }
    run_opinion(dir, &["verify"])?;
    let llm_requests = stub.hits();
    ensure!(llm_requests > 0, "pipeline never reached the chat stub");

    let first = files_under(&out);
    std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    run_opinion(dir, &["pipeline"])?;
    let second = files_under(&out);
    ensure!(
        first.keys().collect::<Vec<_>>() == second.keys().collect::<Vec<_>>(),
        "reruns wrote different file sets"
    );
    for (path, bytes) in &first {
        ensure!(normalize(path, bytes) == normalize(path, &second[path]), "{} differs between runs", path.display());
    }
    Ok(format!(
        "{} artifacts, {} files identical across reruns, first run {elapsed:.1?}",
        ARTIFACTS.len(),
        first.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Criterion); 10] = [
        ("lexicon scorer identity and thresholds", scorer),
        ("LDA recovers planted topics", lda_recovery),
        ("perplexity reference values", perplexity),
        ("coherence against brute-force oracles", coherence),
        ("topic-count sweep 2..20", sweep),
        ("weighted metrics", weighted_metrics),
        ("LLM client against the stub server", llm_client),
        ("monthly and per-topic aggregation", aggregation),
        ("co-occurrence network", cooccurrence),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = Vec::new();
    let mut stdout = std::io::stdout();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(detail) => format!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed.push(i + 1);
                format!("criterion {:>2} FAIL  {name}: {why}", i + 1)
            }
        };
        // bypasses the harness's capture of println!
        let _ = writeln!(stdout, "{line}");
    }
    let _ = stdout.flush();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
