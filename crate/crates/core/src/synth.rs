//! Seeded synthetic data: a two-topic bag-of-words corpus with known topic
//! structure, and a small Japanese video/comment fixture with known
//! sentiment words for end-to-end runs.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{write_jsonl, Comment, FilterRules, VideoDoc};
use crate::error::{Error, Result};
use crate::sentiment::SentimentLabel;
use crate::tokenize::BowDoc;

#[derive(Debug, Clone)]
pub struct TwoTopicCorpus {
    pub docs: Vec<BowDoc>,
    /// Token ids in generation order, one list per document.
    pub sequences: Vec<Vec<u32>>,
    /// Generating topic of each document.
    pub truth: Vec<usize>,
    /// Word ids owned by each topic.
    pub topic_words: [Vec<u32>; 2],
    pub vocab_size: usize,
}

/// Documents drawn from one of two topics, each uniform over its own half
/// of the vocabulary. `vocab_size` must be even.
pub fn two_topic_corpus(seed: u64, num_docs: usize, vocab_size: usize, doc_len: usize) -> TwoTopicCorpus {
    assert!(vocab_size >= 2 && vocab_size.is_multiple_of(2), "vocabulary size must be even");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (vocab_size / 2) as u32;
    let topic_words = [(0..half).collect::<Vec<_>>(), (half..2 * half).collect()];
    let mut docs = Vec::with_capacity(num_docs);
    let mut sequences = Vec::with_capacity(num_docs);
    let mut truth = Vec::with_capacity(num_docs);
    for d in 0..num_docs {
        let topic = d % 2;
        let seq: Vec<u32> = (0..doc_len)
            .map(|_| *topic_words[topic].choose(&mut rng).unwrap())
            .collect();
        let mut counts = BTreeMap::new();
        for &w in &seq {
            *counts.entry(w).or_insert(0) += 1;
        }
        docs.push(BowDoc::new(format!("d{d:03}"), counts));
        sequences.push(seq);
        truth.push(topic);
    }
    TwoTopicCorpus {
        docs,
        sequences,
        truth,
        topic_words,
        vocab_size,
    }
}

/// For each true topic, the largest share of a learned topic's probability
/// mass on that topic's words; the minimum over true topics is returned.
pub fn best_match_purity(phi: &[Vec<f64>], topic_words: &[Vec<u32>]) -> f64 {
    topic_words
        .iter()
        .map(|words| {
            phi.iter()
                .map(|row| words.iter().map(|&w| row[w as usize]).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

struct FixtureTopic {
    nouns: &'static [&'static str],
    titles: &'static [&'static str],
}

const TOPICS: [FixtureTopic; 2] = [
    FixtureTopic {
        nouns: &["処理水", "海洋放出", "漁業", "風評被害", "トリチウム", "海水", "濃度", "漁業者"],
        titles: &[
            "処理水の海洋放出と漁業への影響",
            "トリチウム濃度の測定結果について",
            "風評被害と漁業者の声",
        ],
    },
    FixtureTopic {
        nouns: &["再稼働", "原子力規制委員会", "審査", "電力会社", "電気料金", "原発", "安全対策", "地震"],
        titles: &[
            "原発再稼働の審査が進む",
            "電気料金と原発の再稼働",
            "原子力規制委員会の安全対策審査",
        ],
    },
];

const POSITIVE_WORDS: &[&str] = &["安心", "賛成", "良い", "素晴らしい", "期待"];
const NEGATIVE_WORDS: &[&str] = &["不安", "反対", "危険", "心配", "最悪"];
const CHANNELS: &[&str] = &["ニュースチャンネル", "解説チャンネル", "地域放送"];

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub videos: std::path::PathBuf,
    pub comments: std::path::PathBuf,
    pub lexicon: std::path::PathBuf,
    pub gold: std::path::PathBuf,
    pub user_dict: std::path::PathBuf,
    pub filter_rules: std::path::PathBuf,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub videos: Vec<VideoDoc>,
    pub comments: Vec<Comment>,
    /// Intended label of every comment that carries one.
    pub gold: Vec<(String, SentimentLabel)>,
    /// Generating topic per on-topic video id.
    pub video_topics: BTreeMap<String, usize>,
}

pub fn fixture_filter_rules() -> FilterRules {
    FilterRules {
        required_any: vec!["原発".into(), "処理水".into(), "原子力".into(), "トリチウム".into()],
        excluded_any: vec!["ゲーム実況".into()],
    }
}

fn join_words(rng: &mut ChaCha8Rng, nouns: &[&str], n: usize) -> String {
    let links = ["の", "と", "が", "を", "は"];
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(links.choose(rng).unwrap());
        }
        out.push_str(nouns.choose(rng).unwrap());
    }
    out
}

fn timestamp(rng: &mut ChaCha8Rng, from: DateTime<Utc>, days: i64) -> DateTime<Utc> {
    from + Duration::seconds(rng.gen_range(0..days * 86_400))
}

/// Builds the fixture deterministically from `seed`: on-topic videos split
/// between two topics, one off-topic and one excluded video, Japanese
/// comments with known sentiment words, a few English and empty comments,
/// and comments predating late 2019.
pub fn fixture(seed: u64, videos_per_topic: usize, comments_per_video: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Utc.with_ymd_and_hms(2019, 6, 1, 0, 0, 0).unwrap();
    let mut videos = Vec::new();
    let mut video_topics = BTreeMap::new();
    for (t, topic) in TOPICS.iter().enumerate() {
        for i in 0..videos_per_topic {
            let id = format!("v{t}{i:03}");
            let title = topic.titles[i % topic.titles.len()].to_owned();
            let description = format!(
                "{}について解説します。{}。https://example.com/{id} #{}",
                join_words(&mut rng, topic.nouns, 3),
                join_words(&mut rng, topic.nouns, 4),
                topic.nouns[0]
            );
            let transcript = (0..6)
                .map(|_| join_words(&mut rng, topic.nouns, 4))
                .collect::<Vec<_>>()
                .join("。");
            video_topics.insert(id.clone(), t);
            videos.push(VideoDoc {
                video_id: id,
                channel: CHANNELS.choose(&mut rng).unwrap().to_string(),
                title,
                description,
                transcript,
                published_at: timestamp(&mut rng, start, 4 * 365),
            });
        }
    }
    let off = |id: &str, title: &str| VideoDoc {
        video_id: id.into(),
        channel: "娯楽チャンネル".into(),
        title: title.into(),
        description: "今日の配信です".into(),
        transcript: String::new(),
        published_at: start,
    };
    videos.push(off("x-offtopic", "週末の料理レシピ"));
    videos.push(off("x-excluded", "原発が舞台のゲーム実況"));

    let mut comments = Vec::new();
    let mut gold = Vec::new();
    let on_topic: Vec<VideoDoc> = videos.iter().filter(|v| video_topics.contains_key(&v.video_id)).cloned().collect();
    for v in &on_topic {
        let topic = &TOPICS[video_topics[&v.video_id]];
        for j in 0..comments_per_video {
            let id = format!("{}-c{j:02}", v.video_id);
            let noun = topic.nouns.choose(&mut rng).unwrap();
            let label = SentimentLabel::ALL[rng.gen_range(0..3)];
            let text = match label {
                SentimentLabel::Positive => {
                    let w = POSITIVE_WORDS.choose(&mut rng).unwrap();
                    if rng.gen_bool(0.2) {
                        let n = NEGATIVE_WORDS.choose(&mut rng).unwrap();
                        format!("{noun}は少し{n}だけど{w}。{w}と思います")
                    } else {
                        format!("{noun}について{w}です。")
                    }
                }
                SentimentLabel::Negative => {
                    let w = NEGATIVE_WORDS.choose(&mut rng).unwrap();
                    if rng.gen_bool(0.15) {
                        let p = POSITIVE_WORDS.choose(&mut rng).unwrap();
                        format!("{noun}は{p}と言うが{w}です")
                    } else {
                        format!("{noun}が{w}だ！{}も{w}", topic.nouns.choose(&mut rng).unwrap())
                    }
                }
                SentimentLabel::Neutral => {
                    format!("{noun}と{}の話はいつですか？", topic.nouns.choose(&mut rng).unwrap())
                }
            };
            let published_at = v.published_at + Duration::seconds(rng.gen_range(0..60 * 86_400));
            comments.push(Comment {
                comment_id: id.clone(),
                video_id: v.video_id.clone(),
                text,
                published_at,
            });
            gold.push((id, label));
        }
    }
    if let Some(v) = on_topic.first() {
        let extra = [
            ("en-1", "This is a great explanation, thanks!"),
            ("en-2", "I am worried about the ocean release."),
            ("empty-1", "https://example.com/x #処理水"),
        ];
        for (id, text) in extra {
            comments.push(Comment {
                comment_id: format!("{}-{id}", v.video_id),
                video_id: v.video_id.clone(),
                text: text.into(),
                published_at: v.published_at + Duration::days(1),
            });
        }
        // a comment whose video is not in the corpus
        comments.push(Comment {
            comment_id: "orphan-1".into(),
            video_id: "x-unknown".into(),
            text: "処理水の話は安心です。".into(),
            published_at: v.published_at + Duration::days(2),
        });
    }
    Fixture {
        videos,
        comments,
        gold,
        video_topics,
    }
}

/// Answer a keyword-counting assistant would give, used by the fixture's
/// chat stub: more positive than negative words is POSITIVE and so on.
pub fn keyword_label(text: &str) -> SentimentLabel {
    let count = |words: &[&str]| words.iter().map(|w| text.matches(w).count()).sum::<usize>();
    let (p, n) = (count(POSITIVE_WORDS), count(NEGATIVE_WORDS));
    match p.cmp(&n) {
        std::cmp::Ordering::Greater => SentimentLabel::Positive,
        std::cmp::Ordering::Less => SentimentLabel::Negative,
        std::cmp::Ordering::Equal => SentimentLabel::Neutral,
    }
}

#[derive(Serialize)]
struct GoldLine<'a> {
    comment_id: &'a str,
    label: SentimentLabel,
}

/// Writes videos, comments, gold labels, the polarity lexicon, the user
/// dictionary and the filter rules into `dir`.
pub fn write_fixture(dir: &Path, fx: &Fixture) -> Result<FixturePaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = FixturePaths {
        videos: dir.join("videos.jsonl"),
        comments: dir.join("comments.jsonl"),
        lexicon: dir.join("lexicon.tsv"),
        gold: dir.join("gold.jsonl"),
        user_dict: dir.join("userdict.txt"),
        filter_rules: dir.join("filter.toml"),
    };
    write_jsonl(&paths.videos, &fx.videos)?;
    write_jsonl(&paths.comments, &fx.comments)?;
    let gold: Vec<GoldLine> = fx
        .gold
        .iter()
        .map(|(id, l)| GoldLine { comment_id: id, label: *l })
        .collect();
    write_jsonl(&paths.gold, &gold)?;

    let mut lexicon = String::from("# term\tpolarity\n");
    for w in POSITIVE_WORDS {
        lexicon.push_str(&format!("{w}\t+1\n"));
    }
    for w in NEGATIVE_WORDS {
        lexicon.push_str(&format!("{w}\t-1\n"));
    }
    std::fs::write(&paths.lexicon, lexicon).map_err(|e| Error::io(&paths.lexicon, e))?;

    let mut dict = String::from("# topic vocabulary\n");
    for t in &TOPICS {
        for n in t.nouns {
            dict.push_str(&format!("{n}\tNOUN\n"));
        }
    }
    std::fs::write(&paths.user_dict, dict).map_err(|e| Error::io(&paths.user_dict, e))?;

    let rules = toml::to_string(&fixture_filter_rules()).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(&paths.filter_rules, rules).map_err(|e| Error::io(&paths.filter_rules, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_seeded() {
        let a = two_topic_corpus(7, 10, 10, 20);
        let b = two_topic_corpus(7, 10, 10, 20);
        assert_eq!(a.sequences, b.sequences);
        assert_ne!(a.sequences, two_topic_corpus(8, 10, 10, 20).sequences);
        for (seq, t) in a.sequences.iter().zip(&a.truth) {
            assert!(seq.iter().all(|w| a.topic_words[*t].contains(w)));
        }
    }

    #[test]
    fn purity_of_true_phi_is_one() {
        let phi = vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.0, 0.0, 0.5, 0.5]];
        assert_eq!(best_match_purity(&phi, &[vec![0, 1], vec![2, 3]]), 1.0);
        let flat = vec![vec![0.25; 4]; 2];
        assert_eq!(best_match_purity(&flat, &[vec![0, 1], vec![2, 3]]), 0.5);
    }

    #[test]
    fn fixture_shape() {
        let fx = fixture(1, 5, 4);
        assert_eq!(fx.videos.len(), 12);
        assert_eq!(fx.comments.len(), 44);
        assert_eq!(fx.gold.len(), 40);
        assert_eq!(fixture(1, 5, 4).comments, fx.comments);
        for (id, label) in &fx.gold {
            let c = fx.comments.iter().find(|c| &c.comment_id == id).unwrap();
            if !c.text.contains('は') || *label == SentimentLabel::Neutral {
                assert_eq!(keyword_label(&c.text), *label, "{}", c.text);
            }
        }
    }
}
