//! Monthly sentiment scores, per-topic sentiment shares and per-topic video
//! counts over time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Comment;
use crate::error::{Error, Result};
use crate::sentiment::{LabeledComment, SentimentLabel};
use crate::time::YearMonth;

/// A labeled comment joined with its timestamp and its video's main topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentRecord {
    pub comment_id: String,
    pub video_id: String,
    pub published_at: DateTime<Utc>,
    pub label: SentimentLabel,
    pub main_topic: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinDiagnostics {
    /// Labels whose comment is not in the comment table.
    pub unknown_comments: Vec<String>,
}

/// Joins labels to comments via `comment_id` and comments to main topics via
/// `video_id`. Videos absent from `video_topics` count as having no main topic.
pub fn join_records(
    labels: &[LabeledComment],
    comments: &[Comment],
    video_topics: &HashMap<String, Option<usize>>,
) -> (Vec<SentimentRecord>, JoinDiagnostics) {
    let by_id: HashMap<&str, &Comment> = comments.iter().map(|c| (c.comment_id.as_str(), c)).collect();
    let mut diag = JoinDiagnostics::default();
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        match by_id.get(l.comment_id.as_str()) {
            Some(c) => out.push(SentimentRecord {
                comment_id: c.comment_id.clone(),
                video_id: c.video_id.clone(),
                published_at: c.published_at,
                label: l.label,
                main_topic: video_topics.get(&c.video_id).copied().flatten(),
            }),
            None => diag.unknown_comments.push(l.comment_id.clone()),
        }
    }
    if !diag.unknown_comments.is_empty() {
        log::warn!("{} labels reference unknown comments", diag.unknown_comments.len());
    }
    (out, diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub n_pos: u64,
    pub n_neu: u64,
    pub n_neg: u64,
}

impl LabelCounts {
    pub fn add(&mut self, label: SentimentLabel) {
        match label {
            SentimentLabel::Positive => self.n_pos += 1,
            SentimentLabel::Neutral => self.n_neu += 1,
            SentimentLabel::Negative => self.n_neg += 1,
        }
    }

    fn merge(mut self, other: LabelCounts) -> Self {
        self.n_pos += other.n_pos;
        self.n_neu += other.n_neu;
        self.n_neg += other.n_neg;
        self
    }

    pub fn total(&self) -> u64 {
        self.n_pos + self.n_neu + self.n_neg
    }

    /// `(n_pos − n_neg) / total`, exact; `None` for an empty bucket.
    pub fn score(&self) -> Option<Ratio<i64>> {
        let total = self.total() as i64;
        (total > 0).then(|| Ratio::new(self.n_pos as i64 - self.n_neg as i64, total))
    }

    /// Shares of positive, neutral and negative comments.
    pub fn shares(&self) -> Option<[f64; 3]> {
        let t = self.total() as f64;
        (self.total() > 0).then(|| {
            [
                self.n_pos as f64 / t,
                self.n_neu as f64 / t,
                self.n_neg as f64 / t,
            ]
        })
    }
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Comments dated before this day are dropped.
    pub date_floor: Option<NaiveDate>,
    /// Offset used for month bucketing; UTC by default.
    #[serde(with = "offset_seconds")]
    pub offset: FixedOffset,
    /// Only count comments whose video has a main topic.
    pub only_topic_assigned: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            date_floor: NaiveDate::from_ymd_opt(2019, 10, 1),
            offset: FixedOffset::east_opt(0).unwrap(),
            only_topic_assigned: false,
        }
    }
}

mod offset_seconds {
    use chrono::FixedOffset;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &FixedOffset, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i32(o.local_minus_utc())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FixedOffset, D::Error> {
        let secs = i32::deserialize(d)?;
        FixedOffset::east_opt(secs).ok_or_else(|| serde::de::Error::custom("offset out of range"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonthlyEntry {
    pub month: YearMonth,
    pub counts: LabelCounts,
    pub score: Option<Ratio<i64>>,
}

/// Consecutive months from the first to the last populated one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MonthlySeries {
    pub entries: Vec<MonthlyEntry>,
    pub before_floor: usize,
    pub unassigned_skipped: usize,
}

impl MonthlySeries {
    pub fn get(&self, month: YearMonth) -> Option<&MonthlyEntry> {
        self.entries.iter().find(|e| e.month == month)
    }
}

fn fold_counts<K: Ord + Send, I>(items: I) -> BTreeMap<K, LabelCounts>
where
    I: ParallelIterator<Item = (K, SentimentLabel)>,
{
    items
        .fold(BTreeMap::new, |mut acc, (k, label)| {
            acc.entry(k).or_insert_with(LabelCounts::default).add(label);
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, c) in b {
                let slot = a.entry(k).or_default();
                *slot = slot.merge(c);
            }
            a
        })
}

pub fn monthly_scores(records: &[SentimentRecord], opts: &AggregateOptions) -> MonthlySeries {
    let kept = |r: &&SentimentRecord| -> bool {
        let floor_ok = opts
            .date_floor
            .is_none_or(|f| r.published_at.with_timezone(&opts.offset).date_naive() >= f);
        floor_ok && (!opts.only_topic_assigned || r.main_topic.is_some())
    };
    let before_floor = records
        .iter()
        .filter(|r| {
            opts.date_floor
                .is_some_and(|f| r.published_at.with_timezone(&opts.offset).date_naive() < f)
        })
        .count();
    let unassigned_skipped = if opts.only_topic_assigned {
        records.iter().filter(|r| r.main_topic.is_none()).count()
    } else {
        0
    };
    let buckets = fold_counts(
        records
            .par_iter()
            .filter(kept)
            .map(|r| (YearMonth::of(&r.published_at, &opts.offset), r.label)),
    );
    let entries = match (buckets.keys().next(), buckets.keys().next_back()) {
        (Some(&first), Some(&last)) => first
            .range_to(last)
            .map(|month| {
                let counts = buckets.get(&month).copied().unwrap_or_default();
                MonthlyEntry {
                    month,
                    counts,
                    score: counts.score(),
                }
            })
            .collect(),
        _ => Vec::new(),
    };
    MonthlySeries {
        entries,
        before_floor,
        unassigned_skipped,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSentimentRow {
    pub topic: usize,
    pub counts: LabelCounts,
    pub shares: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicSentimentTable {
    pub rows: Vec<TopicSentimentRow>,
    pub unassigned: LabelCounts,
}

/// Per-topic sentiment shares. Every topic in `known_topics` gets a row,
/// with null shares if no comment falls in it.
pub fn topic_sentiment(records: &[SentimentRecord], known_topics: &[usize]) -> TopicSentimentTable {
    let by_topic = fold_counts(records.par_iter().map(|r| (r.main_topic, r.label)));
    let topics: BTreeSet<usize> = known_topics
        .iter()
        .copied()
        .chain(by_topic.keys().flatten().copied())
        .collect();
    let rows = topics
        .into_iter()
        .map(|topic| {
            let counts = by_topic.get(&Some(topic)).copied().unwrap_or_default();
            TopicSentimentRow {
                topic,
                counts,
                shares: counts.shares(),
            }
        })
        .collect();
    TopicSentimentTable {
        rows,
        unassigned: by_topic.get(&None).copied().unwrap_or_default(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoTopic {
    pub video_id: String,
    pub published_at: DateTime<Utc>,
    pub main_topic: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicTimeseries {
    pub counts: BTreeMap<(usize, YearMonth), u64>,
    pub without_topic: usize,
}

/// Videos published per topic and month; videos without a main topic are
/// only counted in `without_topic`.
pub fn topic_timeseries(videos: &[VideoTopic], offset: &FixedOffset) -> TopicTimeseries {
    let mut out = TopicTimeseries::default();
    for v in videos {
        match v.main_topic {
            Some(k) => *out.counts.entry((k, YearMonth::of(&v.published_at, offset))).or_insert(0) += 1,
            None => out.without_topic += 1,
        }
    }
    out
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

/// `month,n_pos,n_neu,n_neg,score`; the score is blank for empty months.
pub fn write_monthly_csv(path: impl AsRef<Path>, series: &MonthlySeries) -> Result<()> {
    let path = path.as_ref();
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["month", "n_pos", "n_neu", "n_neg", "score"]).map_err(&err)?;
    for e in &series.entries {
        w.write_record([
            e.month.to_string(),
            e.counts.n_pos.to_string(),
            e.counts.n_neu.to_string(),
            e.counts.n_neg.to_string(),
            e.score.map(|s| ratio_to_f64(s).to_string()).unwrap_or_default(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `topic,share_pos,share_neu,share_neg,n`, ending with an `unassigned` row.
pub fn write_topic_sentiment_csv(path: impl AsRef<Path>, table: &TopicSentimentTable) -> Result<()> {
    let path = path.as_ref();
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["topic", "share_pos", "share_neu", "share_neg", "n"]).map_err(&err)?;
    let row = |name: String, counts: &LabelCounts| {
        let shares = counts.shares();
        let cell = |i: usize| shares.map(|s| format!("{:.6}", s[i])).unwrap_or_default();
        [name, cell(0), cell(1), cell(2), counts.total().to_string()]
    };
    for r in &table.rows {
        w.write_record(row(r.topic.to_string(), &r.counts)).map_err(&err)?;
    }
    w.write_record(row("unassigned".into(), &table.unassigned)).map_err(&err)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// `topic,month,n_videos`.
pub fn write_topic_monthly_csv(path: impl AsRef<Path>, series: &TopicTimeseries) -> Result<()> {
    let path = path.as_ref();
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["topic", "month", "n_videos"]).map_err(&err)?;
    for ((k, m), n) in &series.counts {
        w.write_record([k.to_string(), m.to_string(), n.to_string()]).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;
    use proptest::prelude::*;
    use SentimentLabel::*;

    fn rec(i: usize, ts: &str, label: SentimentLabel, topic: Option<usize>) -> SentimentRecord {
        SentimentRecord {
            comment_id: format!("c{i}"),
            video_id: format!("v{}", i % 3),
            published_at: parse_timestamp(ts).unwrap(),
            label,
            main_topic: topic,
        }
    }

    fn month_of(labels: &[SentimentLabel], ts: &str) -> Vec<SentimentRecord> {
        labels.iter().enumerate().map(|(i, l)| rec(i, ts, *l, Some(0))).collect()
    }

    #[test]
    fn all_positive_month_scores_one() {
        let s = monthly_scores(&month_of(&[Positive; 5], "2023-08-10T00:00:00Z"), &AggregateOptions::default());
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].score, Some(Ratio::from_integer(1)));
        assert_eq!(ratio_to_f64(s.entries[0].score.unwrap()), 1.0);
    }

    #[test]
    fn hand_examples() {
        let mut labels = vec![Positive; 3];
        labels.extend([Negative; 3]);
        labels.extend([Neutral; 4]);
        let s = monthly_scores(&month_of(&labels, "2023-08-10T00:00:00Z"), &AggregateOptions::default());
        assert_eq!(s.entries[0].score, Some(Ratio::from_integer(0)));
        let s = monthly_scores(
            &month_of(&[Positive, Negative, Negative, Negative], "2023-08-10T00:00:00Z"),
            &AggregateOptions::default(),
        );
        assert_eq!(s.entries[0].score, Some(Ratio::new(-1, 2)));
    }

    #[test]
    fn gaps_are_null_and_floor_applies() {
        let records = vec![
            rec(0, "2019-09-30T23:00:00Z", Positive, None),
            rec(1, "2023-06-01T00:00:00Z", Negative, None),
            rec(2, "2023-08-31T23:59:59Z", Positive, None),
        ];
        let s = monthly_scores(&records, &AggregateOptions::default());
        assert_eq!(s.before_floor, 1);
        let months: Vec<String> = s.entries.iter().map(|e| e.month.to_string()).collect();
        assert_eq!(months, ["2023-06", "2023-07", "2023-08"]);
        assert_eq!(s.entries[1].score, None);
        assert_eq!(s.entries[1].counts.total(), 0);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_monthly_csv(&p, &s).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "month,n_pos,n_neu,n_neg,score\n2023-06,0,0,1,-1\n2023-07,0,0,0,\n2023-08,1,0,0,1\n"
        );
    }

    #[test]
    fn offset_moves_month_boundary() {
        let records = vec![rec(0, "2023-08-31T20:00:00Z", Positive, None)];
        let jst = AggregateOptions {
            offset: FixedOffset::east_opt(9 * 3600).unwrap(),
            ..Default::default()
        };
        assert_eq!(monthly_scores(&records, &jst).entries[0].month.to_string(), "2023-09");
        assert_eq!(
            monthly_scores(&records, &AggregateOptions::default()).entries[0].month.to_string(),
            "2023-08"
        );
    }

    #[test]
    fn topic_assigned_filter() {
        let records = vec![
            rec(0, "2023-08-01T00:00:00Z", Positive, Some(1)),
            rec(1, "2023-08-01T00:00:00Z", Negative, None),
        ];
        let opts = AggregateOptions {
            only_topic_assigned: true,
            ..Default::default()
        };
        let s = monthly_scores(&records, &opts);
        assert_eq!(s.unassigned_skipped, 1);
        assert_eq!(s.entries[0].score, Some(Ratio::from_integer(1)));
    }

    #[test]
    fn topic_shares_examples() {
        let records = vec![
            rec(0, "2023-08-01T00:00:00Z", Positive, Some(0)),
            rec(1, "2023-08-01T00:00:00Z", Positive, Some(0)),
            rec(2, "2023-08-01T00:00:00Z", Neutral, Some(0)),
            rec(3, "2023-08-01T00:00:00Z", Negative, Some(0)),
            rec(4, "2023-08-01T00:00:00Z", Negative, None),
        ];
        let t = topic_sentiment(&records, &[0, 1]);
        assert_eq!(t.rows[0].shares, Some([0.5, 0.25, 0.25]));
        assert_eq!(t.rows[1].shares, None);
        assert_eq!(t.unassigned.n_neg, 1);

        let unassigned: Vec<_> = records.iter().cloned().map(|r| SentimentRecord { main_topic: None, ..r }).collect();
        let t = topic_sentiment(&unassigned, &[]);
        assert!(t.rows.is_empty());
        assert_eq!(t.unassigned.total(), 5);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_topic_sentiment_csv(&p, &topic_sentiment(&records, &[0, 1])).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "topic,share_pos,share_neu,share_neg,n\n0,0.500000,0.250000,0.250000,4\n1,,,,0\nunassigned,0.000000,0.000000,1.000000,1\n"
        );
    }

    #[test]
    fn video_counts_per_topic_month() {
        let v = |id: &str, ts: &str, k| VideoTopic {
            video_id: id.into(),
            published_at: parse_timestamp(ts).unwrap(),
            main_topic: k,
        };
        let videos = vec![
            v("a", "2023-08-01T00:00:00Z", Some(2)),
            v("b", "2023-08-20T00:00:00Z", Some(2)),
            v("c", "2023-09-01T00:00:00Z", Some(2)),
            v("d", "2023-08-01T00:00:00Z", None),
        ];
        let ts = topic_timeseries(&videos, &FixedOffset::east_opt(0).unwrap());
        assert_eq!(ts.counts[&(2, "2023-08".parse().unwrap())], 2);
        assert_eq!(ts.counts[&(2, "2023-09".parse().unwrap())], 1);
        assert_eq!(ts.without_topic, 1);
    }

    fn arb_records() -> impl Strategy<Value = Vec<SentimentRecord>> {
        prop::collection::vec((0u8..3, 0i64..(86400 * 400), prop::option::of(0usize..4)), 0..200).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (l, secs, k))| SentimentRecord {
                    comment_id: format!("c{i}"),
                    video_id: format!("v{i}"),
                    published_at: DateTime::from_timestamp(1_577_836_800 + secs, 0).unwrap(),
                    label: SentimentLabel::ALL[l as usize],
                    main_topic: k,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn reconstruction_identity(records in arb_records()) {
            let s = monthly_scores(&records, &AggregateOptions::default());
            let total: u64 = s.entries.iter().map(|e| e.counts.total()).sum();
            prop_assert_eq!(total as usize, records.len());
            for e in &s.entries {
                match e.score {
                    Some(r) => prop_assert_eq!(
                        r * Ratio::from_integer(e.counts.total() as i64),
                        Ratio::from_integer(e.counts.n_pos as i64 - e.counts.n_neg as i64)
                    ),
                    None => prop_assert_eq!(e.counts.total(), 0),
                }
            }
        }

        #[test]
        fn shares_sum_to_one_and_counts_partition(records in arb_records()) {
            let t = topic_sentiment(&records, &[0, 1, 2, 3]);
            let mut n = t.unassigned.total();
            for r in &t.rows {
                n += r.counts.total();
                if let Some(s) = r.shares {
                    prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(s.iter().all(|x| *x >= 0.0));
                }
            }
            prop_assert_eq!(n as usize, records.len());
        }

        #[test]
        fn permutation_invariant(records in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let opts = AggregateOptions::default();
            prop_assert_eq!(monthly_scores(&records, &opts), monthly_scores(&shuffled, &opts));
            prop_assert_eq!(topic_sentiment(&records, &[]), topic_sentiment(&shuffled, &[]));
        }
    }
}
