use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDate};
use rayon::prelude::*;
use serde_json::json;

use opinion_core::aggregate::{
    join_records, monthly_scores, topic_sentiment, topic_timeseries, write_monthly_csv,
    write_topic_monthly_csv, write_topic_sentiment_csv, AggregateOptions, SentimentRecord, VideoTopic,
};
use opinion_core::coherence::{coherence_cv, coherence_umass, write_coherence_csv, CoherenceMeasure};
use opinion_core::cooccur::{build_graph, load_display_names, write_graph, GraphFormat, GraphOptions, SliceSpec};
use opinion_core::corpus::{
    clean_text, filter_language, filter_videos, load_comments, load_videos, normalize_for_match,
    orphaned_comments, write_jsonl, Comment, FetchClient, ScriptRatioClassifier, VideoDoc,
};
use opinion_core::lda::{
    best_by_coherence, sweep_configs, sweep_topics, top_indices, train_lda, write_sweep_csv, LdaModel,
};
use opinion_core::sentiment::{
    evaluate, lexicon_score, llm_classify, read_gold, read_labels, write_benchmark_csv,
    write_confusion_csv, BenchmarkRow, LabeledComment, PolarityLexicon, PromptMode, SentimentLabel,
};
use opinion_core::stub::{chat_reply, StubServer};
use opinion_core::synth;
use opinion_core::time::YearMonth;
use opinion_core::tokenize::{
    build_bow, read_bow_jsonl, read_sequences_jsonl, read_vocab_tsv, write_bow_jsonl, write_freq_csv,
    write_sequences_jsonl, write_vocab_tsv, BaselineTokenizer, BowOptions, Pos, SubprocessTokenizer,
    Tokenizer, UserDictionary,
};

use crate::args::*;
use crate::config::{LabelSource, LlmSection, PipelineConfig, TokenizerKind};
use crate::manifest::{verify, ManifestBuilder};
use crate::Failure;

pub const API_KEY_ENV: &str = "OPINION_API_KEY";

struct Filtered {
    videos: Vec<VideoDoc>,
    comments: Vec<Comment>,
    comments_path: PathBuf,
    paths: [PathBuf; 2],
}

struct DocTopics {
    main: HashMap<String, Option<usize>>,
    num_topics: usize,
    path: PathBuf,
}

/// Labels joined with comment dates and video topics.
struct Joined {
    records: Vec<SentimentRecord>,
    filtered: Filtered,
    topics: DocTopics,
    inputs: Vec<PathBuf>,
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
}

fn fatal(e: impl std::fmt::Display) -> Failure {
    Failure::Fatal(e.to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

impl Ctx {
    fn stage_dir(&self, stage: &str) -> Result<PathBuf, Failure> {
        let dir = self.out.join(stage);
        std::fs::create_dir_all(&dir).map_err(|e| fatal(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    /// Path of an upstream artifact, which must already exist.
    fn artifact(&self, stage: &str, name: &str) -> Result<PathBuf, Failure> {
        let path = self.out.join(stage).join(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Failure::Fatal(format!(
                "missing upstream artifact {}; run `opinion {stage}` first",
                path.display()
            )))
        }
    }

    fn manifest(&self, stage: &str) -> ManifestBuilder {
        ManifestBuilder::new(stage, &self.out, self.cfg.seed, self.cfg.hash())
    }

    fn tokenizer(&self, extra: &[(String, Pos)]) -> Result<Box<dyn Tokenizer>, Failure> {
        let t = &self.cfg.tokenizer;
        match t.kind {
            TokenizerKind::Baseline => {
                let mut dict = match &t.user_dict {
                    Some(p) => UserDictionary::load(p)?,
                    None => UserDictionary::new(),
                };
                for (term, pos) in extra {
                    dict.insert(term, *pos);
                }
                Ok(Box::new(BaselineTokenizer::new(dict)))
            }
            TokenizerKind::Subprocess => {
                let cmd = t
                    .command
                    .as_deref()
                    .ok_or_else(|| Failure::Config("tokenizer.command is required".into()))?;
                Ok(Box::new(SubprocessTokenizer::spawn(cmd, &t.args)?))
            }
        }
    }

    fn load_filtered(&self) -> Result<Filtered, Failure> {
        let vp = self.artifact("filter", "videos.jsonl")?;
        let cp = self.artifact("filter", "comments.jsonl")?;
        Ok(Filtered {
            videos: load_videos(&vp)?.records,
            comments: load_comments(&cp)?.records,
            comments_path: cp.clone(),
            paths: [vp, cp],
        })
    }

    fn labels(&self, source: LabelSource) -> Result<(Vec<LabeledComment>, PathBuf), Failure> {
        let p = self.artifact(source.stage(), "labels.jsonl")?;
        Ok((read_labels(&p)?, p))
    }

    fn doc_topics(&self) -> Result<DocTopics, Failure> {
        let p = self.artifact("lda-train", "doc_topics.csv")?;
        let mut r = csv::Reader::from_path(&p).map_err(|e| fatal(format!("{}: {e}", p.display())))?;
        let mut map = HashMap::new();
        for row in r.records() {
            let row = row.map_err(|e| fatal(format!("{}: {e}", p.display())))?;
            let topic = match row.get(1).unwrap_or("") {
                "" => None,
                s => Some(s.parse().map_err(|_| fatal(format!("{}: bad topic {s:?}", p.display())))?),
            };
            map.insert(row.get(0).unwrap_or("").to_owned(), topic);
        }
        let model = self.artifact("lda-train", "model.json")?;
        Ok(DocTopics {
            main: map,
            num_topics: LdaModel::load(&model)?.num_topics(),
            path: p,
        })
    }

    fn join(&self, source: LabelSource) -> Result<Joined, Failure> {
        let (labels, lp) = self.labels(source)?;
        let filtered = self.load_filtered()?;
        let topics = self.doc_topics()?;
        let (records, diag) = join_records(&labels, &filtered.comments, &topics.main);
        if !diag.unknown_comments.is_empty() {
            return Err(fatal(format!(
                "{} labels refer to comments missing from filter/comments.jsonl (e.g. {})",
                diag.unknown_comments.len(),
                diag.unknown_comments[0]
            )));
        }
        let inputs = vec![lp, filtered.paths[0].clone(), filtered.paths[1].clone(), topics.path.clone()];
        Ok(Joined {
            records,
            filtered,
            topics,
            inputs,
        })
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Synth(a) => return synth_cmd(&cli, a),
        Command::StubServer(a) => return stub_server(a),
        _ => {}
    }
    let mut cfg = load_config(&cli)?;
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    let ctx = Ctx {
        out: cfg.paths.out_dir.clone(),
        cfg,
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| Failure::Config(format!("output dir {}: {e}", ctx.out.display())))?;
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Filter(_) => filter(&ctx),
        Command::Bow(_) => bow(&ctx),
        Command::LdaSweep(_) => lda_sweep(&ctx),
        Command::LdaTrain(_) => lda_train(&ctx),
        Command::SentimentLexicon(_) => sentiment_lexicon(&ctx),
        Command::SentimentLlm(_) => sentiment_llm(&ctx),
        Command::Benchmark(_) => benchmark(&ctx),
        Command::Aggregate(_) => aggregate(&ctx),
        Command::Cooccur(a) => cooccur(&ctx, a),
        Command::Report => report(&ctx),
        Command::Pipeline(a) => pipeline(&ctx, a),
        Command::Verify => verify_cmd(&ctx),
        Command::Synth(_) | Command::StubServer(_) => unreachable!(),
    }
}

/// Flag values take precedence over the config file.
fn apply_overrides(cfg: &mut PipelineConfig, command: &Command) {
    match command {
        Command::Ingest(a) => {
            if a.endpoint.is_some() {
                cfg.ingest.endpoint = a.endpoint.clone();
            }
            if a.query.is_some() {
                cfg.ingest.query = a.query.clone();
            }
            if let Some(n) = a.max_pages {
                cfg.ingest.max_pages = n;
            }
        }
        Command::Filter(a) => {
            if let Some(r) = &a.rules {
                cfg.paths.filter_rules = Some(r.clone());
                cfg.filter = None;
            }
            if let Some(t) = a.language_threshold {
                cfg.language.threshold = t;
            }
        }
        Command::Bow(a) => {
            if a.user_dict.is_some() {
                cfg.tokenizer.user_dict = a.user_dict.clone();
            }
            if let Some(n) = a.min_corpus_count {
                cfg.tokenizer.min_corpus_count = n;
            }
        }
        Command::LdaSweep(a) => {
            if let Some(k) = a.k_min {
                cfg.lda.k_min = k;
            }
            if let Some(k) = a.k_max {
                cfg.lda.k_max = k;
            }
            if let Some(n) = a.iterations {
                cfg.lda.iterations = n;
            }
            if let Some(n) = a.burn_in {
                cfg.lda.burn_in = n;
            }
        }
        Command::LdaTrain(a) => {
            if a.k.is_some() {
                cfg.lda.num_topics = a.k;
            }
            if let Some(n) = a.iterations {
                cfg.lda.iterations = n;
            }
            if let Some(n) = a.burn_in {
                cfg.lda.burn_in = n;
            }
        }
        Command::SentimentLexicon(a) => {
            if !a.lexicons.is_empty() {
                cfg.paths.lexicon = a.lexicons.clone();
            }
        }
        Command::SentimentLlm(a) => {
            if cfg.sentiment.llm.is_none() {
                if let (Some(e), Some(m)) = (&a.endpoint, &a.model) {
                    cfg.sentiment.llm = Some(LlmSection::new(e, m));
                }
            }
            if let Some(llm) = &mut cfg.sentiment.llm {
                if let Some(e) = &a.endpoint {
                    llm.endpoint = e.clone();
                }
                if let Some(m) = &a.model {
                    llm.model = m.clone();
                }
                if let Some(p) = a.prompt_mode {
                    llm.prompt_mode = match p {
                        PromptModeArg::ZeroShot => PromptMode::ZeroShot,
                        PromptModeArg::FewShot => PromptMode::FewShot,
                    };
                }
                if let Some(n) = a.max_in_flight {
                    llm.max_in_flight = n;
                }
                if a.cache_dir.is_some() {
                    llm.cache_dir = a.cache_dir.clone();
                }
                if a.llm_seed.is_some() {
                    llm.seed = a.llm_seed;
                }
            }
        }
        Command::Benchmark(a) => {
            if a.gold.is_some() {
                cfg.paths.gold = a.gold.clone();
            }
        }
        Command::Aggregate(a) => {
            if let Some(l) = a.labels {
                cfg.aggregate.labels = label_source(l);
            }
            if let Some(d) = &a.date_floor {
                cfg.aggregate.date_floor = if d == "none" { String::new() } else { d.clone() };
            }
            if let Some(h) = a.utc_offset_hours {
                cfg.aggregate.utc_offset_hours = h;
            }
            if a.only_topic_assigned {
                cfg.aggregate.only_topic_assigned = true;
            }
        }
        Command::Cooccur(a) => {
            if let Some(l) = a.labels {
                cfg.aggregate.labels = label_source(l);
            }
            let c = &mut cfg.cooccur;
            if a.label.is_some() {
                c.label = a.label.clone();
            }
            if a.from.is_some() {
                c.from = a.from.clone();
            }
            if a.to.is_some() {
                c.to = a.to.clone();
            }
            if a.topic.is_some() {
                c.topic = a.topic;
            }
            if a.node_min_freq.is_some() {
                c.node_min_freq = a.node_min_freq;
            }
            if a.display_names.is_some() {
                c.display_names = a.display_names.clone();
            }
        }
        _ => {}
    }
}

fn label_source(l: LabelSourceArg) -> LabelSource {
    match l {
        LabelSourceArg::Lexicon => LabelSource::Lexicon,
        LabelSourceArg::Llm => LabelSource::Llm,
    }
}

fn api_key() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())
}

fn ingest(ctx: &Ctx, args: &IngestArgs) -> Result<(), Failure> {
    let dir = ctx.stage_dir("ingest")?;
    let mut m = ctx.manifest("ingest");
    let mut skipped: Vec<(String, String, String)> = Vec::new();
    let videos = if args.fetch {
        let endpoint = ctx
            .cfg
            .ingest
            .endpoint
            .clone()
            .ok_or_else(|| Failure::Config("ingest --fetch needs ingest.endpoint or --endpoint".into()))?;
        let query = ctx
            .cfg
            .ingest
            .query
            .clone()
            .ok_or_else(|| Failure::Config("ingest --fetch needs ingest.query or --query".into()))?;
        let key = api_key().ok_or_else(|| Failure::Config(format!("ingest --fetch needs {API_KEY_ENV}")))?;
        let out = FetchClient::new(endpoint, key)?.fetch_videos(&query, ctx.cfg.ingest.max_pages.max(1))?;
        for s in out.skipped_items {
            skipped.push(("search".into(), String::new(), s));
        }
        out.videos
    } else {
        m.input(&ctx.cfg.paths.videos)?;
        let loaded = load_videos(&ctx.cfg.paths.videos)?;
        for s in loaded.skipped {
            skipped.push(("videos".into(), format!("line {}", s.line), s.reason));
        }
        loaded.records
    };
    m.input(&ctx.cfg.paths.comments)?;
    let loaded = load_comments(&ctx.cfg.paths.comments)?;
    for s in loaded.skipped {
        skipped.push(("comments".into(), format!("line {}", s.line), s.reason));
    }
    let videos: Vec<VideoDoc> = videos.iter().map(VideoDoc::cleaned).collect();
    // comments on unknown videos stay in the corpus, flagged
    let orphans: HashSet<String> = orphaned_comments(&loaded.records, &videos).into_iter().map(str::to_owned).collect();
    let comments: Vec<Comment> = loaded
        .records
        .into_iter()
        .map(|c| Comment {
            text: clean_text(&c.text),
            ..c
        })
        .collect();
    write_jsonl(dir.join("videos.jsonl"), &videos)?;
    write_jsonl(dir.join("comments.jsonl"), &comments)?;
    let mut w = csv_writer(&dir.join("skipped.csv"))?;
    w.write_record(["source", "record", "reason"]).map_err(fatal)?;
    for (a, b, c) in &skipped {
        w.write_record([a, b, c]).map_err(fatal)?;
    }
    w.flush().map_err(fatal)?;
    let mut w = csv_writer(&dir.join("orphans.csv"))?;
    w.write_record(["comment_id", "video_id"]).map_err(fatal)?;
    for c in comments.iter().filter(|c| orphans.contains(&c.comment_id)) {
        w.write_record([&c.comment_id, &c.video_id]).map_err(fatal)?;
    }
    w.flush().map_err(fatal)?;
    log::info!(
        "ingest: {} videos, {} comments ({} on unknown videos), {} skipped",
        videos.len(),
        comments.len(),
        orphans.len(),
        skipped.len()
    );
    m.params(json!({"videos": videos.len(), "comments": comments.len(), "orphaned_comments": orphans.len(),
                    "skipped": skipped.len(), "fetched": args.fetch}));
    m.finish(&["videos.jsonl", "comments.jsonl", "skipped.csv", "orphans.csv"])?;
    Ok(())
}

fn filter(ctx: &Ctx) -> Result<(), Failure> {
    let vp = ctx.artifact("ingest", "videos.jsonl")?;
    let cp = ctx.artifact("ingest", "comments.jsonl")?;
    let rules = ctx.cfg.filter_rules()?;
    let dir = ctx.stage_dir("filter")?;
    let mut m = ctx.manifest("filter");
    m.input(&vp)?;
    m.input(&cp)?;
    if let Some(p) = &ctx.cfg.paths.filter_rules {
        m.input(p)?;
    }
    let videos = load_videos(&vp)?.records;
    let comments = load_comments(&cp)?.records;
    let outcome = filter_videos(&videos, &rules)?;
    let kept_ids: HashSet<&str> = outcome.kept.iter().map(|v| v.video_id.as_str()).collect();
    let known_ids: HashSet<&str> = videos.iter().map(|v| v.video_id.as_str()).collect();
    let orphans: Vec<String> = comments
        .iter()
        .filter(|c| !known_ids.contains(c.video_id.as_str()))
        .map(|c| c.comment_id.clone())
        .collect();
    // orphans cannot be judged by their video, so only the language filter applies
    let (on_topic, off_topic): (Vec<Comment>, Vec<Comment>) = comments
        .into_iter()
        .partition(|c| kept_ids.contains(c.video_id.as_str()) || !known_ids.contains(c.video_id.as_str()));
    let classifier = ScriptRatioClassifier {
        threshold: ctx.cfg.language.threshold,
    };
    let lang = filter_language(&on_topic, &classifier);

    write_jsonl(dir.join("videos.jsonl"), &outcome.kept)?;
    write_jsonl(dir.join("comments.jsonl"), &lang.kept)?;
    let mut w = csv_writer(&dir.join("dropped.csv"))?;
    w.write_record(["kind", "id", "reason"]).map_err(fatal)?;
    for (id, reason) in &outcome.dropped {
        w.write_record(["video", id, &reason.to_string()]).map_err(fatal)?;
    }
    for c in &off_topic {
        w.write_record(["comment", &c.comment_id, "dropped-video"]).map_err(fatal)?;
    }
    for c in &lang.removed {
        w.write_record(["comment", &c.comment_id, "not-japanese"]).map_err(fatal)?;
    }
    for id in &orphans {
        w.write_record(["comment", id, "kept-orphan"]).map_err(fatal)?;
    }
    for (id, why) in &lang.flagged {
        w.write_record(["comment", id, &format!("kept-classifier-error:{why}")]).map_err(fatal)?;
    }
    w.flush().map_err(fatal)?;
    log::info!(
        "filter: kept {}/{} videos, {} comments ({} not Japanese)",
        outcome.kept.len(),
        videos.len(),
        lang.kept.len(),
        lang.removed.len()
    );
    m.params(json!({
        "rules": rules,
        "language_threshold": ctx.cfg.language.threshold,
        "videos_kept": outcome.kept.len(),
        "videos_dropped": outcome.dropped.len(),
        "comments_kept": lang.kept.len(),
        "comments_not_japanese": lang.removed.len(),
        "comments_flagged": lang.flagged.len(),
        "orphaned_comments": orphans.len(),
    }));
    m.finish(&["videos.jsonl", "comments.jsonl", "dropped.csv"])?;
    Ok(())
}

fn bow(ctx: &Ctx) -> Result<(), Failure> {
    let vp = ctx.artifact("filter", "videos.jsonl")?;
    let videos = load_videos(&vp)?.records;
    let dir = ctx.stage_dir("bow")?;
    let mut m = ctx.manifest("bow");
    m.input(&vp)?;
    if let Some(p) = &ctx.cfg.tokenizer.user_dict {
        m.input(p)?;
    }
    let tokenizer = ctx.tokenizer(&[])?;
    let opts = BowOptions {
        keep_pos: ctx.cfg.tokenizer.keep_pos.iter().copied().collect(),
        min_corpus_count: ctx.cfg.tokenizer.min_corpus_count,
        stopwords: ctx.cfg.tokenizer.stopwords.iter().map(|s| normalize_for_match(s)).collect(),
    };
    let docs: Vec<(String, String)> = videos.iter().map(|v| (v.video_id.clone(), v.full_text())).collect();
    let out = build_bow(&docs, &*tokenizer, &opts)?;
    write_vocab_tsv(dir.join("vocab.tsv"), &out.vocab)?;
    write_bow_jsonl(dir.join("bow.jsonl"), &out.docs)?;
    write_sequences_jsonl(dir.join("sequences.jsonl"), &out.docs, &out.sequences)?;
    write_freq_csv(dir.join("freq.csv"), &out.vocab)?;
    log::info!("bow: {} documents, {} terms, {} empty", out.docs.len(), out.vocab.len(), out.empty_docs.len());
    m.params(json!({
        "documents": out.docs.len(),
        "vocabulary": out.vocab.len(),
        "vocab_sha256": out.vocab.fingerprint(),
        "empty_documents": out.empty_docs,
    }));
    m.finish(&["vocab.tsv", "bow.jsonl", "sequences.jsonl", "freq.csv"])?;
    Ok(())
}

struct BowInputs {
    vocab: opinion_core::tokenize::Vocabulary,
    docs: Vec<opinion_core::tokenize::BowDoc>,
    sequences: Vec<Vec<u32>>,
    paths: Vec<PathBuf>,
}

fn load_bow(ctx: &Ctx) -> Result<BowInputs, Failure> {
    let vp = ctx.artifact("bow", "vocab.tsv")?;
    let bp = ctx.artifact("bow", "bow.jsonl")?;
    let sp = ctx.artifact("bow", "sequences.jsonl")?;
    Ok(BowInputs {
        vocab: read_vocab_tsv(&vp)?,
        docs: read_bow_jsonl(&bp)?,
        sequences: read_sequences_jsonl(&sp)?.into_iter().map(|(_, s)| s).collect(),
        paths: vec![vp, bp, sp],
    })
}

fn lda_sweep(ctx: &Ctx) -> Result<(), Failure> {
    let input = load_bow(ctx)?;
    let dir = ctx.stage_dir("lda-sweep")?;
    let mut m = ctx.manifest("lda-sweep");
    for p in &input.paths {
        m.input(p)?;
    }
    let configs = sweep_configs(ctx.cfg.lda.k_min..=ctx.cfg.lda.k_max, &ctx.cfg.lda.base(ctx.cfg.seed));
    let records = sweep_topics(&input.docs, input.vocab.len(), &input.sequences, &configs, &ctx.cfg.coherence)?;
    write_sweep_csv(dir.join("sweep.csv"), &records)?;
    let best_cv = best_by_coherence(&records, CoherenceMeasure::Cv);
    let best_umass = best_by_coherence(&records, CoherenceMeasure::UMass);
    let rows: Vec<_> = records
        .iter()
        .map(|r| match &r.outcome {
            Ok(s) => json!({"K": r.num_topics, "seed": r.seed, "coherence_cv": s.coherence_cv,
                            "coherence_umass": s.coherence_umass, "perplexity": s.perplexity}),
            Err(e) => json!({"K": r.num_topics, "seed": r.seed, "error": e}),
        })
        .collect();
    let summary = json!({
        "best_k_c_v": best_cv,
        "best_k_u_mass": best_umass,
        "pinned_k": ctx.cfg.lda.num_topics,
        "records": rows,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    let failed = records.iter().filter(|r| r.failed()).count();
    log::info!(
        "lda-sweep: {} models ({failed} failed); best K by c_v {:?}, by u_mass {:?}",
        records.len(),
        best_cv,
        best_umass
    );
    m.params(json!({"k_min": ctx.cfg.lda.k_min, "k_max": ctx.cfg.lda.k_max, "models": records.len(), "failed": failed}));
    m.finish(&["sweep.csv", "summary.json"])?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(fatal)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<serde_json::Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

fn lda_train(ctx: &Ctx) -> Result<(), Failure> {
    let input = load_bow(ctx)?;
    let mut m = ctx.manifest("lda-train");
    for p in &input.paths {
        m.input(p)?;
    }
    let k = match ctx.cfg.lda.num_topics {
        Some(k) => k,
        None => {
            let sp = ctx.artifact("lda-sweep", "summary.json")?;
            m.input(&sp)?;
            read_json(&sp)?["best_k_c_v"]
                .as_u64()
                .ok_or_else(|| fatal("lda-sweep found no model with a defined C_v; set lda.num_topics"))?
                as usize
        }
    };
    let dir = ctx.stage_dir("lda-train")?;
    let mut config = ctx.cfg.lda.base(ctx.cfg.seed);
    config.num_topics = k;
    config.seed = ctx.cfg.seed.wrapping_add(k as u64);
    let model = train_lda(&input.docs, input.vocab.len(), &config)?.with_vocab_fingerprint(input.vocab.fingerprint());
    model.save(dir.join("model.json"))?;

    let top_n = ctx.cfg.lda.top_n.max(1);
    let mut w = csv_writer(&dir.join("topics.csv"))?;
    w.write_record(["topic_id", "rank", "term", "weight"]).map_err(fatal)?;
    let mut topics = Vec::with_capacity(k);
    for t in 0..k {
        let ids = model.top_keywords(t, top_n)?;
        for (rank, &id) in ids.iter().enumerate() {
            w.write_record([
                t.to_string(),
                (rank + 1).to_string(),
                input.vocab.term(id).unwrap_or("").to_owned(),
                format!("{:.6}", model.phi[t][id as usize]),
            ])
            .map_err(fatal)?;
        }
        topics.push(model.top_keywords(t, ctx.cfg.coherence.top_n)?);
    }
    w.flush().map_err(fatal)?;

    let mut w = csv_writer(&dir.join("doc_topics.csv"))?;
    w.write_record(["doc_id", "main_topic", "top1", "p1", "top2", "p2", "top3", "p3"]).map_err(fatal)?;
    let mut unassigned = 0;
    for (d, id) in model.doc_ids.iter().enumerate() {
        let main = model.main_topic(d);
        unassigned += usize::from(main.is_none());
        let mut row = vec![id.clone(), main.map(|k| k.to_string()).unwrap_or_default()];
        let top = top_indices(&model.theta[d], 3);
        for i in 0..3 {
            match top.get(i) {
                Some(&t) => {
                    row.push(t.to_string());
                    row.push(format!("{:.6}", model.theta[d][t as usize]));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row).map_err(fatal)?;
    }
    w.flush().map_err(fatal)?;

    let cv = coherence_cv(&topics, &input.sequences, &ctx.cfg.coherence);
    let umass = coherence_umass(&topics, &input.sequences);
    write_coherence_csv(dir.join("coherence.csv"), &[(CoherenceMeasure::Cv, &cv), (CoherenceMeasure::UMass, &umass)])?;
    let perplexity = model.perplexity(&input.docs)?;
    log::info!("lda-train: K={k}, c_v {:?}, perplexity {perplexity:.3}", cv.mean);
    m.params(json!({"K": k, "seed": config.seed, "perplexity": perplexity, "c_v": cv.mean,
                    "u_mass": umass.mean, "documents_without_main_topic": unassigned}));
    m.finish(&["model.json", "topics.csv", "doc_topics.csv", "coherence.csv"])?;
    Ok(())
}

fn sentiment_lexicon(ctx: &Ctx) -> Result<(), Failure> {
    if ctx.cfg.paths.lexicon.is_empty() {
        return Err(Failure::Config("paths.lexicon lists no lexicon files".into()));
    }
    let Filtered {
        comments,
        comments_path: cp,
        ..
    } = ctx.load_filtered()?;
    let dir = ctx.stage_dir("sentiment-lexicon")?;
    let mut m = ctx.manifest("sentiment-lexicon");
    m.input(&cp)?;
    for p in &ctx.cfg.paths.lexicon {
        m.input(p)?;
    }
    let (lexicon, conflicts) = PolarityLexicon::load_tsv(&ctx.cfg.paths.lexicon)?;
    let extra: Vec<(String, Pos)> = lexicon.terms().map(|(t, _)| (t.to_owned(), Pos::Other)).collect();
    let tokenizer = ctx.tokenizer(&extra)?;
    let labels = comments
        .par_iter()
        .map(|c| {
            let tokens: Vec<String> = tokenizer
                .tokenize(&c.text)?
                .into_iter()
                .map(|t| normalize_for_match(&t.normalized))
                .collect();
            Ok(LabeledComment::from_lexicon(&c.comment_id, &lexicon_score(&tokens, &lexicon), "lexicon"))
        })
        .collect::<Result<Vec<_>, opinion_core::Error>>()?;
    write_jsonl(dir.join("labels.jsonl"), &labels)?;
    let mut w = csv_writer(&dir.join("conflicts.csv"))?;
    w.write_record(["term", "sources"]).map_err(fatal)?;
    for c in &conflicts {
        w.write_record([c.term.clone(), c.sources.join(";")]).map_err(fatal)?;
    }
    w.flush().map_err(fatal)?;
    let unscored = labels.iter().filter(|l| l.score.is_none()).count();
    log::info!("sentiment-lexicon: {} comments labeled, {unscored} without sentiment words", labels.len());
    m.params(json!({"lexicon_terms": lexicon.len(), "conflicts": conflicts.len(),
                    "comments": labels.len(), "unscored": unscored, "label_counts": label_counts(&labels)}));
    m.finish(&["labels.jsonl", "conflicts.csv"])?;
    Ok(())
}

fn label_counts(labels: &[LabeledComment]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.label.to_string()).or_insert(0) += 1;
    }
    out
}

fn sentiment_llm(ctx: &Ctx) -> Result<(), Failure> {
    let llm = ctx
        .cfg
        .sentiment
        .llm
        .as_ref()
        .ok_or_else(|| Failure::Config("sentiment-llm needs a [sentiment.llm] table or --endpoint and --model".into()))?;
    let Filtered {
        comments,
        comments_path: cp,
        ..
    } = ctx.load_filtered()?;
    let dir = ctx.stage_dir("sentiment-llm")?;
    let mut m = ctx.manifest("sentiment-llm");
    m.input(&cp)?;
    let cache = llm.cache_dir.clone().unwrap_or_else(|| dir.join("cache"));
    let backend = llm.backend(ctx.cfg.seed, Some(cache), api_key());
    let template = backend.template()?;
    let input: Vec<(String, String)> = comments.iter().map(|c| (c.comment_id.clone(), c.text.clone())).collect();
    let run = llm_classify(&input, &backend)?;
    write_jsonl(dir.join("labels.jsonl"), &run.labels)?;
    let mut w = csv_writer(&dir.join("failures.csv"))?;
    w.write_record(["comment_id", "reason"]).map_err(fatal)?;
    for f in &run.failures {
        w.write_record([&f.comment_id, &f.reason]).map_err(fatal)?;
    }
    w.flush().map_err(fatal)?;
    log::info!(
        "sentiment-llm: {} labeled, {} failed, {} empty; {} requests, {} cache hits",
        run.labels.len(),
        run.failures.len(),
        run.empty.len(),
        run.requests,
        run.cache_hits
    );
    m.params(json!({
        "model": backend.model,
        "prompt_mode": backend.prompt_mode,
        "template_sha256": template.hash(),
        "temperature": backend.temperature,
        "llm_seed": backend.seed,
        "labeled": run.labels.len(),
        "failed": run.failures.len(),
        "empty": run.empty,
        "label_counts": label_counts(&run.labels),
    }));
    m.finish(&["labels.jsonl", "failures.csv"])?;
    Ok(())
}

fn benchmark(ctx: &Ctx) -> Result<(), Failure> {
    let gold_path = ctx
        .cfg
        .paths
        .gold
        .clone()
        .ok_or_else(|| Failure::Config("benchmark needs paths.gold or --gold".into()))?;
    let gold = read_gold(&gold_path)?;
    let gold_ids: HashSet<&str> = gold.iter().map(|(id, _)| id.as_str()).collect();
    let mut sources = Vec::new();
    for source in [LabelSource::Lexicon, LabelSource::Llm] {
        if ctx.out.join(source.stage()).join("labels.jsonl").is_file() {
            sources.push(source);
        }
    }
    if sources.is_empty() {
        return Err(Failure::Fatal(format!(
            "missing upstream artifact {}; run `opinion sentiment-lexicon` or `opinion sentiment-llm` first",
            ctx.out.join("sentiment-lexicon/labels.jsonl").display()
        )));
    }
    let dir = ctx.stage_dir("benchmark")?;
    let mut m = ctx.manifest("benchmark");
    m.input(&gold_path)?;
    let mut rows = Vec::new();
    let mut outputs = vec!["benchmark.csv".to_string()];
    for source in sources {
        let (labels, lp) = ctx.labels(source)?;
        m.input(&lp)?;
        let preds: Vec<(String, SentimentLabel)> = labels
            .iter()
            .filter(|l| gold_ids.contains(l.comment_id.as_str()))
            .map(|l| (l.comment_id.clone(), l.label))
            .collect();
        let eval = evaluate(&preds, &gold).map_err(|e| fatal(format!("{}: {e}", source.stage())))?;
        let method = match source {
            LabelSource::Lexicon => "lexicon".to_string(),
            LabelSource::Llm => labels.first().map(|l| l.model_tag.clone()).unwrap_or_else(|| "llm".into()),
        };
        let name = format!("confusion_{}.csv", match source {
            LabelSource::Lexicon => "lexicon",
            LabelSource::Llm => "llm",
        });
        write_confusion_csv(dir.join(&name), &eval.confusion)?;
        outputs.push(name);
        log::info!("benchmark {method}: accuracy {:.4}, weighted F1 {:.4}", eval.accuracy, eval.f1);
        rows.push(BenchmarkRow::new(method, &eval));
    }
    write_benchmark_csv(dir.join("benchmark.csv"), &rows)?;
    m.params(json!({"gold": gold.len()}));
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    m.finish(&names)?;
    Ok(())
}

fn aggregate_options(ctx: &Ctx) -> Result<AggregateOptions, Failure> {
    let a = &ctx.cfg.aggregate;
    let date_floor = if a.date_floor.is_empty() {
        None
    } else {
        Some(
            NaiveDate::parse_from_str(&a.date_floor, "%Y-%m-%d")
                .map_err(|e| Failure::Config(format!("aggregate.date_floor {:?}: {e}", a.date_floor)))?,
        )
    };
    let offset = FixedOffset::east_opt(a.utc_offset_hours * 3600)
        .ok_or_else(|| Failure::Config(format!("utc_offset_hours {} out of range", a.utc_offset_hours)))?;
    Ok(AggregateOptions {
        date_floor,
        offset,
        only_topic_assigned: a.only_topic_assigned,
    })
}

fn aggregate(ctx: &Ctx) -> Result<(), Failure> {
    let opts = aggregate_options(ctx)?;
    let Joined {
        records,
        filtered,
        topics,
        inputs,
    } = ctx.join(ctx.cfg.aggregate.labels)?;
    let videos = filtered.videos;
    let k = topics.num_topics;
    let topics = topics.main;
    let dir = ctx.stage_dir("aggregate")?;
    let mut m = ctx.manifest("aggregate");
    for p in &inputs {
        m.input(p)?;
    }
    let series = monthly_scores(&records, &opts);
    write_monthly_csv(dir.join("monthly_scores.csv"), &series)?;
    let known: Vec<usize> = (0..k).collect();
    let table = topic_sentiment(&records, &known);
    write_topic_sentiment_csv(dir.join("topic_sentiment.csv"), &table)?;
    let vt: Vec<VideoTopic> = videos
        .iter()
        .map(|v| VideoTopic {
            video_id: v.video_id.clone(),
            published_at: v.published_at,
            main_topic: topics.get(&v.video_id).copied().flatten(),
        })
        .collect();
    let ts = topic_timeseries(&vt, &opts.offset);
    write_topic_monthly_csv(dir.join("topic_monthly.csv"), &ts)?;
    log::info!(
        "aggregate: {} months, {} comments before the date floor, {} unassigned",
        series.entries.len(),
        series.before_floor,
        table.unassigned.total()
    );
    m.params(json!({
        "labels": ctx.cfg.aggregate.labels,
        "date_floor": ctx.cfg.aggregate.date_floor,
        "utc_offset_hours": ctx.cfg.aggregate.utc_offset_hours,
        "only_topic_assigned": opts.only_topic_assigned,
        "records": records.len(),
        "before_floor": series.before_floor,
        "unassigned_comments": table.unassigned.total(),
        "videos_without_topic": ts.without_topic,
    }));
    m.finish(&["monthly_scores.csv", "topic_sentiment.csv", "topic_monthly.csv"])?;
    Ok(())
}

fn slice_spec(ctx: &Ctx) -> Result<SliceSpec, Failure> {
    let c = &ctx.cfg.cooccur;
    let month = |s: &Option<String>| -> Result<Option<YearMonth>, Failure> {
        s.as_deref().map(|m| m.parse().map_err(Failure::from)).transpose()
    };
    Ok(SliceSpec {
        label: c.label.as_deref().map(str::parse).transpose()?,
        from: month(&c.from)?,
        to: month(&c.to)?,
        topic: c.topic,
    })
}

fn cooccur(ctx: &Ctx, _args: &CooccurArgs) -> Result<(), Failure> {
    let min_freq = ctx
        .cfg
        .cooccur
        .node_min_freq
        .ok_or_else(|| Failure::Config("cooccur needs cooccur.node_min_freq or --node-min-freq".into()))?;
    let spec = slice_spec(ctx)?;
    let opts = aggregate_options(ctx)?;
    let Joined {
        records,
        filtered,
        inputs,
        ..
    } = ctx.join(ctx.cfg.aggregate.labels)?;
    let comments = filtered.comments;
    let dir = ctx.stage_dir("cooccur")?;
    let mut m = ctx.manifest("cooccur");
    for p in &inputs {
        m.input(p)?;
    }
    let text: HashMap<&str, &str> = comments.iter().map(|c| (c.comment_id.as_str(), c.text.as_str())).collect();
    let slice = opinion_core::cooccur::sentiment_slice(&records, &spec, &opts.offset);
    if slice.is_empty() {
        log::warn!("cooccur: slice {} selects no comments", spec.describe());
    }
    let texts: Vec<&str> = slice.iter().filter_map(|r| text.get(r.comment_id.as_str()).copied()).collect();
    let tokenizer = ctx.tokenizer(&[])?;
    let mut graph_opts = GraphOptions::new(min_freq);
    graph_opts.keep_pos = ctx.cfg.tokenizer.keep_pos.iter().copied().collect();
    let mut graph = build_graph(&texts, &*tokenizer, &graph_opts)?;
    graph.metadata.filter = spec.describe();
    if let Some(p) = &ctx.cfg.cooccur.display_names {
        m.input(p)?;
        graph.display = load_display_names(p)?;
    }
    let mut outputs = Vec::new();
    for format in [GraphFormat::GraphMl, GraphFormat::Dot, GraphFormat::Json] {
        let name = format!("graph.{}", format.extension());
        write_graph(dir.join(&name), &graph, format)?;
        outputs.push(name);
    }
    log::info!(
        "cooccur: {} comments, {} nodes, {} edges ({})",
        texts.len(),
        graph.nodes.len(),
        graph.edges.len(),
        spec.describe()
    );
    m.params(json!({"slice": spec.describe(), "node_min_freq": min_freq, "comments": texts.len(),
                    "nodes": graph.nodes.len(), "edges": graph.edges.len()}));
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    m.finish(&names)?;
    Ok(())
}

fn read_text(path: &Path) -> Option<String> {
    std::fs::read_to_string(path).ok()
}

fn report(ctx: &Ctx) -> Result<(), Failure> {
    let (manifests, problems) = verify(&ctx.out)?;
    let dir = ctx.stage_dir("report")?;
    let mut m = ctx.manifest("report");
    let mut md = String::from("# Pipeline report\n\n## Stages\n\n| stage | outputs | seed | config |\n|---|---|---|---|\n");
    for man in manifests.iter().filter(|m| m.stage != "report") {
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            man.stage,
            man.outputs.iter().map(|o| o.path.as_str()).collect::<Vec<_>>().join(", "),
            man.seed,
            &man.config_sha256[..12.min(man.config_sha256.len())]
        ));
    }
    if problems.is_empty() {
        md.push_str("\nAll manifest outputs match their recorded hashes.\n");
    } else {
        md.push_str("\nManifest problems:\n\n");
        for p in &problems {
            md.push_str(&format!("- {p}\n"));
        }
    }
    if let Ok(p) = ctx.artifact("lda-sweep", "summary.json") {
        m.input(&p)?;
        let s = read_json(&p)?;
        md.push_str(&format!(
            "\n## Topic count\n\nBest K by C_v: {}. Best K by UMass: {}. Pinned K: {}.\n",
            s["best_k_c_v"], s["best_k_u_mass"], s["pinned_k"]
        ));
    }
    if let Ok(p) = ctx.artifact("lda-train", "topics.csv") {
        m.input(&p)?;
        md.push_str("\n## Topics\n\n");
        let mut by_topic: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        let mut r = csv::Reader::from_path(&p).map_err(fatal)?;
        for row in r.records().flatten() {
            if let Ok(t) = row[0].parse() {
                by_topic.entry(t).or_default().push(row[2].to_owned());
            }
        }
        for (t, terms) in by_topic {
            md.push_str(&format!("- topic {t}: {}\n", terms.join(" ")));
        }
    }
    for (stage, file, title) in [
        ("benchmark", "benchmark.csv", "Sentiment benchmark"),
        ("aggregate", "monthly_scores.csv", "Monthly sentiment"),
        ("aggregate", "topic_sentiment.csv", "Sentiment by topic"),
    ] {
        if let Ok(p) = ctx.artifact(stage, file) {
            m.input(&p)?;
            md.push_str(&format!("\n## {title}\n\n"));
            md.push_str(&csv_to_markdown(&read_text(&p).unwrap_or_default()));
        }
    }
    if let Ok(p) = ctx.artifact("cooccur", "graph.json") {
        m.input(&p)?;
        let g = opinion_core::cooccur::from_json(&read_text(&p).unwrap_or_default())?;
        md.push_str(&format!(
            "\n## Co-occurrence network\n\n{}: {} nodes, {} edges.\n",
            g.metadata.filter,
            g.nodes.len(),
            g.edges.len()
        ));
    }
    let path = dir.join("report.md");
    std::fs::write(&path, md).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
    m.params(json!({"stages": manifests.len(), "problems": problems.len()}));
    m.finish(&["report.md"])?;
    if !problems.is_empty() {
        return Err(fatal(format!("{} manifest problems; see report/report.md", problems.len())));
    }
    Ok(())
}

fn csv_to_markdown(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let cols = header.split(',').count();
    let mut out = format!("| {} |\n|{}\n", header.replace(',', " | "), "---|".repeat(cols));
    for l in lines {
        out.push_str(&format!("| {} |\n", l.replace(',', " | ")));
    }
    out
}

fn pipeline(ctx: &Ctx, args: &PipelineArgs) -> Result<(), Failure> {
    ingest(ctx, &IngestArgs::default())?;
    filter(ctx)?;
    bow(ctx)?;
    lda_sweep(ctx)?;
    lda_train(ctx)?;
    sentiment_lexicon(ctx)?;
    if ctx.cfg.sentiment.llm.is_some() && !args.skip_llm {
        sentiment_llm(ctx)?;
    }
    if ctx.cfg.paths.gold.is_some() {
        benchmark(ctx)?;
    }
    aggregate(ctx)?;
    if ctx.cfg.cooccur.node_min_freq.is_some() {
        cooccur(ctx, &CooccurArgs::default())?;
    }
    report(ctx)
}

fn verify_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let (manifests, problems) = verify(&ctx.out)?;
    for p in &problems {
        println!("{p}");
    }
    if problems.is_empty() {
        println!("{} manifests verified", manifests.len());
        Ok(())
    } else {
        Err(fatal(format!("{} manifest problems", problems.len())))
    }
}

fn synth_cmd(cli: &Cli, args: &SynthArgs) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(42);
    let fx = synth::fixture(seed, args.videos_per_topic, args.comments_per_video);
    let paths = synth::write_fixture(&args.dir, &fx)?;
    let name = |p: &Path| PathBuf::from(p.file_name().expect("fixture file"));
    let mut cfg = PipelineConfig::new(name(&paths.videos), name(&paths.comments), "out".into());
    cfg.seed = seed;
    cfg.paths.lexicon = vec![name(&paths.lexicon)];
    cfg.paths.gold = Some(name(&paths.gold));
    cfg.paths.filter_rules = Some(name(&paths.filter_rules));
    cfg.tokenizer.user_dict = Some(name(&paths.user_dict));
    cfg.cooccur.node_min_freq = Some(2);
    cfg.cooccur.label = Some("negative".into());
    if let Some(endpoint) = &args.llm_endpoint {
        let mut llm = LlmSection::new(endpoint, "keyword-stub");
        llm.backoff_ms = 10;
        cfg.sentiment.llm = Some(llm);
    }
    let cfg_path = args.dir.join("opinion.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| fatal(format!("{}: {e}", cfg_path.display())))?;
    println!(
        "wrote {} videos, {} comments and {}",
        fx.videos.len(),
        fx.comments.len(),
        cfg_path.display()
    );
    Ok(())
}

fn stub_server(args: &StubArgs) -> Result<(), Failure> {
    let stub = StubServer::bind(&args.addr, |req| {
        chat_reply(req, &|r: &opinion_core::sentiment::ChatRequest| {
            let user = r.messages.iter().rev().find(|m| m.role == "user")?;
            Some(synth::keyword_label(&user.content).japanese().to_owned())
        })
    })?;
    println!("{}", stub.url());
    stub.wait();
    Ok(())
}
