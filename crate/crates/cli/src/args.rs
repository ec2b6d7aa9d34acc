use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Topic and sentiment analysis pipeline for video comment corpora.
///
/// Each stage reads the artifacts of earlier stages from the output
/// directory and writes its own files plus a manifest.json.
#[derive(Debug, Parser)]
#[command(name = "opinion", version, propagate_version = true)]
pub struct Cli {
    /// Pipeline config file (TOML).
    #[arg(short, long, global = true, default_value = "opinion.toml")]
    pub config: PathBuf,

    /// Output directory; overrides paths.out_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Pipeline seed; overrides seed.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,

    /// Log more detail (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, clean and deduplicate videos and comments.
    Ingest(IngestArgs),
    /// Keep on-topic videos and Japanese comments.
    Filter(FilterArgs),
    /// Tokenize video text into a noun vocabulary and bag-of-words.
    Bow(BowArgs),
    /// Train one LDA model per topic count and score coherence and perplexity.
    LdaSweep(SweepArgs),
    /// Train the final LDA model and assign main topics to videos.
    LdaTrain(TrainArgs),
    /// Label comments with the polarity lexicon scorer.
    SentimentLexicon(LexiconArgs),
    /// Label comments through a chat-completion endpoint.
    SentimentLlm(LlmArgs),
    /// Compare sentiment labels with gold annotations.
    Benchmark(BenchmarkArgs),
    /// Monthly sentiment scores and per-topic sentiment shares.
    Aggregate(AggregateArgs),
    /// Build a word co-occurrence network from a comment slice.
    Cooccur(CooccurArgs),
    /// Summarize all stage results in report.md.
    Report,
    /// Run every stage in order.
    Pipeline(PipelineArgs),
    /// Re-hash all manifest outputs and report tampering.
    Verify,
    /// Write a seeded synthetic fixture and a config for it.
    Synth(SynthArgs),
    /// Serve a local chat-completion stub that answers by keyword counting.
    StubServer(StubArgs),
}

#[derive(Debug, Args, Default)]
pub struct IngestArgs {
    /// Fetch video metadata from the search endpoint instead of paths.videos.
    #[arg(long)]
    pub fetch: bool,
    /// Search endpoint URL; overrides ingest.endpoint.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Search query; overrides ingest.query.
    #[arg(long)]
    pub query: Option<String>,
    /// Maximum result pages to fetch; overrides ingest.max_pages.
    #[arg(long)]
    pub max_pages: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct FilterArgs {
    /// Keyword rules file (TOML or JSON); overrides paths.filter_rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Minimum Japanese script share; overrides language.threshold.
    #[arg(long)]
    pub language_threshold: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct BowArgs {
    /// User dictionary for the baseline tokenizer; overrides tokenizer.user_dict.
    #[arg(long)]
    pub user_dict: Option<PathBuf>,
    /// Drop terms seen fewer times; overrides tokenizer.min_corpus_count.
    #[arg(long)]
    pub min_corpus_count: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    /// Smallest topic count; overrides lda.k_min.
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Largest topic count; overrides lda.k_max.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Gibbs sweeps per model; overrides lda.iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sweeps discarded before averaging; overrides lda.burn_in.
    #[arg(long)]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Topic count; overrides lda.num_topics (default: best C_v K from lda-sweep).
    #[arg(long)]
    pub k: Option<usize>,
    /// Gibbs sweeps; overrides lda.iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sweeps discarded before averaging; overrides lda.burn_in.
    #[arg(long)]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct LexiconArgs {
    /// Polarity lexicon TSV (repeatable); replaces paths.lexicon.
    #[arg(long = "lexicon")]
    pub lexicons: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PromptModeArg {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Args, Default)]
pub struct LlmArgs {
    /// Chat-completion base URL; overrides sentiment.llm.endpoint.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name; overrides sentiment.llm.model.
    #[arg(long)]
    pub model: Option<String>,
    /// Prompt variant; overrides sentiment.llm.prompt_mode.
    #[arg(long, value_enum)]
    pub prompt_mode: Option<PromptModeArg>,
    /// Concurrent requests; overrides sentiment.llm.max_in_flight.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Response cache directory; overrides sentiment.llm.cache_dir.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Seed sent with every request; overrides sentiment.llm.seed.
    #[arg(long)]
    pub llm_seed: Option<i64>,
}

#[derive(Debug, Args, Default)]
pub struct BenchmarkArgs {
    /// Gold labels JSONL; overrides paths.gold.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelSourceArg {
    Lexicon,
    Llm,
}

#[derive(Debug, Args, Default)]
pub struct AggregateArgs {
    /// Which sentiment stage's labels to aggregate; overrides aggregate.labels.
    #[arg(long, value_enum)]
    pub labels: Option<LabelSourceArg>,
    /// Drop comments before this YYYY-MM-DD date ("none" disables); overrides aggregate.date_floor.
    #[arg(long)]
    pub date_floor: Option<String>,
    /// Month bucketing offset from UTC in hours; overrides aggregate.utc_offset_hours.
    #[arg(long, allow_hyphen_values = true)]
    pub utc_offset_hours: Option<i32>,
    /// Only count comments on videos with a main topic.
    #[arg(long)]
    pub only_topic_assigned: bool,
}

#[derive(Debug, Args, Default)]
pub struct CooccurArgs {
    /// Which sentiment stage's labels to slice by; overrides aggregate.labels.
    #[arg(long, value_enum)]
    pub labels: Option<LabelSourceArg>,
    /// Keep comments with this label (positive, neutral, negative).
    #[arg(long)]
    pub label: Option<String>,
    /// First month of the window, YYYY-MM.
    #[arg(long)]
    pub from: Option<String>,
    /// Last month of the window, YYYY-MM.
    #[arg(long)]
    pub to: Option<String>,
    /// Keep comments on videos with this main topic.
    #[arg(long)]
    pub topic: Option<usize>,
    /// Minimum sentence count for a node; overrides cooccur.node_min_freq.
    #[arg(long)]
    pub node_min_freq: Option<u64>,
    /// term<TAB>name file of node display names; overrides cooccur.display_names.
    #[arg(long)]
    pub display_names: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PipelineArgs {
    /// Skip sentiment-llm even when sentiment.llm is configured.
    #[arg(long)]
    pub skip_llm: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory to write the fixture and opinion.toml into.
    #[arg(long)]
    pub dir: PathBuf,
    /// Videos generated per topic.
    #[arg(long, default_value_t = 20)]
    pub videos_per_topic: usize,
    /// Comments generated per video.
    #[arg(long, default_value_t = 10)]
    pub comments_per_video: usize,
    /// Chat endpoint written into the config's [sentiment.llm] table.
    #[arg(long)]
    pub llm_endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct StubArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8089")]
    pub addr: String,
}
