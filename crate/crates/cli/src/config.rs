//! Pipeline configuration file (TOML). Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use opinion_core::coherence::CoherenceConfig;
use opinion_core::corpus::FilterRules;
use opinion_core::lda::LdaConfig;
use opinion_core::sentiment::{AliasTable, FewShotExample, LlmBackendConfig, PromptMode};
use opinion_core::tokenize::Pos;

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterRules>,
    #[serde(default)]
    pub language: LanguageConfig,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub lda: LdaSection,
    #[serde(default)]
    pub coherence: CoherenceConfig,
    #[serde(default)]
    pub sentiment: SentimentSection,
    #[serde(default)]
    pub aggregate: AggregateSection,
    #[serde(default)]
    pub cooccur: CooccurSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub videos: PathBuf,
    pub comments: PathBuf,
    #[serde(default)]
    pub lexicon: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_rules: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Search endpoint; when set, `ingest --fetch` pulls video metadata from it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub max_pages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageConfig {
    /// Minimum kana/kanji share of letters for a comment to count as Japanese.
    pub threshold: f64,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        LanguageConfig { threshold: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    #[default]
    Baseline,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_dict: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub args: Vec<String>,
    pub keep_pos: Vec<Pos>,
    pub stopwords: Vec<String>,
    pub min_corpus_count: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            kind: TokenizerKind::Baseline,
            user_dict: None,
            command: None,
            args: Vec::new(),
            keep_pos: vec![Pos::Noun],
            stopwords: Vec::new(),
            min_corpus_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaSection {
    pub k_min: usize,
    pub k_max: usize,
    /// Topic count for `lda-train`; the sweep's best C_v K when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_topics: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub sample_lag: usize,
    /// Keywords per topic written to `topics.csv`.
    pub top_n: usize,
}

impl Default for LdaSection {
    fn default() -> Self {
        let base = LdaConfig::new(2);
        LdaSection {
            k_min: 2,
            k_max: 20,
            num_topics: None,
            alpha: None,
            beta: base.beta,
            iterations: base.iterations,
            burn_in: base.burn_in,
            sample_lag: base.sample_lag,
            top_n: 10,
        }
    }
}

impl LdaSection {
    /// Base config; the seed for K topics is `seed + K`.
    pub fn base(&self, seed: u64) -> LdaConfig {
        LdaConfig {
            alpha: self.alpha,
            beta: self.beta,
            iterations: self.iterations,
            burn_in: self.burn_in,
            sample_lag: self.sample_lag,
            seed,
            ..LdaConfig::new(self.k_min.max(1))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_prompt_mode")]
    pub prompt_mode: PromptMode,
    #[serde(default)]
    pub temperature: f64,
    /// Defaults to the pipeline seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub few_shot_examples: Option<Vec<FewShotExample>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aliases: Option<AliasTable>,
}

fn default_prompt_mode() -> PromptMode {
    PromptMode::FewShot
}
fn default_max_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_timeout_s() -> u64 {
    60
}

impl LlmSection {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmSection {
            endpoint: endpoint.into(),
            model: model.into(),
            prompt_mode: default_prompt_mode(),
            temperature: 0.0,
            seed: None,
            max_in_flight: default_max_in_flight(),
            cache_dir: None,
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
            few_shot_examples: None,
            aliases: None,
        }
    }

    pub fn backend(&self, pipeline_seed: u64, cache_dir: Option<PathBuf>, api_key: Option<String>) -> LlmBackendConfig {
        let mut c = LlmBackendConfig::new(&self.endpoint, &self.model, self.prompt_mode);
        c.temperature = self.temperature;
        c.seed = self.seed.unwrap_or(pipeline_seed as i64);
        c.max_in_flight = self.max_in_flight;
        c.cache_dir = cache_dir;
        c.retries = self.retries;
        c.backoff_ms = self.backoff_ms;
        c.timeout_s = self.timeout_s;
        if let Some(ex) = &self.few_shot_examples {
            c.few_shot_examples = ex.clone();
        }
        if let Some(a) = &self.aliases {
            c.aliases = a.clone();
        }
        c.api_key = api_key;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    #[default]
    Lexicon,
    Llm,
}

impl LabelSource {
    pub fn stage(self) -> &'static str {
        match self {
            LabelSource::Lexicon => "sentiment-lexicon",
            LabelSource::Llm => "sentiment-llm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateSection {
    pub labels: LabelSource,
    /// `YYYY-MM-DD`; comments before it are dropped. Empty disables the floor.
    pub date_floor: String,
    /// Month bucketing offset from UTC in hours.
    pub utc_offset_hours: i32,
    pub only_topic_assigned: bool,
}

impl Default for AggregateSection {
    fn default() -> Self {
        AggregateSection {
            labels: LabelSource::Lexicon,
            date_floor: "2019-10-01".into(),
            utc_offset_hours: 0,
            only_topic_assigned: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooccurSection {
    /// Required before `cooccur` runs; there is no default threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_min_freq: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topic: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display_names: Option<PathBuf>,
}

impl PipelineConfig {
    /// Minimal config over the given inputs with every section at its default.
    pub fn new(videos: PathBuf, comments: PathBuf, out_dir: PathBuf) -> Self {
        PipelineConfig {
            seed: default_seed(),
            paths: PathsConfig {
                videos,
                comments,
                lexicon: Vec::new(),
                gold: None,
                filter_rules: None,
                out_dir,
            },
            ingest: IngestConfig::default(),
            filter: None,
            language: LanguageConfig::default(),
            tokenizer: TokenizerConfig::default(),
            lda: LdaSection::default(),
            coherence: CoherenceConfig::default(),
            sentiment: SentimentSection::default(),
            aggregate: AggregateSection::default(),
            cooccur: CooccurSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))
    }

    /// Panics on a seed above `i64::MAX`, which TOML cannot represent; the
    /// parser and the `--seed` flag both reject such seeds.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.videos);
        fix(&mut self.paths.comments);
        fix(&mut self.paths.out_dir);
        self.paths.lexicon.iter_mut().for_each(fix);
        self.paths.gold.iter_mut().for_each(fix);
        self.paths.filter_rules.iter_mut().for_each(fix);
        self.tokenizer.user_dict.iter_mut().for_each(fix);
        self.cooccur.display_names.iter_mut().for_each(fix);
        if let Some(llm) = &mut self.sentiment.llm {
            llm.cache_dir.iter_mut().for_each(fix);
        }
    }

    /// Hash of the serialized config, recorded in every manifest.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Keyword rules from the inline `[filter]` table or `paths.filter_rules`.
    pub fn filter_rules(&self) -> Result<FilterRules, Failure> {
        match (&self.filter, &self.paths.filter_rules) {
            (Some(_), Some(_)) => Err(Failure::Config(
                "give filter rules either inline or via paths.filter_rules, not both".into(),
            )),
            (Some(rules), None) => {
                rules.validate()?;
                Ok(rules.clone())
            }
            (None, Some(path)) => Ok(FilterRules::load(path)?),
            (None, None) => Err(Failure::Config("no filter rules configured".into())),
        }
    }

    /// Checks that referenced input files exist and settings are in range.
    pub fn validate(&self) -> Result<(), Failure> {
        let must_exist = |label: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Failure::Config(format!("{label} {} does not exist", p.display())))
            }
        };
        if self.ingest.endpoint.is_none() {
            must_exist("paths.videos", &self.paths.videos)?;
        }
        must_exist("paths.comments", &self.paths.comments)?;
        for p in &self.paths.lexicon {
            must_exist("lexicon", p)?;
        }
        if let Some(p) = &self.paths.gold {
            must_exist("paths.gold", p)?;
        }
        if let Some(p) = &self.paths.filter_rules {
            must_exist("paths.filter_rules", p)?;
        }
        if let Some(p) = &self.tokenizer.user_dict {
            must_exist("tokenizer.user_dict", p)?;
        }
        if let Some(p) = &self.cooccur.display_names {
            must_exist("cooccur.display_names", p)?;
        }
        if self.tokenizer.kind == TokenizerKind::Subprocess && self.tokenizer.command.is_none() {
            return Err(Failure::Config("tokenizer.kind = \"subprocess\" needs tokenizer.command".into()));
        }
        if self.lda.k_min < 1 || self.lda.k_min > self.lda.k_max {
            return Err(Failure::Config(format!(
                "lda.k_min..k_max must be a nonempty range, got {}..{}",
                self.lda.k_min, self.lda.k_max
            )));
        }
        self.lda.base(self.seed).validate()?;
        self.coherence.validate()?;
        if !(0.0..=1.0).contains(&self.language.threshold) {
            return Err(Failure::Config("language.threshold must lie in [0, 1]".into()));
        }
        if let Some(llm) = &self.sentiment.llm {
            llm.backend(self.seed, None, None).validate()?;
        }
        if self.cooccur.node_min_freq == Some(0) {
            return Err(Failure::Config("cooccur.node_min_freq must be at least 1".into()));
        }
        Ok(())
    }
}
