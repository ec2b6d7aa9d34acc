use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::{
    build_prompt, default_few_shot_examples, parse_llm_response, AliasTable, FewShotExample,
    PromptMode, PromptTemplate,
};
use super::{LabeledComment, Method, SentimentLabel};
use crate::error::{Error, Result};

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

/// Chat-completion backend. The endpoint is a base URL; requests go to
/// `<endpoint>/v1/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmBackendConfig {
    pub endpoint: String,
    pub model: String,
    pub prompt_mode: PromptMode,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: i64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_few_shot_examples")]
    pub few_shot_examples: Vec<FewShotExample>,
    #[serde(default)]
    pub aliases: AliasTable,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl LlmBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, mode: PromptMode) -> Self {
        LlmBackendConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            prompt_mode: mode,
            temperature: 0.0,
            seed: 0,
            max_in_flight: default_max_in_flight(),
            cache_dir: None,
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
            few_shot_examples: default_few_shot_examples(),
            aliases: AliasTable::default(),
            api_key: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature != 0.0 {
            return Err(Error::Config(format!(
                "temperature must be 0, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.endpoint.trim().is_empty() || self.model.trim().is_empty() {
            return Err(Error::Config("LLM endpoint and model are required".into()));
        }
        self.template().map(|_| ())
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        PromptTemplate::new(self.prompt_mode, &self.few_shot_examples)
    }

    pub fn model_tag(&self) -> String {
        format!("{}:{}", self.model, self.prompt_mode.as_str())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub seed: i64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmFailure {
    pub comment_id: String,
    pub reason: String,
}

/// Labels in input order; failed comments are absent from `labels`.
#[derive(Debug, Clone, Default)]
pub struct LlmRun {
    pub labels: Vec<LabeledComment>,
    pub failures: Vec<LlmFailure>,
    pub empty: Vec<String>,
    pub requests: usize,
    pub cache_hits: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    prompt_mode: PromptMode,
    template_sha256: String,
    content: String,
}

struct Client<'a> {
    config: &'a LlmBackendConfig,
    template: PromptTemplate,
    template_hash: String,
    agent: ureq::Agent,
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

enum Outcome {
    Label(SentimentLabel),
    Empty,
    Failed(String),
}

impl Client<'_> {
    fn cache_path(&self, comment: &str) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let comment_hash = hex::encode(Sha256::digest(comment.as_bytes()));
        let mut h = Sha256::new();
        for part in [
            self.config.model.as_str(),
            self.config.prompt_mode.as_str(),
            self.template_hash.as_str(),
            comment_hash.as_str(),
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn read_cache(&self, path: &Path) -> Option<String> {
        let text = std::fs::read_to_string(path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(e) => Some(e.content),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    fn write_cache(&self, path: &Path, content: &str) -> Result<()> {
        let entry = CacheEntry {
            model: self.config.model.clone(),
            prompt_mode: self.config.prompt_mode,
            template_sha256: self.template_hash.clone(),
            content: content.to_owned(),
        };
        let body = serde_json::to_vec(&entry).map_err(|e| Error::Data(e.to_string()))?;
        let tmp = path.with_extension(format!("tmp{:?}", std::thread::current().id()).replace(['(', ')'], ""));
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    fn post(&self, request: &ChatRequest) -> Result<String> {
        let url = self.config.completions_url();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let http = |message: String| Error::Http {
            url: url.clone(),
            message,
        };
        let resp = req.send_json(request).map_err(|e| http(e.to_string()))?;
        let body: ChatResponse = resp.into_json().map_err(|e| http(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| http("response has no choices".into()))
    }

    fn classify(&self, comment: &str) -> Outcome {
        let Some(prompt) = build_prompt(comment, &self.template) else {
            return Outcome::Empty;
        };
        let cache = self.cache_path(comment);
        if let Some(raw) = cache.as_deref().and_then(|p| self.read_cache(p)) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return match parse_llm_response(&raw, &self.config.aliases) {
                Ok(l) => Outcome::Label(l),
                Err(e) => Outcome::Failed(e.to_string()),
            };
        }
        let request = ChatRequest {
            model: self.config.model.clone(),
            temperature: 0.0,
            seed: self.config.seed,
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: prompt.system,
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.user,
                },
            ],
        };
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let parsed = self.post(&request).and_then(|raw| {
                let label = parse_llm_response(&raw, &self.config.aliases)?;
                Ok((raw, label))
            });
            match parsed {
                Ok((raw, label)) => {
                    if let Some(p) = &cache {
                        if let Err(e) = self.write_cache(p, &raw) {
                            log::warn!("{e}");
                        }
                    }
                    return Outcome::Label(label);
                }
                Err(e) => {
                    log::debug!("attempt {} failed: {e}", attempt + 1);
                    last_err = e.to_string();
                }
            }
        }
        Outcome::Failed(last_err)
    }
}

/// Labels each `(comment_id, text)` with at most `max_in_flight` concurrent
/// requests. Blank comments are NEUTRAL and listed in `empty`; comments whose
/// requests or responses keep failing are listed in `failures`.
pub fn llm_classify(comments: &[(String, String)], config: &LlmBackendConfig) -> Result<LlmRun> {
    config.validate()?;
    if let Some(dir) = &config.cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let template = config.template()?;
    let client = Client {
        config,
        template_hash: template.hash(),
        template,
        agent: ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_s))
            .build(),
        requests: AtomicUsize::new(0),
        cache_hits: AtomicUsize::new(0),
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Outcome>>> =
        Mutex::new((0..comments.len()).map(|_| None).collect());
    let workers = config.max_in_flight.min(comments.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, text)) = comments.get(i) else {
                    break;
                };
                let outcome = client.classify(text);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let tag = config.model_tag();
    let mut run = LlmRun::default();
    for ((id, _), outcome) in comments.iter().zip(results.into_inner().unwrap()) {
        let label = match outcome.expect("every comment is processed") {
            Outcome::Label(l) => l,
            Outcome::Empty => {
                run.empty.push(id.clone());
                SentimentLabel::Neutral
            }
            Outcome::Failed(reason) => {
                log::warn!("{id}: {reason}");
                run.failures.push(LlmFailure {
                    comment_id: id.clone(),
                    reason,
                });
                continue;
            }
        };
        run.labels.push(LabeledComment {
            comment_id: id.clone(),
            label,
            method: Method::Llm,
            score: None,
            model_tag: tag.clone(),
        });
    }
    run.requests = client.requests.into_inner();
    run.cache_hits = client.cache_hits.into_inner();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonzero_temperature_rejected() {
        let mut c = LlmBackendConfig::new("http://localhost:1", "m", PromptMode::ZeroShot);
        c.validate().unwrap();
        c.temperature = 0.2;
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn few_shot_config_needs_valid_examples() {
        let mut c = LlmBackendConfig::new("http://localhost:1", "m", PromptMode::FewShot);
        c.few_shot_examples.pop();
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn url_and_tag() {
        let c = LlmBackendConfig::new("http://h:8/", "gpt-4o", PromptMode::FewShot);
        assert_eq!(c.completions_url(), "http://h:8/v1/chat/completions");
        assert_eq!(c.model_tag(), "gpt-4o:few_shot");
    }

    #[test]
    fn unreachable_endpoint_marks_failures_and_keeps_empty() {
        let mut c = LlmBackendConfig::new("http://127.0.0.1:9", "m", PromptMode::ZeroShot);
        c.retries = 1;
        c.backoff_ms = 1;
        c.timeout_s = 2;
        let comments = vec![("a".to_string(), "良い".to_string()), ("b".to_string(), "  ".to_string())];
        let run = llm_classify(&comments, &c).unwrap();
        assert_eq!(run.requests, 2);
        assert_eq!(run.failures.len(), 1);
        assert_eq!(run.failures[0].comment_id, "a");
        assert_eq!(run.empty, ["b"]);
        assert_eq!(run.labels.len(), 1);
        assert_eq!(run.labels[0].label, SentimentLabel::Neutral);
    }
}
