use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::VideoDoc;
use crate::error::{Error, Result};
use crate::time::parse_timestamp;

/// Minimal client for a YouTube-style paged search endpoint.
///
/// Each request is `GET endpoint?q=..&key=..[&pageToken=..]`; the response
/// carries `items[]` and an optional `nextPageToken`. Items are read in the
/// `{"id": {"videoId"}, "snippet": {"channelTitle", "title", "description",
/// "publishedAt"}}` shape; `id` may also be a plain string.
#[derive(Debug, Clone)]
pub struct FetchClient {
    pub endpoint: String,
    api_key: String,
    pub attempts: u32,
    pub backoff: Duration,
    agent: ureq::Agent,
}

#[derive(Debug, Clone, Default)]
pub struct FetchOutcome {
    pub videos: Vec<VideoDoc>,
    pub skipped_items: Vec<String>,
    pub requests: usize,
}

impl FetchClient {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Result<Self> {
        let api_key = api_key.into();
        if api_key.is_empty() {
            return Err(Error::Config("API key is empty".into()));
        }
        Ok(FetchClient {
            endpoint: endpoint.into(),
            api_key,
            attempts: 3,
            backoff: Duration::from_millis(500),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn fetch_videos(&self, query: &str, max_pages: usize) -> Result<FetchOutcome> {
        let mut out = FetchOutcome::default();
        let mut token: Option<String> = None;
        for _ in 0..max_pages {
            let page = self.get_page(query, token.as_deref())?;
            out.requests += 1;
            let items = page
                .get("items")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            for (i, item) in items.iter().enumerate() {
                match map_item(item) {
                    Ok(v) => out.videos.push(v),
                    Err(why) => {
                        log::warn!("skipping search item {i}: {why}");
                        out.skipped_items.push(why);
                    }
                }
            }
            token = page
                .get("nextPageToken")
                .and_then(Value::as_str)
                .filter(|t| !t.is_empty())
                .map(str::to_owned);
            if token.is_none() {
                break;
            }
        }
        Ok(out)
    }

    fn get_page(&self, query: &str, token: Option<&str>) -> Result<Value> {
        let mut last_err = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self
                .agent
                .get(&self.endpoint)
                .query("q", query)
                .query("key", &self.api_key);
            if let Some(t) = token {
                req = req.query("pageToken", t);
            }
            match req.call() {
                Ok(resp) => {
                    return resp.into_json::<Value>().map_err(|e| Error::Http {
                        url: self.endpoint.clone(),
                        message: format!("invalid JSON body: {e}"),
                    })
                }
                Err(e) => {
                    last_err = e.to_string();
                    log::warn!("fetch attempt {} failed: {last_err}", attempt + 1);
                }
            }
        }
        Err(Error::Http {
            url: self.endpoint.clone(),
            message: format!("{} attempts failed; last error: {last_err}", self.attempts),
        })
    }
}

fn map_item(item: &Value) -> std::result::Result<VideoDoc, String> {
    let id = match item.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(obj) => obj
            .get("videoId")
            .and_then(Value::as_str)
            .ok_or("missing id.videoId")?
            .to_owned(),
        None => return Err("missing id".into()),
    };
    if id.is_empty() {
        return Err("empty video id".into());
    }
    let snippet = item.get("snippet").ok_or("missing snippet")?;
    let field = |name: &str| -> std::result::Result<String, String> {
        snippet
            .get(name)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| format!("{id}: missing snippet.{name}"))
    };
    let published_at = parse_timestamp(&field("publishedAt")?).map_err(|e| e.to_string())?;
    Ok(VideoDoc {
        channel: field("channelTitle")?,
        title: field("title")?,
        description: field("description").unwrap_or_default(),
        transcript: String::new(),
        published_at,
        video_id: id,
    })
}
