//! In-process HTTP stub speaking the chat-completion and paged search
//! protocols, for tests and offline pipeline runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::sentiment::ChatRequest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    /// Path and query string.
    pub url: String,
    pub body: String,
}

impl RecordedRequest {
    pub fn path(&self) -> &str {
        self.url.split('?').next().unwrap_or("")
    }

    /// First value of a query parameter, percent-decoded.
    pub fn query(&self, name: &str) -> Option<String> {
        let q = self.url.split_once('?')?.1;
        q.split('&').find_map(|pair| {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            (k == name).then(|| percent_decode(v))
        })
    }
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' if i + 2 < bytes.len() => {
                match std::str::from_utf8(&bytes[i + 1..i + 3])
                    .ok()
                    .and_then(|h| u8::from_str_radix(h, 16).ok())
                {
                    Some(b) => {
                        out.push(b);
                        i += 3;
                        continue;
                    }
                    None => out.push(b'%'),
                }
            }
            b'+' => out.push(b' '),
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    pub fn json(body: &Value) -> Self {
        StubResponse {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        StubResponse {
            status,
            body: String::new(),
        }
    }
}

type Handler = dyn Fn(&RecordedRequest) -> StubResponse + Send + Sync;

/// Serves requests on `127.0.0.1` until dropped.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    addr: String,
    hits: Arc<AtomicUsize>,
    log: Arc<Mutex<Vec<RecordedRequest>>>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Result<Self>
    where
        F: Fn(&RecordedRequest) -> StubResponse + Send + Sync + 'static,
    {
        Self::bind("127.0.0.1:0", handler)
    }

    pub fn bind<F>(addr: &str, handler: F) -> Result<Self>
    where
        F: Fn(&RecordedRequest) -> StubResponse + Send + Sync + 'static,
    {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| Error::Config(format!("cannot bind stub server on {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .map(|a| a.to_string())
            .ok_or_else(|| Error::Config("stub server has no IP address".into()))?;
        let server = Arc::new(server);
        let hits = Arc::new(AtomicUsize::new(0));
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Box<Handler> = Box::new(handler);
        let worker = {
            let (server, hits, log) = (server.clone(), hits.clone(), log.clone());
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let mut body = String::new();
                    let _ = req.as_reader().read_to_string(&mut body);
                    let recorded = RecordedRequest {
                        method: req.method().to_string(),
                        url: req.url().to_owned(),
                        body,
                    };
                    hits.fetch_add(1, Ordering::SeqCst);
                    let resp = handler(&recorded);
                    log.lock().unwrap().push(recorded);
                    let header =
                        tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                    let _ = req.respond(
                        tiny_http::Response::from_string(resp.body)
                            .with_status_code(resp.status)
                            .with_header(header),
                    );
                }
            })
        };
        Ok(StubServer {
            server,
            addr,
            hits,
            log,
            worker: Some(worker),
        })
    }

    /// Chat-completion stub: `responder` maps each parsed request to the
    /// assistant content, or `None` for a 500 response.
    pub fn chat<F>(responder: F) -> Result<Self>
    where
        F: Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    {
        Self::start(move |req| chat_reply(req, &responder))
    }

    /// Paged search stub serving `pages[i]` as page `i`. Page `i > 0` is
    /// requested with `pageToken=p<i>`; every page but the last advertises
    /// the next token.
    pub fn search(pages: Vec<Vec<Value>>) -> Result<Self> {
        Self::start(move |req| search_reply(req, &pages))
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().unwrap().clone()
    }

    /// Blocks serving requests until the process exits.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

pub fn chat_reply<F>(req: &RecordedRequest, responder: &F) -> StubResponse
where
    F: Fn(&ChatRequest) -> Option<String>,
{
    if req.method != "POST" || req.path() != "/v1/chat/completions" {
        return StubResponse::status(404);
    }
    let Ok(parsed) = serde_json::from_str::<ChatRequest>(&req.body) else {
        return StubResponse::status(400);
    };
    match responder(&parsed) {
        Some(content) => StubResponse::json(&json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
        })),
        None => StubResponse::status(500),
    }
}

pub fn search_reply(req: &RecordedRequest, pages: &[Vec<Value>]) -> StubResponse {
    if req.method != "GET" {
        return StubResponse::status(405);
    }
    if req.query("key").is_none_or(|k| k.is_empty()) {
        return StubResponse::status(403);
    }
    let index = match req.query("pageToken") {
        None => 0,
        Some(t) => match t.strip_prefix('p').and_then(|n| n.parse::<usize>().ok()) {
            Some(i) => i,
            None => return StubResponse::status(400),
        },
    };
    let Some(items) = pages.get(index) else {
        return StubResponse::status(400);
    };
    let mut body = json!({ "items": items });
    if index + 1 < pages.len() {
        body["nextPageToken"] = json!(format!("p{}", index + 1));
    }
    StubResponse::json(&body)
}
