use std::time::Duration;

use opinion_core::corpus::FetchClient;
use opinion_core::stub::{StubResponse, StubServer};
use serde_json::{json, Value};

fn item(id: &str) -> Value {
    json!({
        "id": {"kind": "youtube#video", "videoId": id},
        "snippet": {"channelTitle": "ch", "title": format!("原発 {id}"),
                    "description": "d", "publishedAt": "2023-08-24T03:00:00Z"}
    })
}

#[test]
fn single_page() {
    let stub = StubServer::search(vec![vec![item("a"), item("b")]]).unwrap();
    let client = FetchClient::new(format!("{}/search", stub.url()), "key").unwrap();
    let out = client.fetch_videos("原発", 5).unwrap();
    let ids: Vec<&str> = out.videos.iter().map(|v| v.video_id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(stub.hits(), 1);
    assert_eq!(stub.requests()[0].query("q").as_deref(), Some("原発"));
}

#[test]
fn follows_page_tokens_up_to_limit() {
    let stub = StubServer::search(vec![vec![item("a"), item("b")], vec![item("c")], vec![item("d")]]).unwrap();
    let client = FetchClient::new(format!("{}/search", stub.url()), "key").unwrap();
    let out = client.fetch_videos("q", 2).unwrap();
    assert_eq!(out.videos.len(), 3);
    assert_eq!(out.requests, 2);
    assert_eq!(stub.requests()[1].query("pageToken").as_deref(), Some("p1"));
}

#[test]
fn malformed_items_are_skipped() {
    let stub = StubServer::search(vec![vec![item("a"), json!({"id": "x"})]]).unwrap();
    let client = FetchClient::new(format!("{}/search", stub.url()), "key").unwrap();
    let out = client.fetch_videos("q", 1).unwrap();
    assert_eq!(out.videos.len(), 1);
    assert_eq!(out.skipped_items.len(), 1);
}

#[test]
fn retries_then_succeeds() {
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let stub = StubServer::start(move |_| {
        if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) < 2 {
            StubResponse::status(503)
        } else {
            StubResponse::json(&json!({"items": [item("a")]}))
        }
    })
    .unwrap();
    let client = FetchClient::new(stub.url(), "key").unwrap().with_backoff(Duration::from_millis(1));
    let out = client.fetch_videos("q", 1).unwrap();
    assert_eq!(out.videos.len(), 1);
    assert_eq!(stub.hits(), 3);
}

#[test]
fn persistent_failure_is_an_error() {
    let stub = StubServer::start(|_| StubResponse::status(500)).unwrap();
    let client = FetchClient::new(stub.url(), "key").unwrap().with_backoff(Duration::from_millis(1));
    assert!(matches!(client.fetch_videos("q", 1), Err(opinion_core::Error::Http { .. })));
    assert_eq!(stub.hits(), 3);
}
