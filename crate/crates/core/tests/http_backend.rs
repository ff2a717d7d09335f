#![cfg(feature = "http")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ragforge_core::backend::{
    BackendError, DecodingOptions, Embedder, GenRequest, HttpBackend, HttpConfig, ModelBackend,
    RetryPolicy,
};
use serde_json::{json, Value};

struct Reply {
    status: u16,
    body: String,
    delay_ms: u64,
}

fn ok(body: Value) -> Reply {
    Reply {
        status: 200,
        body: body.to_string(),
        delay_ms: 0,
    }
}

fn status(code: u16) -> Reply {
    Reply {
        status: code,
        body: "{\"error\":\"scripted\"}".into(),
        delay_ms: 0,
    }
}

type Seen = Arc<Mutex<Vec<(String, Value)>>>;

/// Serves the scripted replies in order, one per connection, and records
/// each request's path and JSON body.
fn serve(replies: Vec<Reply>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen: Seen = Arc::default();
    let log = seen.clone();
    thread::spawn(move || {
        for reply in replies {
            let Ok((mut stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("")
                .to_string();
            let mut length = 0;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                if let Some((name, value)) = header.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            log.lock()
                .unwrap()
                .push((path, serde_json::from_slice(&body).unwrap_or(Value::Null)));
            thread::sleep(Duration::from_millis(reply.delay_ms));
            let _ = write!(
                stream,
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            );
        }
    });
    (format!("http://{addr}"), seen)
}

fn backend(base_url: &str, timeout_secs: f64) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        base_url: base_url.to_string(),
        generation_model: "qwen2:7b".into(),
        embedding_model: "nomic-embed-text".into(),
        rerank_url: None,
        timeout_secs,
        retry: RetryPolicy {
            max_attempts: 3,
            backoff_ms: 1,
        },
    })
}

#[test]
fn generate_sends_ollama_request() {
    let (url, seen) = serve(vec![ok(json!({
        "response": "{\"relevant\": true}",
        "prompt_eval_count": 12,
        "eval_count": 4,
    }))]);
    let b = backend(&format!("{url}/"), 5.0);
    let req = GenRequest::json("grade this").with_options(DecodingOptions {
        temperature: 0.0,
        seed: Some(7),
    });
    let resp = b.generate(&req).unwrap();
    assert_eq!(resp.json.unwrap()["relevant"], true);
    assert_eq!(
        (resp.prompt_tokens, resp.completion_tokens, resp.attempts),
        (Some(12), Some(4), 1)
    );
    let (path, body) = seen.lock().unwrap()[0].clone();
    assert_eq!(path, "/api/generate");
    assert_eq!(body["model"], "qwen2:7b");
    assert_eq!(body["format"], "json");
    assert_eq!(body["stream"], false);
    assert_eq!(body["options"]["seed"], 7);
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![
        status(503),
        status(500),
        ok(json!({"response": "fine"})),
    ]);
    let resp = backend(&url, 5.0)
        .generate(&GenRequest::text("hi"))
        .unwrap();
    assert_eq!(resp.text, "fine");
    assert_eq!(resp.attempts, 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![status(404), ok(json!({"response": "unused"}))]);
    let err = backend(&url, 5.0)
        .generate(&GenRequest::text("hi"))
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 404, .. }),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn slow_server_times_out() {
    let slow = || Reply {
        status: 200,
        body: json!({"response": "late"}).to_string(),
        delay_ms: 1500,
    };
    let (url, _seen) = serve(vec![slow(), slow(), slow()]);
    let err = backend(&url, 0.2)
        .generate(&GenRequest::text("hi"))
        .unwrap_err();
    assert_eq!(err, BackendError::Timeout);
}

#[test]
fn embeddings_keep_their_dimension() {
    let (url, seen) = serve(vec![
        ok(json!({"embedding": [0.1, 0.2, 0.3]})),
        ok(json!({"embedding": [0.1, 0.2]})),
    ]);
    let b = backend(&url, 5.0);
    assert_eq!(b.embed("abs").unwrap().dim(), 3);
    assert_eq!(
        b.embed("pump").unwrap_err(),
        BackendError::DimensionDrift {
            expected: 3,
            got: 2
        }
    );
    let (path, body) = seen.lock().unwrap()[0].clone();
    assert_eq!(path, "/api/embeddings");
    assert_eq!(body["model"], "nomic-embed-text");
    assert_eq!(body["prompt"], "abs");
}

#[test]
fn malformed_replies_are_protocol_errors() {
    let (url, _seen) = serve(vec![ok(json!({"text": "wrong field"}))]);
    let err = backend(&url, 5.0)
        .generate(&GenRequest::text("hi"))
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol { .. }), "{err:?}");
}

#[test]
fn reranker_needs_a_url() {
    let b = backend("http://127.0.0.1:9", 1.0);
    assert!(!b.has_reranker());
    assert_eq!(
        b.rerank_score("q", "d").unwrap_err(),
        BackendError::RerankerUnavailable
    );
}

#[test]
fn unreachable_server_is_a_transport_error() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = backend(&format!("http://127.0.0.1:{port}"), 1.0)
        .generate(&GenRequest::text("hi"))
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
}
