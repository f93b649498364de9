//! HTTP backend against an in-process mock endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use careline_core::agent::PrimaryBackend;
use careline_core::config::{BackendKind, Config};
use careline_core::service::{parse_agent_output, ServiceBackend, ServiceConfig};
use careline_core::BackendError;

type Handler = dyn Fn(usize, &Value) -> (u16, String, Duration) + Send + Sync;

struct Mock {
    endpoint: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
}

/// Serves each request with `handler(request_number, body)`.
fn mock(handler: Box<Handler>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/v1/evaluate", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    let handler: Arc<Handler> = Arc::from(handler);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let (h, b, handler) = (h.clone(), b.clone(), handler.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let body: Value = serde_json::from_slice(&body).unwrap();
                let n = h.fetch_add(1, Ordering::SeqCst);
                b.lock().unwrap().push(body.clone());
                let (status, reply, delay) = handler(n, &body);
                std::thread::sleep(delay);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            });
        }
    });
    Mock { endpoint, hits, bodies }
}

fn backend(m: &Mock, retries: u32, timeout_ms: u64) -> ServiceBackend {
    ServiceBackend::new(ServiceConfig {
        endpoint: m.endpoint.clone(),
        timeout_ms,
        retries,
    })
}

const PRIMARY_OK: &str = r#"{"response": "Hello, may I speak with Mary Adams?", "consumed_task_ids": [1]}"#;

#[test]
fn primary_reply_is_parsed_and_request_is_tagged() {
    let m = mock(Box::new(|_, _| (200, PRIMARY_OK.into(), Duration::ZERO)));
    let r = backend(&m, 0, 2000).respond("PROMPT").unwrap();
    assert_eq!(r.response, "Hello, may I speak with Mary Adams?");
    assert_eq!(r.consumed_task_ids.len(), 1);
    let sent = m.bodies.lock().unwrap()[0].clone();
    assert_eq!(sent, json!({"kind": "primary", "agent": "primary", "prompt": "PROMPT"}));
}

#[test]
fn server_errors_are_retried_client_errors_are_not() {
    let m = mock(Box::new(|n, _| if n == 0 { (503, "{}".into(), Duration::ZERO) } else { (200, PRIMARY_OK.into(), Duration::ZERO) }));
    assert!(backend(&m, 1, 2000).respond("p").is_ok());
    assert_eq!(m.hits.load(Ordering::SeqCst), 2);

    let m = mock(Box::new(|_, _| (400, "{}".into(), Duration::ZERO)));
    let err = backend(&m, 3, 2000).respond("p").unwrap_err();
    assert!(matches!(err, BackendError::Transport(ref s) if s.contains("400")), "{err:?}");
    assert_eq!(m.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn slow_endpoint_times_out() {
    let m = mock(Box::new(|_, _| (200, PRIMARY_OK.into(), Duration::from_millis(800))));
    let err = backend(&m, 0, 150).respond("p").unwrap_err();
    assert!(matches!(err, BackendError::Timeout(150) | BackendError::Transport(_)), "{err:?}");
}

#[test]
fn malformed_replies_are_rejected() {
    let m = mock(Box::new(|_, _| (200, "not json".into(), Duration::ZERO)));
    assert!(matches!(backend(&m, 0, 2000).respond("p"), Err(BackendError::Malformed(_))));
    assert!(parse_agent_output(r#"{"agent_id": "labs", "bogus": 1}"#).is_err());
    assert!(parse_agent_output(r#"{"agent_id": "labs", "fields": {}}"#).is_ok());
}

#[test]
fn service_mode_call_runs_and_survives_a_broken_agent() {
    let m = mock(Box::new(|_, body| {
        if body["kind"] == "primary" {
            return (200, PRIMARY_OK.into(), Duration::ZERO);
        }
        let agent = body["agent"].as_str().unwrap().to_string();
        if agent == "checklist" {
            return (200, "{\"agent_id\": \"labs\"}".into(), Duration::ZERO);
        }
        (200, json!({"agent_id": agent}).to_string(), Duration::ZERO)
    }));
    let mut c = Config::for_fixtures(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"), "mary_adams");
    c.backend = BackendKind::Service;
    c.service = ServiceConfig {
        endpoint: m.endpoint.clone(),
        timeout_ms: 2000,
        retries: 0,
    };
    let mut orch = c.build_orchestrator().unwrap();
    let first = orch.start().unwrap();
    assert_eq!(first, "Hello, may I speak with Mary Adams?");
    let out = orch.step("Yes, this is Mary. Where should I eat tonight?").unwrap();
    assert_eq!(out.response, "Hello, may I speak with Mary Adams?");
    let transcript = orch.transcript().to_jsonl();
    assert!(transcript.contains("\"event\":\"backend_failure\""), "{transcript}");
    let kinds: Vec<String> = m.bodies.lock().unwrap().iter().map(|b| b["agent"].as_str().unwrap().to_string()).collect();
    assert!(kinds.iter().any(|k| k == "privacy"));
    assert!(kinds.iter().any(|k| k == "primary"));
}
