//! Remote backends against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use icat_core::embed::{EmbedError, Embedder, RemoteEmbedder, RemoteEmbedderConfig};
use icat_core::llm::{
    BackendKind, CompletionBackend, GenerationParams, LlmClient, LlmError, RemoteChatBackend, RemoteChatConfig,
};
use icat_core::prompt::{PromptMode, PromptRecord};

#[derive(Clone)]
enum Reply {
    Status(u16, String),
    Hang,
}

/// Serves `replies` in order (the last one repeats) and counts requests.
fn serve(replies: Vec<Reply>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let reply = replies[n.min(replies.len() - 1)].clone();
            thread::spawn(move || handle(stream, reply));
        }
    });
    (url, hits)
}

fn handle(stream: TcpStream, reply: Reply) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; length];
    let _ = reader.read_exact(&mut body);
    match reply {
        Reply::Hang => thread::sleep(Duration::from_secs(5)),
        Reply::Status(code, text) => {
            let mut s = stream;
            let _ = write!(
                s,
                "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    }
}

fn prompt(text: &str) -> PromptRecord {
    PromptRecord {
        mode: PromptMode::ZeroShotCot,
        template_version: "v1".into(),
        instructions: String::new(),
        rendered: text.into(),
        exemplar_ids: vec![],
        test_id: "t".into(),
        content_hash: icat_core::sha256_hex(text),
    }
}

fn chat_config(url: String) -> RemoteChatConfig {
    RemoteChatConfig {
        api_key_env: String::new(),
        timeout_secs: 2,
        max_retries: 2,
        initial_backoff_ms: 10,
        ..RemoteChatConfig::new(url)
    }
}

const CHAT_OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"[Final Answer]: 5"}}]}"#;

#[test]
fn embedder_timeout_is_backend_unavailable() {
    let (url, hits) = serve(vec![Reply::Hang]);
    let config = RemoteEmbedderConfig {
        timeout_secs: 0.2,
        max_retries: 1,
        initial_backoff_ms: 10,
        ..RemoteEmbedderConfig::new(url, "m")
    };
    let err = RemoteEmbedder::new(config, None).embed_batch(&["a".into()]).unwrap_err();
    assert!(matches!(err, EmbedError::BackendUnavailable { attempts: 2, .. }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn embedder_parses_response() {
    let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
    let (url, _) = serve(vec![Reply::Status(200, body.into())]);
    let config = RemoteEmbedderConfig {
        api_key_env: "ICAT_TEST_UNSET_KEY".into(),
        ..RemoteEmbedderConfig::new(url, "m")
    };
    let v = RemoteEmbedder::new(config, None)
        .embed_batch(&["a".into(), "b".into()])
        .unwrap();
    assert_eq!(v[0].values(), &[1.0, 0.0]);
    assert_eq!(v[1].values(), &[0.0, 1.0]);
}

#[test]
fn chat_retries_transient_errors() {
    let (url, hits) = serve(vec![
        Reply::Status(503, "{}".into()),
        Reply::Status(429, "{}".into()),
        Reply::Status(200, CHAT_OK.into()),
    ]);
    let backend = RemoteChatBackend::new(chat_config(url), None);
    let text = backend.complete(&prompt("q"), &GenerationParams::default()).unwrap();
    assert_eq!(text, "[Final Answer]: 5");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn chat_client_errors_are_not_retried() {
    let (url, hits) = serve(vec![Reply::Status(400, r#"{"error":"bad"}"#.into())]);
    let backend = RemoteChatBackend::new(chat_config(url), None);
    let err = backend.complete(&prompt("q"), &GenerationParams::default()).unwrap_err();
    assert!(matches!(err, LlmError::Backend(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn chat_gives_up_after_retries() {
    let (url, hits) = serve(vec![Reply::Status(500, "{}".into())]);
    let backend = RemoteChatBackend::new(chat_config(url), None);
    let err = backend.complete(&prompt("q"), &GenerationParams::default()).unwrap_err();
    assert!(matches!(err, LlmError::BackendUnavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn chat_missing_key_fails_before_network() {
    let (url, hits) = serve(vec![Reply::Status(200, CHAT_OK.into())]);
    let config = RemoteChatConfig {
        api_key_env: "ICAT_TEST_SURELY_UNSET".into(),
        ..chat_config(url)
    };
    let err = RemoteChatBackend::new(config, None)
        .complete(&prompt("q"), &GenerationParams::default())
        .unwrap_err();
    assert!(matches!(err, LlmError::MissingCredentials(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
}

#[test]
fn spend_cap_and_cache_limit_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = serve(vec![Reply::Status(200, CHAT_OK.into())]);
    let client = LlmClient::new(Arc::new(RemoteChatBackend::new(chat_config(url), None)), 1)
        .with_cache_dir(dir.path())
        .unwrap();
    let params = GenerationParams::default();
    assert_eq!(client.complete(&prompt("a"), &params).unwrap().backend, BackendKind::Remote);
    assert_eq!(client.complete(&prompt("a"), &params).unwrap().backend, BackendKind::Cache);
    let err = client.complete(&prompt("b"), &params).unwrap_err();
    assert!(matches!(err, LlmError::BudgetExceeded { cap: 1 }));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
