//! HTTP clients against a local stand-in server.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use serde_json::{json, Value};

use styleviz::providers::{HttpImageProvider, HttpLlmProvider};
use styleviz_core::generation::{ImageProvider, ImageRequest};
use styleviz_core::synthesis::{ChatMessage, CompletionRequest, LlmProvider};

#[derive(Clone, Default)]
struct Seen(Arc<Mutex<Vec<(HeaderMap, Value)>>>);

async fn messages(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) -> impl IntoResponse {
    seen.0.lock().unwrap().push((headers, body.clone()));
    match body["model"].as_str() {
        Some("busy") => (StatusCode::TOO_MANY_REQUESTS, "slow down").into_response(),
        Some("bad") => (StatusCode::BAD_REQUEST, "bad request").into_response(),
        _ => Json(json!({
            "content": [
                {"type": "text", "text": "{\"prompts\": "},
                {"type": "tool_use", "id": "x"},
                {"type": "text", "text": "[]}"}
            ]
        }))
        .into_response(),
    }
}

async fn image(State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>) -> impl IntoResponse {
    seen.0.lock().unwrap().push((headers, body.clone()));
    match body["model"].as_str() {
        Some("raw") => ([("content-type", "image/png")], b"\x89PNGraw".to_vec()).into_response(),
        Some("b64") => {
            let b = base64::engine::general_purpose::STANDARD.encode(b"\x89PNGb64");
            Json(json!({ "images": [b] })).into_response()
        }
        _ => (StatusCode::SERVICE_UNAVAILABLE, "warming up").into_response(),
    }
}

fn spawn_server(seen: Seen) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/messages", post(messages))
                .route("/generate", post(image))
                .with_state(seen);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv_timeout(Duration::from_secs(10)).unwrap()
}

fn request() -> ImageRequest {
    ImageRequest {
        author_id: "Monsoon77".into(),
        prompt_index: 1,
        core_prompt: "core".into(),
        final_prompt: "core, 8k".into(),
        negative_prompt: "lowres, bad anatomy, blurry".into(),
        seed: 42,
        width: 1024,
        height: 1024,
        extra: BTreeMap::from([("steps".to_owned(), "28".to_owned())]),
    }
}

#[test]
fn llm_client_sends_conversation_and_joins_text_blocks() {
    let seen = Seen::default();
    let addr = spawn_server(seen.clone());
    let llm = HttpLlmProvider::new(format!("http://{addr}/v1/messages"), "model-x", "k-123");
    let messages = [
        ChatMessage::user("Author writing style summary:\n\nPlot: x"),
        ChatMessage::assistant("oops"),
        ChatMessage::user("[error:format] again"),
    ];
    let params = BTreeMap::from([("temperature".to_owned(), "0.7".to_owned())]);
    let text = llm
        .complete(&CompletionRequest {
            system: "sys",
            messages: &messages,
            params: &params,
        })
        .unwrap();
    assert_eq!(text, "{\"prompts\": []}");
    let (headers, body) = seen.0.lock().unwrap()[0].clone();
    assert_eq!(headers["x-api-key"], "k-123");
    assert!(headers.contains_key("anthropic-version"));
    assert_eq!(body["system"], "sys");
    assert_eq!(body["temperature"], json!(0.7));
    assert_eq!(body["messages"][1]["role"], "assistant");
    assert_eq!(body["messages"].as_array().unwrap().len(), 3);
}

#[test]
fn llm_client_classifies_failures() {
    let addr = spawn_server(Seen::default());
    let params = BTreeMap::new();
    let req = CompletionRequest {
        system: "",
        messages: &[],
        params: &params,
    };
    let busy = HttpLlmProvider::new(format!("http://{addr}/v1/messages"), "busy", "k");
    assert!(busy.complete(&req).unwrap_err().retryable);
    let bad = HttpLlmProvider::new(format!("http://{addr}/v1/messages"), "bad", "k");
    assert!(!bad.complete(&req).unwrap_err().retryable);
    let down = HttpLlmProvider::new("http://127.0.0.1:9/v1/messages", "m", "k")
        .with_timeout(Duration::from_secs(5));
    assert!(down.complete(&req).unwrap_err().retryable);
}

#[test]
fn image_client_accepts_raw_and_base64() {
    let seen = Seen::default();
    let addr = spawn_server(seen.clone());
    let url = format!("http://{addr}/generate");
    let raw = HttpImageProvider::new(&url, "raw", "img-key");
    assert_eq!(raw.generate(&request()).unwrap(), b"\x89PNGraw");
    let b64 = HttpImageProvider::new(&url, "b64", "img-key");
    assert_eq!(b64.generate(&request()).unwrap(), b"\x89PNGb64");
    let down = HttpImageProvider::new(&url, "other", "img-key");
    assert!(down.generate(&request()).unwrap_err().retryable);

    let log = seen.0.lock().unwrap();
    let (headers, body) = &log[0];
    assert_eq!(headers["authorization"], "Bearer img-key");
    assert_eq!(body["prompt"], "core, 8k");
    assert_eq!(body["negative_prompt"], "lowres, bad anatomy, blurry");
    assert_eq!(body["seed"], 42);
    assert_eq!(body["steps"], 28);
}

#[test]
fn image_client_omits_negative_prompt_when_unsupported() {
    let seen = Seen::default();
    let addr = spawn_server(seen.clone());
    let mut p = HttpImageProvider::new(format!("http://{addr}/generate"), "raw", "k");
    p.negative_prompt = false;
    p.generate(&request()).unwrap();
    assert!(!p.supports_negative_prompt());
    assert!(seen.0.lock().unwrap()[0].1.get("negative_prompt").is_none());
}
