//! In-process HTTP stubs shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use serde_json::Value;

use docbench::config::Config;
use docbench::engine::Engine;

/// Serves `app` on an ephemeral loopback port.
pub async fn spawn(app: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
            .await
            .unwrap();
    });
    addr
}

/// A REST document store: `PUT /docs/{key}` (with `If-Match: *` meaning
/// "must exist"), `GET /docs/{key}`, `HEAD /docs`.
#[derive(Default)]
pub struct StubStore {
    docs: Mutex<HashMap<String, Bytes>>,
    pub delay_ms: AtomicU64,
    pub requests: AtomicUsize,
    pub last_auth: Mutex<Option<String>>,
    pub cache_hit_reply: Mutex<bool>,
}

impl StubStore {
    async fn enter(&self, headers: &HeaderMap) {
        self.requests.fetch_add(1, Ordering::SeqCst);
        *self.last_auth.lock().unwrap() = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let delay = self.delay_ms.load(Ordering::SeqCst);
        if delay > 0 {
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
    }
}

async fn stub_put(
    State(s): State<Arc<StubStore>>,
    UrlPath(key): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> impl IntoResponse {
    s.enter(&headers).await;
    let mut docs = s.docs.lock().unwrap();
    if headers.contains_key("if-match") && !docs.contains_key(&key) {
        return (StatusCode::PRECONDITION_FAILED, HeaderMap::new());
    }
    docs.insert(key, body);
    let mut out = HeaderMap::new();
    if *s.cache_hit_reply.lock().unwrap() {
        out.insert(docbench::adapters::CACHE_HIT_HEADER, "true".parse().unwrap());
    }
    (StatusCode::CREATED, out)
}

async fn stub_get(
    State(s): State<Arc<StubStore>>,
    UrlPath(key): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Bytes, StatusCode> {
    s.enter(&headers).await;
    s.docs.lock().unwrap().get(&key).cloned().ok_or(StatusCode::NOT_FOUND)
}

pub async fn spawn_stub_store() -> (String, Arc<StubStore>) {
    let state = Arc::new(StubStore::default());
    let app = Router::new()
        .route("/docs", get(|| async { StatusCode::OK }))
        .route("/docs/{key}", get(stub_get).put(stub_put))
        .with_state(state.clone());
    let addr = spawn(app).await;
    (format!("http://{addr}/docs"), state)
}

/// A geolocation provider that counts calls and answers with fixed coordinates.
pub async fn spawn_geo_stub(lat: f64, lon: f64) -> (String, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let app = Router::new().route(
        "/geo/{ip}",
        get(move |UrlPath(_ip): UrlPath<String>| {
            let counter = counter.clone();
            async move {
                counter.fetch_add(1, Ordering::SeqCst);
                axum::Json(serde_json::json!({
                    "latitude": lat,
                    "longitude": lon,
                    "city": "Testville",
                    "country": "Nowhere",
                }))
            }
        }),
    );
    let addr = spawn(app).await;
    (format!("http://{addr}/geo/{{ip}}"), calls)
}

/// A loopback port with nothing listening on it.
pub fn dead_port() -> u16 {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

/// Config with the given adapters TOML appended, logging to `log`.
pub fn config_with(log: &Path, extra: &str) -> Config {
    let text = format!("log_path = {:?}\n{extra}", log.to_str().unwrap());
    Config::from_toml_str(&text).unwrap()
}

pub fn engine_with(log: &Path, extra: &str) -> Engine {
    config_with(log, extra).build_engine().unwrap()
}

pub async fn spawn_api(engine: Engine) -> String {
    let addr = spawn(docbench::api::router(engine, None)).await;
    format!("http://{addr}")
}

/// Minimal reader for the `/api/stream` server-sent events.
pub struct Sse {
    resp: reqwest::Response,
    buf: String,
}

impl Sse {
    pub async fn open(base: &str) -> Self {
        let resp = reqwest::get(format!("{base}/api/stream")).await.unwrap();
        assert_eq!(resp.status(), reqwest::StatusCode::OK);
        assert!(resp.headers()["content-type"]
            .to_str()
            .unwrap()
            .starts_with("text/event-stream"));
        Self {
            resp,
            buf: String::new(),
        }
    }

    /// Next `(event, data)` pair, skipping keep-alive comments.
    pub async fn next(&mut self) -> (String, Value) {
        self.next_within(Duration::from_secs(10))
            .await
            .expect("event within 10 s")
    }

    /// Next event, or `None` if nothing arrives within `wait`.
    pub async fn next_within(&mut self, wait: Duration) -> Option<(String, Value)> {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let frame: String = self.buf.drain(..end + 2).collect();
                let mut event = None;
                let mut data = String::new();
                for line in frame.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        event = Some(v.trim().to_string());
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if let Some(event) = event {
                    return Some((event, serde_json::from_str(&data).unwrap()));
                }
                continue;
            }
            let chunk = tokio::time::timeout_at(deadline, self.resp.chunk()).await.ok()?;
            let chunk = chunk.unwrap().expect("stream still open");
            self.buf.push_str(std::str::from_utf8(&chunk).unwrap());
        }
    }
}
