use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use reqwest::{header, Client, Response, StatusCode};
use thiserror::Error;
use url::Url;

use super::{Ack, Capabilities, SharedAdapter, StoreAdapter, StoreError};
use crate::model::{DatabaseId, DocumentKey, Payload};

/// Unreserved characters per RFC 3986 stay literal; everything else, including `/`, is escaped.
const KEY_ENCODE_SET: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

/// Response header a server may set to report that a write was served from its cache.
pub const CACHE_HIT_HEADER: &str = "x-cache-hit";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HttpConfigError {
    #[error("invalid base_url {0:?}: {1}")]
    BadUrl(String, String),
    #[error("base_url must use http or https, got {0:?}")]
    UnsupportedScheme(String),
    #[error("timeout_ms must be positive")]
    ZeroTimeout,
    #[error("failed to build HTTP client: {0}")]
    Client(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpStoreConfig {
    pub base_url: Url,
    pub timeout_ms: u64,
    /// Sent verbatim as the `Authorization` header.
    pub auth_header: Option<String>,
    /// Keep pooled connections between calls and warm one up before measuring.
    pub persistent_connection: bool,
}

impl HttpStoreConfig {
    pub fn new(base_url: &str, timeout_ms: u64) -> Result<Self, HttpConfigError> {
        let url = Url::parse(base_url)
            .map_err(|e| HttpConfigError::BadUrl(base_url.to_string(), e.to_string()))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(HttpConfigError::UnsupportedScheme(url.scheme().to_string()));
        }
        if timeout_ms == 0 {
            return Err(HttpConfigError::ZeroTimeout);
        }
        Ok(Self {
            base_url: url,
            timeout_ms,
            auth_header: None,
            persistent_connection: true,
        })
    }
}

/// Adapter for REST document endpoints:
/// `PUT {base}/{key}` stores, `GET {base}/{key}` fetches, and an update is a
/// `PUT` carrying `If-Match: *` so the server refuses to create the document.
pub struct HttpStore {
    id: DatabaseId,
    config: HttpStoreConfig,
    client: Client,
}

pub fn http_store(id: DatabaseId, config: HttpStoreConfig) -> Result<SharedAdapter, HttpConfigError> {
    Ok(Arc::new(HttpStore::new(id, config)?))
}

impl HttpStore {
    pub fn new(id: DatabaseId, config: HttpStoreConfig) -> Result<Self, HttpConfigError> {
        if config.timeout_ms == 0 {
            return Err(HttpConfigError::ZeroTimeout);
        }
        let mut builder = Client::builder().timeout(Duration::from_millis(config.timeout_ms));
        if !config.persistent_connection {
            builder = builder.pool_max_idle_per_host(0);
        }
        let client = builder
            .build()
            .map_err(|e| HttpConfigError::Client(e.to_string()))?;
        Ok(Self { id, config, client })
    }

    fn url_for(&self, key: &DocumentKey) -> String {
        let base = self.config.base_url.as_str().trim_end_matches('/');
        let encoded = utf8_percent_encode(key.as_str(), KEY_ENCODE_SET);
        format!("{base}/{encoded}")
    }

    fn authorize(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.config.auth_header {
            Some(value) => req.header(header::AUTHORIZATION, value),
            None => req,
        }
    }

    async fn write(
        &self,
        key: &DocumentKey,
        payload: &Payload,
        must_exist: bool,
    ) -> Result<Ack, StoreError> {
        let mut req = self
            .client
            .put(self.url_for(key))
            .header(header::CONTENT_TYPE, "application/json")
            .body(payload.body.clone());
        if must_exist {
            req = req.header(header::IF_MATCH, "*");
        }
        let resp = self.authorize(req).send().await.map_err(transport_error)?;
        let resp = check_status(resp, key)?;
        let cache_hit = resp
            .headers()
            .get(CACHE_HIT_HEADER)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.eq_ignore_ascii_case("true"));
        Ok(Ack { cache_hit })
    }
}

fn transport_error(err: reqwest::Error) -> StoreError {
    if err.is_timeout() {
        StoreError::StoreUnavailable(format!("timed out: {err}"))
    } else {
        StoreError::StoreUnavailable(err.to_string())
    }
}

fn check_status(resp: Response, key: &DocumentKey) -> Result<Response, StoreError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    Err(match status {
        StatusCode::NOT_FOUND | StatusCode::PRECONDITION_FAILED => {
            StoreError::KeyNotFound(key.clone())
        }
        StatusCode::PAYLOAD_TOO_LARGE => StoreError::PayloadTooLarge(format!("HTTP {status}")),
        _ => StoreError::StoreUnavailable(format!("HTTP {status}")),
    })
}

#[async_trait]
impl StoreAdapter for HttpStore {
    fn id(&self) -> &DatabaseId {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            persistent_connection: self.config.persistent_connection,
            dedupes_identical_content: false,
        }
    }

    async fn connect(&self) -> Result<(), StoreError> {
        if !self.config.persistent_connection {
            return Ok(());
        }
        // Any response means the pooled connection is up; the status is irrelevant.
        let req = self.client.head(self.config.base_url.clone());
        self.authorize(req)
            .send()
            .await
            .map(|_| ())
            .map_err(transport_error)
    }

    async fn put(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        self.write(key, payload, false).await
    }

    async fn get(&self, key: &DocumentKey) -> Result<Payload, StoreError> {
        let req = self.client.get(self.url_for(key));
        let resp = self.authorize(req).send().await.map_err(transport_error)?;
        let resp = check_status(resp, key)?;
        let body = resp.bytes().await.map_err(transport_error)?;
        Payload::from_body(body.to_vec())
            .map_err(|e| StoreError::StoreUnavailable(format!("unreadable document: {e}")))
    }

    async fn update(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        self.write(key, payload, true).await
    }
}
