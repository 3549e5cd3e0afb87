//! The uniform document-store contract and its implementations.
//!
//! Every benchmarked database sits behind [`StoreAdapter`]. The crate ships an
//! in-process [`MemoryStore`], two decorators ([`with_delay`] for simulated
//! remote latency, [`with_dedupe`] for content-addressed write caching) and a
//! generic [`HttpStore`] that talks to any REST-style document endpoint.
//!
//! Vendor-specific adapters plug in by implementing [`StoreAdapter`] and being
//! registered with the engine's [`Registry`](crate::engine::Registry).

use std::sync::Arc;

use async_trait::async_trait;
use serde::Serialize;
use thiserror::Error;

use crate::model::{DatabaseId, DocumentKey, Payload};

pub mod conformance;
mod dedupe;
mod delay;
mod http;
mod memory;

pub use dedupe::{with_dedupe, DedupeStore};
pub use delay::{with_delay, DelayModel, DelayModelError, DelaySpec, DelayedStore};
pub use http::{http_store, HttpConfigError, HttpStore, HttpStoreConfig, CACHE_HIT_HEADER};
pub use memory::MemoryStore;

/// Every adapter failure is exactly one of these.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("key not found: {0}")]
    KeyNotFound(DocumentKey),
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("payload too large: {0}")]
    PayloadTooLarge(String),
}

impl StoreError {
    /// Stable token recorded in trial outcomes.
    pub fn kind(&self) -> &'static str {
        match self {
            StoreError::KeyNotFound(_) => "KeyNotFound",
            StoreError::StoreUnavailable(_) => "StoreUnavailable",
            StoreError::PayloadTooLarge(_) => "PayloadTooLarge",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    /// The adapter keeps a warm connection; establishing it is excluded from trial timing.
    pub persistent_connection: bool,
    /// Writes of already-stored content may short-circuit.
    pub dedupes_identical_content: bool,
}

/// Acknowledgement of a write.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ack {
    pub cache_hit: bool,
}

#[async_trait]
pub trait StoreAdapter: Send + Sync {
    fn id(&self) -> &DatabaseId;

    fn capabilities(&self) -> Capabilities;

    /// Establishes (or warms) the connection. Called outside the measured window.
    async fn connect(&self) -> Result<(), StoreError> {
        Ok(())
    }

    /// Stores `payload` under `key`; last write wins.
    async fn put(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError>;

    async fn get(&self, key: &DocumentKey) -> Result<Payload, StoreError>;

    /// Replaces an existing document. Fails with `KeyNotFound` if `key` was never stored.
    async fn update(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError>;
}

pub type SharedAdapter = Arc<dyn StoreAdapter>;
