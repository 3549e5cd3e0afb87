use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use super::{Ack, Capabilities, SharedAdapter, StoreAdapter, StoreError};
use crate::model::{
    test_matrix, DatabaseId, DocumentKey, Operation, Payload, SizeTier, TestKind,
    DEFAULT_LARGE_BYTES,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DelayModelError {
    #[error("{kind}: base_ms and jitter_ms must be finite and non-negative")]
    Negative { kind: TestKind },
    #[error("{kind}: jitter_ms ({jitter_ms}) exceeds base_ms ({base_ms})")]
    JitterExceedsBase {
        kind: TestKind,
        base_ms: f64,
        jitter_ms: f64,
    },
}

/// Latency of one (operation, size) cell: `base_ms` plus a uniform offset in `[-jitter_ms, +jitter_ms]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    pub base_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
}

impl DelaySpec {
    pub const fn fixed(base_ms: f64) -> Self {
        Self {
            base_ms,
            jitter_ms: 0.0,
        }
    }

    pub const fn new(base_ms: f64, jitter_ms: f64) -> Self {
        Self { base_ms, jitter_ms }
    }

    fn validate(&self, kind: TestKind) -> Result<(), DelayModelError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.base_ms) || !ok(self.jitter_ms) {
            return Err(DelayModelError::Negative { kind });
        }
        if self.base_ms - self.jitter_ms < 0.0 {
            return Err(DelayModelError::JitterExceedsBase {
                kind,
                base_ms: self.base_ms,
                jitter_ms: self.jitter_ms,
            });
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Duration {
        let offset = if self.jitter_ms > 0.0 {
            rng.random_range(-self.jitter_ms..=self.jitter_ms)
        } else {
            0.0
        };
        Duration::from_secs_f64((self.base_ms + offset).max(0.0) / 1000.0)
    }
}

/// Per-workload latency table for [`with_delay`].
///
/// Store calls map onto workloads by operation (put = upload, get = retrieve,
/// update = update) and by payload size: documents of at least
/// `large_threshold_bytes` use the large-tier timings.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    cells: [DelaySpec; 6],
    large_threshold_bytes: usize,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            cells: [DelaySpec::default(); 6],
            large_threshold_bytes: DEFAULT_LARGE_BYTES,
        }
    }
}

impl DelayModel {
    /// Same latency for every workload.
    pub fn uniform(spec: DelaySpec) -> Result<Self, DelayModelError> {
        Self::from_cells([spec; 6])
    }

    /// Cells in [`test_matrix`] order.
    pub fn from_cells(cells: [DelaySpec; 6]) -> Result<Self, DelayModelError> {
        for (kind, cell) in test_matrix().iter().zip(&cells) {
            cell.validate(*kind)?;
        }
        Ok(Self {
            cells,
            ..Self::default()
        })
    }

    pub fn set(&mut self, kind: TestKind, spec: DelaySpec) -> Result<(), DelayModelError> {
        spec.validate(kind)?;
        self.cells[kind.matrix_index()] = spec;
        Ok(())
    }

    pub fn with_large_threshold(mut self, bytes: usize) -> Self {
        self.large_threshold_bytes = bytes;
        self
    }

    pub fn spec(&self, kind: TestKind) -> DelaySpec {
        self.cells[kind.matrix_index()]
    }

    fn tier_of(&self, bytes: usize) -> SizeTier {
        if bytes >= self.large_threshold_bytes {
            SizeTier::Large
        } else {
            SizeTier::Small
        }
    }

    fn draw(&self, operation: Operation, tier: SizeTier) -> Duration {
        self.spec(TestKind::new(operation, tier))
            .sample(&mut rand::rng())
    }
}

/// Sleeps for `duration` with sub-millisecond accuracy.
///
/// The tokio timer wheel has 1 ms granularity and overshoots, so the last
/// couple of milliseconds are spent yielding until the deadline.
pub(crate) async fn precise_sleep(duration: Duration) {
    if duration.is_zero() {
        return;
    }
    let deadline = Instant::now() + duration;
    let coarse = Duration::from_millis(2);
    if duration > coarse {
        tokio::time::sleep_until(deadline - coarse).await;
    }
    while Instant::now() < deadline {
        tokio::task::yield_now().await;
    }
}

/// Decorator that adds simulated network latency in front of `inner`.
pub struct DelayedStore {
    inner: SharedAdapter,
    model: DelayModel,
}

pub fn with_delay(inner: SharedAdapter, model: DelayModel) -> SharedAdapter {
    std::sync::Arc::new(DelayedStore { inner, model })
}

#[async_trait]
impl StoreAdapter for DelayedStore {
    fn id(&self) -> &DatabaseId {
        self.inner.id()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    async fn connect(&self) -> Result<(), StoreError> {
        self.inner.connect().await
    }

    async fn put(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        let tier = self.model.tier_of(payload.len());
        precise_sleep(self.model.draw(Operation::Upload, tier)).await;
        self.inner.put(key, payload).await
    }

    async fn get(&self, key: &DocumentKey) -> Result<Payload, StoreError> {
        // The size is only known once the document comes back, so the delay trails the call.
        let result = self.inner.get(key).await;
        let tier = match &result {
            Ok(p) => self.model.tier_of(p.len()),
            Err(_) => SizeTier::Small,
        };
        precise_sleep(self.model.draw(Operation::Retrieve, tier)).await;
        result
    }

    async fn update(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        let tier = self.model.tier_of(payload.len());
        precise_sleep(self.model.draw(Operation::Update, tier)).await;
        self.inner.update(key, payload).await
    }
}
