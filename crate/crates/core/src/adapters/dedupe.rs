use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{Ack, Capabilities, SharedAdapter, StoreAdapter, StoreError};
use crate::model::{DatabaseId, DocumentKey, Payload};

type ContentHash = [u8; 32];

fn content_hash(body: &[u8]) -> ContentHash {
    Sha256::digest(body).into()
}

#[derive(Default)]
struct Index {
    /// One copy of every body that reached the inner store.
    bodies: HashMap<ContentHash, Payload>,
    /// What each key logically holds.
    logical: HashMap<DocumentKey, ContentHash>,
    /// What the inner store physically holds at each key.
    physical: HashMap<DocumentKey, ContentHash>,
}

/// Decorator that skips writes whose body was already stored, recording a reference instead.
///
/// Gets of referenced keys are answered from the wrapper's content table.
/// Bodies are keyed by SHA-256; collisions are not handled.
pub struct DedupeStore {
    inner: SharedAdapter,
    index: Mutex<Index>,
}

pub fn with_dedupe(inner: SharedAdapter) -> SharedAdapter {
    Arc::new(DedupeStore {
        inner,
        index: Mutex::new(Index::default()),
    })
}

impl DedupeStore {
    fn record_physical(&self, key: &DocumentKey, hash: ContentHash, payload: &Payload) {
        let mut index = self.index.lock().unwrap();
        index.bodies.entry(hash).or_insert_with(|| payload.clone());
        index.logical.insert(key.clone(), hash);
        index.physical.insert(key.clone(), hash);
    }
}

#[async_trait]
impl StoreAdapter for DedupeStore {
    fn id(&self) -> &DatabaseId {
        self.inner.id()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            dedupes_identical_content: true,
            ..self.inner.capabilities()
        }
    }

    async fn connect(&self) -> Result<(), StoreError> {
        self.inner.connect().await
    }

    async fn put(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        let hash = content_hash(&payload.body);
        {
            let mut index = self.index.lock().unwrap();
            if index.bodies.contains_key(&hash) {
                index.logical.insert(key.clone(), hash);
                return Ok(Ack { cache_hit: true });
            }
        }
        let ack = self.inner.put(key, payload).await?;
        self.record_physical(key, hash, payload);
        Ok(ack)
    }

    async fn get(&self, key: &DocumentKey) -> Result<Payload, StoreError> {
        let shared = {
            let index = self.index.lock().unwrap();
            match index.logical.get(key) {
                Some(hash) if index.physical.get(key) != Some(hash) => {
                    index.bodies.get(hash).cloned()
                }
                _ => None,
            }
        };
        match shared {
            Some(payload) => Ok(payload),
            None => self.inner.get(key).await,
        }
    }

    async fn update(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        let hash = content_hash(&payload.body);
        let (exists, materialized) = {
            let mut index = self.index.lock().unwrap();
            let exists = index.logical.contains_key(key);
            if exists && index.bodies.contains_key(&hash) {
                index.logical.insert(key.clone(), hash);
                return Ok(Ack { cache_hit: true });
            }
            (exists, index.physical.contains_key(key))
        };
        // A key that only exists as a reference has nothing to update in the inner store.
        let ack = if exists && !materialized {
            self.inner.put(key, payload).await?
        } else {
            self.inner.update(key, payload).await?
        };
        self.record_physical(key, hash, payload);
        Ok(ack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{with_delay, DelayModel, DelaySpec, MemoryStore};
    use crate::model::{generate_payload, SizeClass};
    use std::time::{Duration, Instant};

    fn memory() -> Arc<MemoryStore> {
        Arc::new(MemoryStore::new(DatabaseId::new("memory").unwrap()))
    }

    fn key(s: &str) -> DocumentKey {
        DocumentKey::from_raw(s)
    }

    #[tokio::test]
    async fn identical_body_short_circuits() {
        let inner = memory();
        let store = with_dedupe(inner.clone());
        let p = generate_payload(SizeClass::new(512), 9).unwrap();
        assert!(!store.put(&key("k1"), &p).await.unwrap().cache_hit);
        assert!(store.put(&key("k2"), &p).await.unwrap().cache_hit);
        assert_eq!(inner.len(), 1);
        assert_eq!(store.get(&key("k2")).await.unwrap(), p);
        assert!(store.capabilities().dedupes_identical_content);
    }

    #[tokio::test]
    async fn distinct_bodies_are_delegated() {
        let inner = memory();
        let store = with_dedupe(inner.clone());
        let a = generate_payload(SizeClass::new(512), 1).unwrap();
        let b = generate_payload(SizeClass::new(512), 2).unwrap();
        assert!(!store.put(&key("k1"), &a).await.unwrap().cache_hit);
        assert!(!store.put(&key("k2"), &b).await.unwrap().cache_hit);
        assert_eq!(inner.len(), 2);
    }

    #[tokio::test]
    async fn update_with_identical_content_hits() {
        let store = with_dedupe(memory());
        let p = generate_payload(SizeClass::new(512), 1).unwrap();
        store.put(&key("k"), &p).await.unwrap();
        assert!(store.update(&key("k"), &p).await.unwrap().cache_hit);
    }

    #[tokio::test]
    async fn update_of_absent_key_fails() {
        let store = with_dedupe(memory());
        let p = generate_payload(SizeClass::new(512), 1).unwrap();
        store.put(&key("k"), &p).await.unwrap();
        assert_eq!(
            store.update(&key("other"), &p).await,
            Err(StoreError::KeyNotFound(key("other")))
        );
    }

    #[tokio::test]
    async fn update_of_reference_materializes() {
        let inner = memory();
        let store = with_dedupe(inner.clone());
        let a = generate_payload(SizeClass::new(512), 1).unwrap();
        let b = generate_payload(SizeClass::new(512), 2).unwrap();
        store.put(&key("k1"), &a).await.unwrap();
        store.put(&key("k2"), &a).await.unwrap();
        assert!(!store.update(&key("k2"), &b).await.unwrap().cache_hit);
        assert_eq!(store.get(&key("k2")).await.unwrap(), b);
        assert_eq!(store.get(&key("k1")).await.unwrap(), a);
        assert_eq!(inner.get(&key("k2")).await.unwrap(), b);
    }

    #[tokio::test]
    async fn references_survive_overwrite_of_original() {
        let store = with_dedupe(memory());
        let a = generate_payload(SizeClass::new(512), 1).unwrap();
        let b = generate_payload(SizeClass::new(512), 2).unwrap();
        store.put(&key("k1"), &a).await.unwrap();
        store.put(&key("k2"), &a).await.unwrap();
        store.put(&key("k1"), &b).await.unwrap();
        assert_eq!(store.get(&key("k1")).await.unwrap(), b);
        assert_eq!(store.get(&key("k2")).await.unwrap(), a);
    }

    #[tokio::test]
    async fn cache_hit_skips_inner_delay() {
        let model = DelayModel::uniform(DelaySpec::fixed(100.0)).unwrap();
        let store = with_dedupe(with_delay(memory(), model));
        let p = generate_payload(SizeClass::new(512), 3).unwrap();
        let t = Instant::now();
        store.put(&key("k1"), &p).await.unwrap();
        assert!(t.elapsed() >= Duration::from_millis(100));
        let t = Instant::now();
        assert!(store.put(&key("k2"), &p).await.unwrap().cache_hit);
        assert!(t.elapsed() < Duration::from_millis(5));
    }
}
