use std::collections::HashMap;
use std::sync::Mutex;

use async_trait::async_trait;

use super::{Ack, Capabilities, StoreAdapter, StoreError};
use crate::model::{DatabaseId, DocumentKey, Payload};

/// Reference adapter: a mutex-guarded hash map.
#[derive(Debug)]
pub struct MemoryStore {
    id: DatabaseId,
    max_document_bytes: Option<usize>,
    docs: Mutex<HashMap<DocumentKey, Payload>>,
}

impl MemoryStore {
    pub fn new(id: DatabaseId) -> Self {
        Self {
            id,
            max_document_bytes: None,
            docs: Mutex::new(HashMap::new()),
        }
    }

    /// Rejects documents larger than `bytes` with `PayloadTooLarge`.
    pub fn with_limit(mut self, bytes: usize) -> Self {
        self.max_document_bytes = Some(bytes);
        self
    }

    pub fn len(&self) -> usize {
        self.docs.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_size(&self, payload: &Payload) -> Result<(), StoreError> {
        match self.max_document_bytes {
            Some(limit) if payload.len() > limit => Err(StoreError::PayloadTooLarge(format!(
                "{} bytes exceeds the {limit}-byte limit",
                payload.len()
            ))),
            _ => Ok(()),
        }
    }
}

#[async_trait]
impl StoreAdapter for MemoryStore {
    fn id(&self) -> &DatabaseId {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            persistent_connection: true,
            dedupes_identical_content: false,
        }
    }

    async fn put(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        self.check_size(payload)?;
        self.docs
            .lock()
            .unwrap()
            .insert(key.clone(), payload.clone());
        Ok(Ack::default())
    }

    async fn get(&self, key: &DocumentKey) -> Result<Payload, StoreError> {
        self.docs
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::KeyNotFound(key.clone()))
    }

    async fn update(&self, key: &DocumentKey, payload: &Payload) -> Result<Ack, StoreError> {
        self.check_size(payload)?;
        let mut docs = self.docs.lock().unwrap();
        match docs.get_mut(key) {
            Some(slot) => {
                *slot = payload.clone();
                Ok(Ack::default())
            }
            None => Err(StoreError::KeyNotFound(key.clone())),
        }
    }
}
