//! Behavioral checks every [`StoreAdapter`] must pass.
//!
//! Adapter authors call [`conformance`] from a test with a fresh adapter
//! instance. Each check panics with a description of the violated contract.

use crate::model::{generate_payload, DocumentKey, Payload, SizeClass};

use super::{StoreAdapter, StoreError};

const DOC_BYTES: usize = 512;

fn payload(seed: u64) -> Payload {
    generate_payload(SizeClass::new(DOC_BYTES), seed).expect("valid payload size")
}

fn key(prefix: &str, name: &str) -> DocumentKey {
    DocumentKey::from_raw(format!("{prefix}/{name}"))
}

/// Runs every check. `prefix` namespaces the keys so shared backends can be reused.
pub async fn conformance(adapter: &dyn StoreAdapter, prefix: &str) {
    test_read_your_write(adapter, prefix).await;
    test_missing_get(adapter, prefix).await;
    test_update_requires_existing(adapter, prefix).await;
    test_last_write_wins(adapter, prefix).await;
    test_update_overwrites(adapter, prefix).await;
    test_keys_are_independent(adapter, prefix).await;
}

pub async fn test_read_your_write(adapter: &dyn StoreAdapter, prefix: &str) {
    let k = key(prefix, "ryw/0");
    let p = payload(1);
    adapter.put(&k, &p).await.expect("put succeeds");
    let got = adapter.get(&k).await.expect("get after put succeeds");
    assert_eq!(got.body, p.body, "{}: get after put returned other bytes", adapter.id());
}

pub async fn test_missing_get(adapter: &dyn StoreAdapter, prefix: &str) {
    let k = key(prefix, "missing/0");
    match adapter.get(&k).await {
        Err(StoreError::KeyNotFound(_)) => {}
        other => panic!("{}: get of absent key returned {other:?}", adapter.id()),
    }
}

pub async fn test_update_requires_existing(adapter: &dyn StoreAdapter, prefix: &str) {
    let k = key(prefix, "update-absent/0");
    match adapter.update(&k, &payload(2)).await {
        Err(StoreError::KeyNotFound(_)) => {}
        other => panic!("{}: update of absent key returned {other:?}", adapter.id()),
    }
    match adapter.get(&k).await {
        Err(StoreError::KeyNotFound(_)) => {}
        other => panic!("{}: failed update created a document: {other:?}", adapter.id()),
    }
}

pub async fn test_last_write_wins(adapter: &dyn StoreAdapter, prefix: &str) {
    let k = key(prefix, "lww/0");
    adapter.put(&k, &payload(3)).await.expect("first put");
    let second = payload(4);
    adapter.put(&k, &second).await.expect("second put");
    let got = adapter.get(&k).await.expect("get");
    assert_eq!(got.body, second.body, "{}: last write did not win", adapter.id());
}

pub async fn test_update_overwrites(adapter: &dyn StoreAdapter, prefix: &str) {
    let k = key(prefix, "update/0");
    adapter.put(&k, &payload(5)).await.expect("put");
    let next = payload(6);
    adapter.update(&k, &next).await.expect("update of existing key");
    let got = adapter.get(&k).await.expect("get");
    assert_eq!(got.body, next.body, "{}: update not visible", adapter.id());
}

pub async fn test_keys_are_independent(adapter: &dyn StoreAdapter, prefix: &str) {
    let a = key(prefix, "iso/a");
    let b = key(prefix, "iso/b");
    let pa = payload(7);
    let pb = payload(8);
    adapter.put(&a, &pa).await.expect("put a");
    adapter.put(&b, &pb).await.expect("put b");
    assert_eq!(adapter.get(&a).await.expect("get a").body, pa.body);
    assert_eq!(adapter.get(&b).await.expect("get b").body, pb.body);
}
