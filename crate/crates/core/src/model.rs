//! Workload taxonomy, identifiers and the deterministic payload generator.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Smallest payload the generator can produce; leaves room for the JSON envelope.
pub const MIN_PAYLOAD_BYTES: usize = 64;

/// Default "small" document size: 5 KiB.
pub const DEFAULT_SMALL_BYTES: usize = 5 * 1024;

/// Default "large" document size: 200 KiB.
pub const DEFAULT_LARGE_BYTES: usize = 200 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("payload target of {0} bytes is below the {MIN_PAYLOAD_BYTES}-byte minimum")]
    TargetTooSmall(usize),
    #[error("invalid database id {0:?}: expected 1-32 characters of [a-z0-9_]")]
    InvalidDatabaseId(String),
    #[error("unknown test kind {0:?}")]
    UnknownTestKind(String),
    #[error("malformed payload body: {0}")]
    MalformedPayload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Upload,
    Retrieve,
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeTier {
    Small,
    Large,
}

/// One of the six benchmark workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TestKind {
    pub operation: Operation,
    pub size: SizeTier,
}

impl TestKind {
    pub const UPLOAD_SMALL: TestKind = TestKind::new(Operation::Upload, SizeTier::Small);
    pub const UPLOAD_LARGE: TestKind = TestKind::new(Operation::Upload, SizeTier::Large);
    pub const RETRIEVE_SMALL: TestKind = TestKind::new(Operation::Retrieve, SizeTier::Small);
    pub const RETRIEVE_LARGE: TestKind = TestKind::new(Operation::Retrieve, SizeTier::Large);
    pub const UPDATE_SMALL: TestKind = TestKind::new(Operation::Update, SizeTier::Small);
    pub const UPDATE_LARGE: TestKind = TestKind::new(Operation::Update, SizeTier::Large);

    pub const fn new(operation: Operation, size: SizeTier) -> Self {
        Self { operation, size }
    }

    /// Stable wire name, e.g. `"retrieve_large"`.
    pub fn as_str(&self) -> &'static str {
        match (self.operation, self.size) {
            (Operation::Upload, SizeTier::Small) => "upload_small",
            (Operation::Upload, SizeTier::Large) => "upload_large",
            (Operation::Retrieve, SizeTier::Small) => "retrieve_small",
            (Operation::Retrieve, SizeTier::Large) => "retrieve_large",
            (Operation::Update, SizeTier::Small) => "update_small",
            (Operation::Update, SizeTier::Large) => "update_large",
        }
    }

    /// Position of this kind within [`test_matrix`].
    pub fn matrix_index(&self) -> usize {
        let op = match self.operation {
            Operation::Upload => 0,
            Operation::Retrieve => 1,
            Operation::Update => 2,
        };
        let size = match self.size {
            SizeTier::Small => 0,
            SizeTier::Large => 1,
        };
        op * 2 + size
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        test_matrix()
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownTestKind(s.to_string()))
    }
}

impl Serialize for TestKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TestKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The six workloads, in canonical order: uploads, retrievals, updates; small before large.
pub fn test_matrix() -> [TestKind; 6] {
    [
        TestKind::UPLOAD_SMALL,
        TestKind::UPLOAD_LARGE,
        TestKind::RETRIEVE_SMALL,
        TestKind::RETRIEVE_LARGE,
        TestKind::UPDATE_SMALL,
        TestKind::UPDATE_LARGE,
    ]
}

/// Exact serialized document size for a tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SizeClass {
    pub target_bytes: usize,
}

impl SizeClass {
    pub const fn new(target_bytes: usize) -> Self {
        Self { target_bytes }
    }
}

/// Byte targets for the two tiers. Defaults to 5 KiB / 200 KiB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayloadSizes {
    pub small_bytes: usize,
    pub large_bytes: usize,
}

impl Default for PayloadSizes {
    fn default() -> Self {
        Self {
            small_bytes: DEFAULT_SMALL_BYTES,
            large_bytes: DEFAULT_LARGE_BYTES,
        }
    }
}

impl PayloadSizes {
    pub fn class(&self, tier: SizeTier) -> SizeClass {
        match tier {
            SizeTier::Small => SizeClass::new(self.small_bytes),
            SizeTier::Large => SizeClass::new(self.large_bytes),
        }
    }
}

/// Registry name of a benchmarked store, `[a-z0-9_]{1,32}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct DatabaseId(String);

impl DatabaseId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        let valid = (1..=32).contains(&name.len())
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if valid {
            Ok(Self(name))
        } else {
            Err(ModelError::InvalidDatabaseId(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DatabaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DatabaseId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl<'de> Deserialize<'de> for DatabaseId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::new(s).map_err(serde::de::Error::custom)
    }
}

/// Storage key of one trial document: `<run_id>/<database_id>/<rep_index>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocumentKey(String);

impl DocumentKey {
    /// Wraps an arbitrary key string. Prefer [`document_key`] for trial keys.
    pub fn from_raw(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocumentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn document_key(run_id: &str, db: &DatabaseId, rep_index: u32) -> DocumentKey {
    debug_assert!(!run_id.is_empty(), "run id must be non-empty");
    DocumentKey(format!("{run_id}/{db}/{rep_index}"))
}

/// A benchmark document whose serialized JSON body is exactly `size_class.target_bytes` long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub document_id: String,
    pub body: Vec<u8>,
    pub size_class: SizeClass,
    pub seed: u64,
}

// `filler` must stay last so padding is a plain suffix. With a 20-digit seed the
// empty envelope is 54 bytes, under MIN_PAYLOAD_BYTES.
#[derive(Serialize)]
struct Envelope<'a> {
    document_id: &'a str,
    filler: &'a str,
}

#[derive(Deserialize)]
struct EnvelopeHeader {
    document_id: String,
}

const DOCUMENT_ID_PREFIX: &str = "doc-";

const FILLER_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

/// Builds the deterministic document for `(size_class, seed)`.
///
/// The body is the JSON object `{"document_id":"doc-<seed>","filler":"..."}` where
/// `filler` is alphanumeric text drawn from ChaCha8 seeded with `seed`, sized so the
/// whole body hits the target exactly.
pub fn generate_payload(size_class: SizeClass, seed: u64) -> Result<Payload, ModelError> {
    let target = size_class.target_bytes;
    if target < MIN_PAYLOAD_BYTES {
        return Err(ModelError::TargetTooSmall(target));
    }
    let document_id = format!("{DOCUMENT_ID_PREFIX}{seed}");
    let shell = serde_json::to_vec(&Envelope {
        document_id: &document_id,
        filler: "",
    })
    .expect("envelope serializes");
    // Alphanumerics need no JSON escaping, so each filler char adds exactly one byte.
    let filler_len = target
        .checked_sub(shell.len())
        .ok_or(ModelError::TargetTooSmall(target))?;

    // Random bytes are drawn in blocks and mapped onto the alphabet by rejection,
    // which keeps the distribution uniform without a bounded draw per byte.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = (256 / FILLER_ALPHABET.len() * FILLER_ALPHABET.len()) as u8;
    let mut filler = Vec::with_capacity(filler_len);
    let mut block = [0u8; 256];
    while filler.len() < filler_len {
        rng.fill_bytes(&mut block);
        let wanted = filler_len - filler.len();
        filler.extend(
            block
                .iter()
                .filter(|&&b| b < limit)
                .map(|&b| FILLER_ALPHABET[usize::from(b) % FILLER_ALPHABET.len()])
                .take(wanted),
        );
    }
    let filler = String::from_utf8(filler).expect("alphabet is ASCII");

    let body = serde_json::to_vec(&Envelope {
        document_id: &document_id,
        filler: &filler,
    })
    .expect("envelope serializes");
    debug_assert_eq!(body.len(), target);

    Ok(Payload {
        document_id,
        body,
        size_class,
        seed,
    })
}

impl Payload {
    /// Reconstructs a payload from a stored body, e.g. one fetched over HTTP.
    pub fn from_body(body: Vec<u8>) -> Result<Self, ModelError> {
        let header: EnvelopeHeader = serde_json::from_slice(&body)
            .map_err(|e| ModelError::MalformedPayload(e.to_string()))?;
        let seed = header
            .document_id
            .strip_prefix(DOCUMENT_ID_PREFIX)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                ModelError::MalformedPayload(format!("unexpected document_id {:?}", header.document_id))
            })?;
        Ok(Self {
            document_id: header.document_id,
            size_class: SizeClass::new(body.len()),
            body,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn matrix_order_and_size() {
        let m = test_matrix();
        assert_eq!(m.len(), 6);
        assert_eq!(m[0], TestKind::UPLOAD_SMALL);
        let names: Vec<_> = m.iter().map(|k| k.as_str()).collect();
        assert_eq!(
            names,
            [
                "upload_small",
                "upload_large",
                "retrieve_small",
                "retrieve_large",
                "update_small",
                "update_large"
            ]
        );
        assert_eq!(test_matrix(), test_matrix());
        let distinct: HashSet<_> = m.iter().collect();
        assert_eq!(distinct.len(), 6);
        for (i, k) in m.iter().enumerate() {
            assert_eq!(k.matrix_index(), i);
            assert_eq!(k.as_str().parse::<TestKind>().unwrap(), *k);
        }
    }

    #[test]
    fn test_kind_serde_uses_wire_names() {
        let json = serde_json::to_string(&TestKind::RETRIEVE_LARGE).unwrap();
        assert_eq!(json, "\"retrieve_large\"");
        assert!(serde_json::from_str::<TestKind>("\"delete_small\"").is_err());
    }

    #[test]
    fn database_id_validation() {
        for ok in ["memory", "sim_couchdb", "a", "x1_2", &"z".repeat(32)] {
            assert!(DatabaseId::new(ok).is_ok(), "{ok}");
        }
        for bad in ["", "Memory", "sim-couch", "a b", &"z".repeat(33), "é"] {
            assert!(DatabaseId::new(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn document_key_format() {
        let db = DatabaseId::new("memory").unwrap();
        assert_eq!(document_key("r1", &db, 0).as_str(), "r1/memory/0");
        assert_eq!(document_key("r1", &db, 0), document_key("r1", &db, 0));
        assert_ne!(document_key("r1", &db, 1), document_key("r1", &db, 0));
    }

    #[test]
    fn small_payload_is_exact() {
        let p = generate_payload(PayloadSizes::default().class(SizeTier::Small), 0).unwrap();
        assert_eq!(p.body.len(), 5120);
        assert_eq!(p.seed, 0);
        assert!(p.document_id.contains('0'));
    }

    #[test]
    fn payload_is_deterministic() {
        let large = PayloadSizes::default().class(SizeTier::Large);
        let a = generate_payload(large, 7).unwrap();
        let b = generate_payload(large, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.body.len(), 204_800);
    }

    #[test]
    fn distinct_seeds_give_distinct_bodies() {
        let small = PayloadSizes::default().class(SizeTier::Small);
        let bodies: HashSet<Vec<u8>> = (0..=1000u64)
            .map(|s| generate_payload(small, s).unwrap().body)
            .collect();
        assert_eq!(bodies.len(), 1001);
    }

    #[test]
    fn too_small_target_is_rejected() {
        assert_eq!(
            generate_payload(SizeClass::new(63), 1),
            Err(ModelError::TargetTooSmall(63))
        );
        // The longest seed still fits the floor.
        for seed in [0, u64::MAX] {
            let p = generate_payload(SizeClass::new(64), seed).unwrap();
            assert_eq!(p.body.len(), 64);
        }
    }

    #[test]
    fn envelope_round_trips() {
        for seed in 0..=100u64 {
            let p = generate_payload(SizeClass::new(5120), seed).unwrap();
            let v: serde_json::Value = serde_json::from_slice(&p.body).unwrap();
            assert_eq!(v["document_id"], p.document_id.as_str());
            let text = std::str::from_utf8(&p.body).unwrap();
            let filler_at = text.find("\"filler\":").unwrap();
            assert!(filler_at > text.find("\"document_id\":").unwrap());
            assert!(text[filler_at..].ends_with("\"}"));
            assert_eq!(Payload::from_body(p.body.clone()).unwrap(), p);
        }
    }
}
