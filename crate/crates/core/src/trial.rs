use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::geo::{GeoLocation, GeoSource};
use crate::model::{DatabaseId, TestKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Adapter error token, e.g. `"StoreUnavailable"`.
    Error(String),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

/// One timed store call.
///
/// Serializes to the flat log/wire record:
/// `trial_id, run_id, database_id, test_kind, elapsed_ms, started_at, lat, lon,
/// location_label, outcome, error, cache_hit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TrialRecord", try_from = "TrialRecord")]
pub struct TrialResult {
    pub trial_id: String,
    pub run_id: String,
    pub database_id: DatabaseId,
    pub test_kind: TestKind,
    /// Whole milliseconds on the monotonic clock, rounded down.
    pub elapsed_ms: u64,
    pub started_at: DateTime<Utc>,
    pub location: Option<GeoLocation>,
    pub outcome: Outcome,
    pub cache_hit: bool,
}

impl TrialResult {
    pub fn coordinates(&self) -> Option<(f64, f64)> {
        self.location.as_ref().and_then(GeoLocation::coordinates)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OutcomeTag {
    Success,
    Error,
}

#[derive(Serialize, Deserialize)]
struct TrialRecord {
    trial_id: String,
    run_id: String,
    database_id: DatabaseId,
    test_kind: TestKind,
    elapsed_ms: u64,
    started_at: DateTime<Utc>,
    lat: Option<f64>,
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    location_label: String,
    outcome: OutcomeTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    cache_hit: bool,
}

impl From<TrialResult> for TrialRecord {
    fn from(t: TrialResult) -> Self {
        let (lat, lon) = t.coordinates().unzip();
        let location_label = t.location.map(|l| l.label).unwrap_or_default();
        let (outcome, error) = match t.outcome {
            Outcome::Success => (OutcomeTag::Success, None),
            Outcome::Error(msg) => (OutcomeTag::Error, Some(msg)),
        };
        Self {
            trial_id: t.trial_id,
            run_id: t.run_id,
            database_id: t.database_id,
            test_kind: t.test_kind,
            elapsed_ms: t.elapsed_ms,
            started_at: t.started_at,
            lat,
            lon,
            location_label,
            outcome,
            error,
            cache_hit: t.cache_hit,
        }
    }
}

impl TryFrom<TrialRecord> for TrialResult {
    type Error = String;

    fn try_from(r: TrialRecord) -> Result<Self, String> {
        let location = match (r.lat, r.lon) {
            (Some(lat), Some(lon)) => Some(
                GeoLocation::new(lat, lon, r.location_label, GeoSource::Provider)
                    .ok_or_else(|| format!("coordinates out of range: ({lat}, {lon})"))?,
            ),
            (None, None) => None,
            _ => return Err("lat and lon must be both present or both null".into()),
        };
        let outcome = match r.outcome {
            OutcomeTag::Success => Outcome::Success,
            OutcomeTag::Error => Outcome::Error(r.error.unwrap_or_default()),
        };
        Ok(Self {
            trial_id: r.trial_id,
            run_id: r.run_id,
            database_id: r.database_id,
            test_kind: r.test_kind,
            elapsed_ms: r.elapsed_ms,
            started_at: r.started_at,
            location,
            outcome,
            cache_hit: r.cache_hit,
        })
    }
}
