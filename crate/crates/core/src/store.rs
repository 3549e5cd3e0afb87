//! Append-only trial log with in-memory aggregate indexes.
//!
//! The log is UTF-8 newline-delimited JSON, one [`TrialResult`] per line.
//! Opening a log replays it; the indexes are then maintained incrementally on
//! every append. Writes are serialized; readers see a consistent prefix.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DatabaseId, TestKind};
use crate::trial::TrialResult;

#[derive(Debug, Error)]
pub enum ResultStoreError {
    #[error("trial {0} already recorded")]
    DuplicateTrial(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt log {path} at line {line}: {reason}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("no trials recorded for database {0}")]
    UnknownDatabase(DatabaseId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreOptions {
    /// fsync after every append instead of only flushing to the OS.
    pub sync_writes: bool,
    /// Leave cache-hit trials out of statistics and the heatmap.
    pub exclude_cache_hits: bool,
    /// On open, drop an unterminated, unparseable final line (a torn write)
    /// instead of failing with `CorruptLog`.
    pub repair_torn_tail: bool,
}

/// count/mean/min/max for one (database, test kind) cell, over Success trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub database_id: DatabaseId,
    pub test_kind: TestKind,
    pub count: u64,
    /// Exact mean rounded half-up to one decimal.
    pub mean_ms: f64,
    pub min_ms: u64,
    pub max_ms: u64,
}

/// Best (minimum) and worst (maximum) latency of one test kind on one database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindExtremes {
    pub test_kind: TestKind,
    pub best_ms: u64,
    pub worst_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatPoint {
    pub lat_bucket: f64,
    pub lon_bucket: f64,
    pub avg_ms: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialFilter {
    pub run_id: Option<String>,
    pub database_id: Option<DatabaseId>,
    pub test_kind: Option<TestKind>,
}

impl TrialFilter {
    pub fn run(run_id: impl Into<String>) -> Self {
        Self {
            run_id: Some(run_id.into()),
            ..Self::default()
        }
    }

    fn matches(&self, t: &TrialResult) -> bool {
        self.run_id.as_ref().is_none_or(|r| *r == t.run_id)
            && self.database_id.as_ref().is_none_or(|d| *d == t.database_id)
            && self.test_kind.is_none_or(|k| k == t.test_kind)
    }
}

/// Rounds `sum / count` half-up to one decimal place using integer arithmetic.
pub fn mean_to_tenths(sum: u128, count: u64) -> f64 {
    assert!(count > 0, "mean of an empty cell");
    let count = u128::from(count);
    let tenths = (sum * 20 + count) / (2 * count);
    tenths as f64 / 10.0
}

/// Index of the 0.1-degree band containing `degrees`.
pub fn heat_bucket(degrees: f64) -> i64 {
    (degrees * 10.0).round() as i64
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    count: u64,
    sum: u128,
    min: u64,
    max: u64,
}

impl Cell {
    fn new(ms: u64) -> Self {
        Self {
            count: 1,
            sum: u128::from(ms),
            min: ms,
            max: ms,
        }
    }

    fn add(&mut self, ms: u64) {
        self.count += 1;
        self.sum += u128::from(ms);
        self.min = self.min.min(ms);
        self.max = self.max.max(ms);
    }
}

#[derive(Default)]
struct Indexes {
    trials: Vec<TrialResult>,
    ids: HashSet<String>,
    databases: HashSet<DatabaseId>,
    cells: BTreeMap<(DatabaseId, TestKind), Cell>,
    heat: BTreeMap<(i64, i64), Cell>,
}

impl Indexes {
    fn insert(&mut self, trial: TrialResult, options: &StoreOptions) {
        self.ids.insert(trial.trial_id.clone());
        self.databases.insert(trial.database_id.clone());
        let counted =
            trial.outcome.is_success() && !(options.exclude_cache_hits && trial.cache_hit);
        if counted {
            let ms = trial.elapsed_ms;
            self.cells
                .entry((trial.database_id.clone(), trial.test_kind))
                .and_modify(|c| c.add(ms))
                .or_insert_with(|| Cell::new(ms));
            if let Some((lat, lon)) = trial.coordinates() {
                self.heat
                    .entry((heat_bucket(lat), heat_bucket(lon)))
                    .and_modify(|c| c.add(ms))
                    .or_insert_with(|| Cell::new(ms));
            }
        }
        self.trials.push(trial);
    }
}

pub struct ResultStore {
    path: Option<PathBuf>,
    read_only: bool,
    options: StoreOptions,
    writer: Mutex<Option<File>>,
    indexes: RwLock<Indexes>,
}

impl ResultStore {
    /// A store without a backing log; contents vanish with the process.
    pub fn in_memory(options: StoreOptions) -> Self {
        Self {
            path: None,
            read_only: false,
            options,
            writer: Mutex::new(None),
            indexes: RwLock::new(Indexes::default()),
        }
    }

    /// Opens (creating if absent) the log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>, options: StoreOptions) -> Result<Self, ResultStoreError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |e: std::io::Error| {
            ResultStoreError::StorageFailure(format!("{}: {e}", path.display()))
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;

        let mut indexes = Indexes::default();
        let valid_len = replay(&mut file, &path, &options, &mut indexes)?;
        if valid_len < file.metadata().map_err(io_err)?.len() {
            tracing::warn!(path = %path.display(), "dropping torn final log record");
            file.set_len(valid_len).map_err(io_err)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err)?;

        Ok(Self {
            path: Some(path),
            read_only: false,
            options,
            writer: Mutex::new(Some(file)),
            indexes: RwLock::new(indexes),
        })
    }

    /// Replays the log at `path` without opening it for writing. A missing file is an empty log.
    /// A torn tail is skipped in memory when `repair_torn_tail` is set; the file is never modified.
    pub fn read_only(path: impl AsRef<Path>, options: StoreOptions) -> Result<Self, ResultStoreError> {
        let path = path.as_ref().to_path_buf();
        let mut indexes = Indexes::default();
        match File::open(&path) {
            Ok(mut file) => {
                replay(&mut file, &path, &options, &mut indexes)?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => {
                return Err(ResultStoreError::StorageFailure(format!("{}: {e}", path.display())))
            }
        }
        Ok(Self {
            path: Some(path),
            read_only: true,
            options,
            writer: Mutex::new(None),
            indexes: RwLock::new(indexes),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn options(&self) -> StoreOptions {
        self.options
    }

    /// Writes `trial` to the log, then indexes it. Returns after the OS has the bytes.
    pub fn append(&self, trial: TrialResult) -> Result<(), ResultStoreError> {
        if self.read_only {
            return Err(ResultStoreError::StorageFailure("store opened read-only".into()));
        }
        let mut writer = self.writer.lock().unwrap();
        if self.indexes.read().unwrap().ids.contains(&trial.trial_id) {
            return Err(ResultStoreError::DuplicateTrial(trial.trial_id));
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_vec(&trial)
                .map_err(|e| ResultStoreError::StorageFailure(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line)
                .and_then(|_| file.flush())
                .map_err(|e| ResultStoreError::StorageFailure(e.to_string()))?;
            if self.options.sync_writes {
                file.sync_data()
                    .map_err(|e| ResultStoreError::StorageFailure(e.to_string()))?;
            }
        }
        self.indexes.write().unwrap().insert(trial, &self.options);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indexes.read().unwrap().trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trials matching every set filter field, ordered by `started_at` (ties in append order).
    pub fn query_trials(&self, filter: &TrialFilter) -> Vec<TrialResult> {
        let mut out: Vec<TrialResult> = self
            .indexes
            .read()
            .unwrap()
            .trials
            .iter()
            .filter(|t| filter.matches(t))
            .cloned()
            .collect();
        out.sort_by_key(|t| t.started_at);
        out
    }

    /// One entry per (database, test kind) with at least one counted trial,
    /// ordered by database id then test matrix order.
    pub fn aggregates(&self) -> Vec<AggregateStats> {
        self.indexes
            .read()
            .unwrap()
            .cells
            .iter()
            .map(|((db, kind), c)| AggregateStats {
                database_id: db.clone(),
                test_kind: *kind,
                count: c.count,
                mean_ms: mean_to_tenths(c.sum, c.count),
                min_ms: c.min,
                max_ms: c.max,
            })
            .collect()
    }

    pub fn extremes(&self, db: &DatabaseId) -> Result<Vec<KindExtremes>, ResultStoreError> {
        let indexes = self.indexes.read().unwrap();
        if !indexes.databases.contains(db) {
            return Err(ResultStoreError::UnknownDatabase(db.clone()));
        }
        Ok(indexes
            .cells
            .iter()
            .filter(|((d, _), _)| d == db)
            .map(|((_, kind), c)| KindExtremes {
                test_kind: *kind,
                best_ms: c.min,
                worst_ms: c.max,
            })
            .collect())
    }

    pub fn heatmap_points(&self) -> Vec<HeatPoint> {
        self.indexes
            .read()
            .unwrap()
            .heat
            .iter()
            .map(|(&(lat, lon), c)| HeatPoint {
                lat_bucket: lat as f64 / 10.0,
                lon_bucket: lon as f64 / 10.0,
                avg_ms: mean_to_tenths(c.sum, c.count),
                count: c.count,
            })
            .collect()
    }

    /// Database ids in order of first appearance in the log.
    pub fn databases_in_log_order(&self) -> Vec<DatabaseId> {
        let indexes = self.indexes.read().unwrap();
        let mut seen = HashSet::new();
        indexes
            .trials
            .iter()
            .filter(|t| seen.insert(&t.database_id))
            .map(|t| t.database_id.clone())
            .collect()
    }

    pub fn knows_database(&self, db: &DatabaseId) -> bool {
        self.indexes.read().unwrap().databases.contains(db)
    }
}

/// Replays `file` into `indexes`, returning the byte length of the valid prefix.
fn replay(
    file: &mut File,
    path: &Path,
    options: &StoreOptions,
    indexes: &mut Indexes,
) -> Result<u64, ResultStoreError> {
    let corrupt = |line: usize, reason: String| ResultStoreError::CorruptLog {
        path: path.to_path_buf(),
        line,
        reason,
    };
    file.seek(SeekFrom::Start(0))
        .map_err(|e| ResultStoreError::StorageFailure(e.to_string()))?;
    let mut reader = BufReader::new(file);
    let mut buf = Vec::new();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| ResultStoreError::StorageFailure(e.to_string()))?;
        if n == 0 {
            return Ok(offset);
        }
        line_no += 1;
        let terminated = buf.last() == Some(&b'\n');
        let text = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let text = text.strip_suffix(b"\r").unwrap_or(text);
        if text.iter().all(u8::is_ascii_whitespace) {
            offset += n as u64;
            continue;
        }
        let parsed = std::str::from_utf8(text)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<TrialResult>(s).map_err(|e| e.to_string()));
        match parsed {
            Ok(trial) => {
                if indexes.ids.contains(&trial.trial_id) {
                    return Err(corrupt(line_no, format!("duplicate trial_id {}", trial.trial_id)));
                }
                indexes.insert(trial, options);
            }
            Err(_) if !terminated && options.repair_torn_tail => return Ok(offset),
            Err(reason) => return Err(corrupt(line_no, reason)),
        }
        offset += n as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoLocation, GeoSource};
    use crate::trial::Outcome;
    use chrono::{Duration, TimeZone, Utc};

    fn trial(id: &str, db: &str, kind: TestKind, ms: u64) -> TrialResult {
        TrialResult {
            trial_id: id.into(),
            run_id: "run".into(),
            database_id: DatabaseId::new(db).unwrap(),
            test_kind: kind,
            elapsed_ms: ms,
            started_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            location: None,
            outcome: Outcome::Success,
            cache_hit: false,
        }
    }

    fn located(id: &str, ms: u64, lat: f64, lon: f64) -> TrialResult {
        TrialResult {
            location: GeoLocation::new(lat, lon, "", GeoSource::Provider),
            ..trial(id, "memory", TestKind::UPLOAD_SMALL, ms)
        }
    }

    #[test]
    fn mean_rounding() {
        assert_eq!(mean_to_tenths(600, 3), 200.0);
        assert_eq!(mean_to_tenths(10, 3), 3.3);
        assert_eq!(mean_to_tenths(20, 3), 6.7);
        assert_eq!(mean_to_tenths(1, 4), 0.3); // 0.25 rounds half up
        assert_eq!(mean_to_tenths(0, 7), 0.0);
    }

    #[test]
    fn append_and_query() {
        let store = ResultStore::in_memory(StoreOptions::default());
        store
            .append(trial("a", "memory", TestKind::UPLOAD_SMALL, 5))
            .unwrap();
        assert_eq!(store.query_trials(&TrialFilter::run("run")).len(), 1);
        assert!(store.query_trials(&TrialFilter::run("nope")).is_empty());
        assert!(matches!(
            store.append(trial("a", "memory", TestKind::UPLOAD_SMALL, 5)),
            Err(ResultStoreError::DuplicateTrial(_))
        ));
    }

    #[test]
    fn query_filters_and_orders() {
        let store = ResultStore::in_memory(StoreOptions::default());
        let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        for i in 0..3u64 {
            let mut t = trial(&format!("m{i}"), "memory", TestKind::UPLOAD_SMALL, i);
            t.started_at = base + Duration::seconds(10 - i as i64);
            store.append(t).unwrap();
        }
        store
            .append(trial("x", "other", TestKind::UPLOAD_SMALL, 1))
            .unwrap();
        store
            .append(trial("y", "memory", TestKind::UPDATE_LARGE, 1))
            .unwrap();
        let filter = TrialFilter {
            database_id: Some(DatabaseId::new("memory").unwrap()),
            test_kind: Some(TestKind::UPLOAD_SMALL),
            ..TrialFilter::default()
        };
        let got = store.query_trials(&filter);
        assert_eq!(got.len(), 3);
        assert!(got.windows(2).all(|w| w[0].started_at <= w[1].started_at));
        assert_eq!(store.query_trials(&TrialFilter::default()).len(), 5);
    }

    #[test]
    fn aggregate_arithmetic() {
        let store = ResultStore::in_memory(StoreOptions::default());
        for (i, ms) in [100, 200, 300].into_iter().enumerate() {
            store
                .append(trial(&i.to_string(), "memory", TestKind::UPLOAD_SMALL, ms))
                .unwrap();
        }
        let mut failed = trial("err", "memory", TestKind::UPLOAD_SMALL, 1);
        failed.outcome = Outcome::Error("StoreUnavailable".into());
        store.append(failed).unwrap();
        let agg = store.aggregates();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].count, 3);
        assert_eq!(agg[0].mean_ms, 200.0);
        assert_eq!(agg[0].min_ms, 100);
        assert_eq!(agg[0].max_ms, 300);
    }

    #[test]
    fn cache_hits_can_be_excluded() {
        let options = StoreOptions {
            exclude_cache_hits: true,
            ..StoreOptions::default()
        };
        let store = ResultStore::in_memory(options);
        store
            .append(trial("a", "memory", TestKind::UPLOAD_SMALL, 260))
            .unwrap();
        let mut hit = trial("b", "memory", TestKind::UPLOAD_SMALL, 0);
        hit.cache_hit = true;
        store.append(hit).unwrap();
        assert_eq!(store.aggregates()[0].min_ms, 260);
    }

    #[test]
    fn extremes_single_and_unknown() {
        let store = ResultStore::in_memory(StoreOptions::default());
        store
            .append(trial("a", "memory", TestKind::UPLOAD_LARGE, 77))
            .unwrap();
        let e = store.extremes(&DatabaseId::new("memory").unwrap()).unwrap();
        assert_eq!(
            e,
            vec![KindExtremes {
                test_kind: TestKind::UPLOAD_LARGE,
                best_ms: 77,
                worst_ms: 77
            }]
        );
        assert!(matches!(
            store.extremes(&DatabaseId::new("ghost").unwrap()),
            Err(ResultStoreError::UnknownDatabase(_))
        ));
    }

    #[test]
    fn heatmap_buckets() {
        let store = ResultStore::in_memory(StoreOptions::default());
        assert!(store.heatmap_points().is_empty());
        store.append(located("a", 100, 43.94, -78.90)).unwrap();
        store.append(located("b", 300, 43.94, -78.90)).unwrap();
        store.append(trial("c", "memory", TestKind::UPLOAD_SMALL, 5)).unwrap();
        let pts = store.heatmap_points();
        assert_eq!(
            pts,
            vec![HeatPoint {
                lat_bucket: 43.9,
                lon_bucket: -78.9,
                avg_ms: 200.0,
                count: 2
            }]
        );
        store.append(located("d", 1, 10.04, 10.0)).unwrap();
        store.append(located("e", 1, 10.06, 10.0)).unwrap();
        let lats: Vec<f64> = store.heatmap_points().iter().map(|p| p.lat_bucket).collect();
        assert!(lats.contains(&10.0) && lats.contains(&10.1));
    }

    #[test]
    fn reopen_replays_and_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.ndjson");
        {
            let store = ResultStore::open(&path, StoreOptions::default()).unwrap();
            assert!(store.is_empty());
            for i in 0..10u64 {
                store
                    .append(trial(&i.to_string(), "memory", TestKind::UPLOAD_SMALL, i * 3))
                    .unwrap();
            }
        }
        let store = ResultStore::open(&path, StoreOptions::default()).unwrap();
        assert_eq!(store.len(), 10);
        assert_eq!(store.aggregates()[0].max_ms, 27);
        drop(store);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"trial_id\":\"torn\",\"run");
        std::fs::write(&path, &text).unwrap();
        match ResultStore::open(&path, StoreOptions::default()) {
            Err(ResultStoreError::CorruptLog { line, .. }) => assert_eq!(line, 11),
            Ok(_) => panic!("torn tail accepted"),
            Err(e) => panic!("unexpected {e}"),
        }
        let repaired = ResultStore::open(
            &path,
            StoreOptions {
                repair_torn_tail: true,
                ..StoreOptions::default()
            },
        )
        .unwrap();
        assert_eq!(repaired.len(), 10);
        repaired
            .append(trial("after", "memory", TestKind::UPLOAD_SMALL, 1))
            .unwrap();
        drop(repaired);
        assert_eq!(ResultStore::open(&path, StoreOptions::default()).unwrap().len(), 11);
    }

    #[test]
    fn read_only_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent.ndjson");
        let store = ResultStore::read_only(&path, StoreOptions::default()).unwrap();
        assert!(store.is_empty());
        assert!(!path.exists());
        assert!(matches!(
            store.append(trial("a", "memory", TestKind::UPLOAD_SMALL, 1)),
            Err(ResultStoreError::StorageFailure(_))
        ));
    }

    #[test]
    fn garbage_mid_log_is_corrupt_even_when_repairing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.ndjson");
        let good = serde_json::to_string(&trial("a", "memory", TestKind::UPLOAD_SMALL, 1)).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        let options = StoreOptions {
            repair_torn_tail: true,
            ..StoreOptions::default()
        };
        assert!(matches!(
            ResultStore::open(&path, options),
            Err(ResultStoreError::CorruptLog { line: 2, .. })
        ));
    }
}
