//! Run orchestration: one test kind per run, fanned out across databases.
//!
//! A run executes `repetitions` trials per selected database. Each database
//! gets its own task; trials within a database run sequentially. Every trial
//! is appended to the [`ResultStore`] and broadcast as an [`EngineEvent`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::IpAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinSet;

use crate::adapters::{Ack, SharedAdapter, StoreError};
use crate::geo::{GeoLocation, Geolocator};
use crate::model::{
    document_key, generate_payload, DatabaseId, Operation, Payload, PayloadSizes, SizeClass, TestKind,
};
use crate::store::{ResultStore, ResultStoreError, TrialFilter};
use crate::trial::{Outcome, TrialResult};

/// Broadcast buffer; slower subscribers lose the oldest events.
pub const EVENT_BUFFER: usize = 1024;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("a run is already active for session {0:?}")]
    RunAlreadyActive(String),
    #[error("unknown database {0:?}")]
    UnknownDatabase(String),
    #[error("no databases selected")]
    EmptySelection,
    #[error("database {0} selected more than once")]
    DuplicateSelection(DatabaseId),
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("database {0} is already registered")]
    DuplicateRegistration(DatabaseId),
    #[error(transparent)]
    Store(#[from] ResultStoreError),
}

/// The set of benchmarkable adapters, keyed by id.
#[derive(Default, Clone)]
pub struct Registry {
    adapters: BTreeMap<DatabaseId, SharedAdapter>,
    order: Vec<DatabaseId>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, adapter: SharedAdapter) -> Result<(), EngineError> {
        let id = adapter.id().clone();
        if self.adapters.contains_key(&id) {
            return Err(EngineError::DuplicateRegistration(id));
        }
        self.order.push(id.clone());
        self.adapters.insert(id, adapter);
        Ok(())
    }

    pub fn get(&self, id: &DatabaseId) -> Option<&SharedAdapter> {
        self.adapters.get(id)
    }

    pub fn contains(&self, id: &DatabaseId) -> bool {
        self.adapters.contains_key(id)
    }

    /// Ids in registration order.
    pub fn ids(&self) -> &[DatabaseId] {
        &self.order
    }

    pub fn resolve(&self, name: &str) -> Result<DatabaseId, EngineError> {
        DatabaseId::new(name)
            .ok()
            .filter(|id| self.contains(id))
            .ok_or_else(|| EngineError::UnknownDatabase(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub test_kind: TestKind,
    pub database_ids: Vec<DatabaseId>,
    pub repetitions: u32,
    /// Defaults to a value derived from the run id.
    pub payload_seed: Option<u64>,
    pub session_id: String,
}

impl RunSpec {
    pub fn new(test_kind: TestKind, database_ids: Vec<DatabaseId>, session_id: impl Into<String>) -> Self {
        Self {
            test_kind,
            database_ids,
            repetitions: 1,
            payload_seed: None,
            session_id: session_id.into(),
        }
    }

    pub fn repetitions(mut self, n: u32) -> Self {
        self.repetitions = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.payload_seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    Running,
    Completed,
    Failed,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Completed | RunState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    pub trials_done: u64,
    pub trials_total: u64,
    pub started_at: DateTime<Utc>,
    pub test_kind: TestKind,
    pub database_ids: Vec<DatabaseId>,
}

#[derive(Debug, Clone)]
pub enum EngineEvent {
    Trial(TrialResult),
    RunCompleted(RunStatus),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EngineConfig {
    pub payload_sizes: PayloadSizes,
    /// One run at a time across all sessions instead of per session.
    pub global_lock: bool,
}

struct RunHandle {
    status: Mutex<RunStatus>,
    state_tx: watch::Sender<RunState>,
}

impl RunHandle {
    fn snapshot(&self) -> RunStatus {
        self.status.lock().unwrap().clone()
    }

    fn set_state(&self, state: RunState) {
        self.status.lock().unwrap().state = state;
        self.state_tx.send_replace(state);
    }
}

struct Inner {
    registry: Registry,
    store: Arc<ResultStore>,
    geo: Arc<Geolocator>,
    config: EngineConfig,
    runs: Mutex<HashMap<String, Arc<RunHandle>>>,
    /// Lock key (session id, or `*` under the global lock) -> active run id.
    active: Mutex<HashMap<String, String>>,
    events: broadcast::Sender<EngineEvent>,
}

/// Cheaply cloneable handle to the shared engine.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

const GLOBAL_LOCK_KEY: &str = "*";

/// The documents a trial writes. Updates use the next seed so that the new
/// content differs from the stored one.
struct TrialPayloads {
    primary: Payload,
    secondary: Payload,
}

impl TrialPayloads {
    fn generate(size: SizeClass, seed: u64) -> Result<Self, String> {
        Ok(Self {
            primary: generate_payload(size, seed).map_err(|e| e.to_string())?,
            secondary: generate_payload(size, seed.wrapping_add(1)).map_err(|e| e.to_string())?,
        })
    }
}

/// Seed used when a run spec leaves it unset.
pub fn seed_for_run(run_id: &str) -> u64 {
    let digest = Sha256::digest(run_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl Engine {
    pub fn new(registry: Registry, store: Arc<ResultStore>, geo: Arc<Geolocator>, config: EngineConfig) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Self {
            inner: Arc::new(Inner {
                registry,
                store,
                geo,
                config,
                runs: Mutex::new(HashMap::new()),
                active: Mutex::new(HashMap::new()),
                events,
            }),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.inner.registry
    }

    pub fn store(&self) -> &Arc<ResultStore> {
        &self.inner.store
    }

    pub fn config(&self) -> EngineConfig {
        self.inner.config
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EngineEvent> {
        self.inner.events.subscribe()
    }

    fn validate(&self, spec: &RunSpec) -> Result<(), EngineError> {
        if spec.database_ids.is_empty() {
            return Err(EngineError::EmptySelection);
        }
        if spec.repetitions == 0 {
            return Err(EngineError::ZeroRepetitions);
        }
        let mut seen = HashSet::new();
        for id in &spec.database_ids {
            if !self.inner.registry.contains(id) {
                return Err(EngineError::UnknownDatabase(id.to_string()));
            }
            if !seen.insert(id) {
                return Err(EngineError::DuplicateSelection(id.clone()));
            }
        }
        Ok(())
    }

    /// Registers a run and starts it in the background. Must be called inside a tokio runtime.
    pub fn start_run(&self, spec: RunSpec, client_ip: IpAddr) -> Result<String, EngineError> {
        self.validate(&spec)?;
        let lock_key = if self.inner.config.global_lock {
            GLOBAL_LOCK_KEY.to_string()
        } else {
            spec.session_id.clone()
        };
        let run_id = uuid::Uuid::new_v4().to_string();
        {
            let mut active = self.inner.active.lock().unwrap();
            if active.contains_key(&lock_key) {
                return Err(EngineError::RunAlreadyActive(spec.session_id));
            }
            active.insert(lock_key.clone(), run_id.clone());
        }

        let status = RunStatus {
            run_id: run_id.clone(),
            state: RunState::Pending,
            trials_done: 0,
            trials_total: spec.database_ids.len() as u64 * u64::from(spec.repetitions),
            started_at: Utc::now(),
            test_kind: spec.test_kind,
            database_ids: spec.database_ids.clone(),
        };
        let (state_tx, _) = watch::channel(RunState::Pending);
        let handle = Arc::new(RunHandle {
            status: Mutex::new(status),
            state_tx,
        });
        self.inner
            .runs
            .lock()
            .unwrap()
            .insert(run_id.clone(), handle.clone());

        let engine = self.clone();
        let id = run_id.clone();
        tokio::spawn(async move {
            engine.drive(id, spec, client_ip, handle, lock_key).await;
        });
        Ok(run_id)
    }

    async fn drive(
        &self,
        run_id: String,
        spec: RunSpec,
        client_ip: IpAddr,
        handle: Arc<RunHandle>,
        lock_key: String,
    ) {
        handle.set_state(RunState::Running);
        let location = Some(self.inner.geo.lookup(client_ip).await).filter(GeoLocation::is_known);
        let seed = spec.payload_seed.unwrap_or_else(|| seed_for_run(&run_id));
        // Generating 200 KiB documents is CPU work, so it stays off the runtime
        // threads that time the other streams.
        let size = self.inner.config.payload_sizes.class(spec.test_kind.size);
        let payloads = tokio::task::spawn_blocking(move || TrialPayloads::generate(size, seed))
            .await
            .unwrap_or_else(|e| Err(e.to_string()));
        let payloads = Arc::new(payloads);

        let mut streams = JoinSet::new();
        for db in spec.database_ids.clone() {
            let engine = self.clone();
            let payloads = payloads.clone();
            let handle = handle.clone();
            let run_id = run_id.clone();
            let location = location.clone();
            let kind = spec.test_kind;
            let reps = spec.repetitions;
            streams.spawn(async move {
                let adapter = engine.inner.registry.get(&db).expect("validated").clone();
                let mut storage_ok = true;
                for rep in 0..reps {
                    let trial = engine
                        .run_trial(&adapter, &run_id, kind, &payloads, rep, location.clone())
                        .await;
                    if let Err(e) = engine.inner.store.append(trial.clone()) {
                        tracing::error!(run = %run_id, error = %e, "failed to record trial");
                        storage_ok = false;
                    }
                    handle.status.lock().unwrap().trials_done += 1;
                    let _ = engine.inner.events.send(EngineEvent::Trial(trial));
                }
                storage_ok
            });
        }
        let mut failed = false;
        while let Some(joined) = streams.join_next().await {
            failed |= !joined.unwrap_or(false);
        }

        // The lock goes first so that a caller woken by the terminal state can
        // start its next run straight away.
        {
            let mut active = self.inner.active.lock().unwrap();
            if active.get(&lock_key) == Some(&run_id) {
                active.remove(&lock_key);
            }
        }
        handle.set_state(if failed { RunState::Failed } else { RunState::Completed });
        let _ = self
            .inner
            .events
            .send(EngineEvent::RunCompleted(handle.snapshot()));
    }

    /// Executes one trial outside of any run bookkeeping. The result is not recorded.
    pub async fn execute_trial(
        &self,
        run_id: &str,
        db: &DatabaseId,
        kind: TestKind,
        seed: u64,
        rep_index: u32,
    ) -> Result<TrialResult, EngineError> {
        let adapter = self
            .inner
            .registry
            .get(db)
            .ok_or_else(|| EngineError::UnknownDatabase(db.to_string()))?
            .clone();
        let size = self.inner.config.payload_sizes.class(kind.size);
        let payloads = TrialPayloads::generate(size, seed);
        Ok(self.run_trial(&adapter, run_id, kind, &payloads, rep_index, None).await)
    }

    async fn run_trial(
        &self,
        adapter: &SharedAdapter,
        run_id: &str,
        kind: TestKind,
        payloads: &Result<TrialPayloads, String>,
        rep_index: u32,
        location: Option<GeoLocation>,
    ) -> TrialResult {
        let db = adapter.id().clone();
        let key = document_key(run_id, &db, rep_index);
        let mut trial = TrialResult {
            trial_id: format!("{run_id}:{db}:{rep_index}"),
            run_id: run_id.to_string(),
            database_id: db,
            test_kind: kind,
            elapsed_ms: 0,
            started_at: Utc::now(),
            location,
            outcome: Outcome::Success,
            cache_hit: false,
        };

        let TrialPayloads { primary, secondary } = match payloads {
            Ok(p) => p,
            Err(e) => {
                trial.outcome = Outcome::Error(e.clone());
                return trial;
            }
        };

        if adapter.capabilities().persistent_connection {
            if let Err(e) = adapter.connect().await {
                tracing::debug!(db = %trial.database_id, error = %e, "connection warm-up failed");
            }
        }

        if kind.operation != Operation::Upload {
            if let Err(e) = adapter.put(&key, primary).await {
                trial.outcome = Outcome::Error(e.kind().to_string());
                return trial;
            }
        }

        trial.started_at = Utc::now();
        let clock = Instant::now();
        let result: Result<Ack, StoreError> = match kind.operation {
            Operation::Upload => adapter.put(&key, primary).await,
            Operation::Retrieve => adapter.get(&key).await.map(|_| Ack::default()),
            Operation::Update => adapter.update(&key, secondary).await,
        };
        // as_millis truncates, i.e. floors to whole milliseconds.
        trial.elapsed_ms = clock.elapsed().as_millis() as u64;

        match result {
            Ok(ack) => trial.cache_hit = ack.cache_hit,
            Err(e) => {
                tracing::debug!(db = %trial.database_id, error = %e, "trial failed");
                trial.outcome = Outcome::Error(e.kind().to_string());
            }
        }
        trial
    }

    /// Status of a run. Completed runs, including those of an earlier process,
    /// are described from the log alone so every process reports them identically.
    pub fn run_status(&self, run_id: &str) -> Result<RunStatus, EngineError> {
        if let Some(handle) = self.inner.runs.lock().unwrap().get(run_id) {
            let snapshot = handle.snapshot();
            if snapshot.state != RunState::Completed || snapshot.trials_done == 0 {
                return Ok(snapshot);
            }
        }
        let trials = self.inner.store.query_trials(&TrialFilter::run(run_id));
        let first = trials
            .first()
            .ok_or_else(|| EngineError::UnknownRun(run_id.to_string()))?;
        let mut database_ids: Vec<DatabaseId> = Vec::new();
        for t in &trials {
            if !database_ids.contains(&t.database_id) {
                database_ids.push(t.database_id.clone());
            }
        }
        Ok(RunStatus {
            run_id: run_id.to_string(),
            state: RunState::Completed,
            trials_done: trials.len() as u64,
            trials_total: trials.len() as u64,
            started_at: first.started_at,
            test_kind: first.test_kind,
            database_ids,
        })
    }

    /// Resolves once the run reaches a terminal state.
    pub async fn wait(&self, run_id: &str) -> Result<RunStatus, EngineError> {
        let handle = self.inner.runs.lock().unwrap().get(run_id).cloned();
        let Some(handle) = handle else {
            return self.run_status(run_id);
        };
        let mut rx = handle.state_tx.subscribe();
        // The sender lives in `handle`, so the channel cannot close while we wait.
        let _ = rx.wait_for(|s| s.is_terminal()).await;
        self.run_status(run_id)
    }

    pub fn trials(&self, run_id: &str) -> Vec<TrialResult> {
        self.inner.store.query_trials(&TrialFilter::run(run_id))
    }
}
