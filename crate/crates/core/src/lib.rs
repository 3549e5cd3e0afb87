//! Real-time latency benchmarking for document databases.
//!
//! A run executes one of six workloads ({upload, retrieve, update} × {small,
//! large}) against one or more [`StoreAdapter`](adapters::StoreAdapter)s,
//! records every timed trial in an append-only log, and serves
//! average/best/worst aggregates plus a latency heatmap over HTTP.

pub mod adapters;
pub mod api;
pub mod config;
pub mod engine;
pub mod geo;
pub mod model;
pub mod profiles;
pub mod report;
pub mod store;
pub mod trial;

pub use engine::{Engine, EngineError, EngineEvent, Registry, RunSpec, RunState, RunStatus};
pub use model::{document_key, generate_payload, test_matrix, DatabaseId, DocumentKey, Payload, TestKind};
pub use store::{AggregateStats, HeatPoint, ResultStore, ResultStoreError};
pub use trial::{Outcome, TrialResult};
