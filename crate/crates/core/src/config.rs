//! Service configuration: one TOML file plus `DOCBENCH_*` environment overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! log_path = "data/trials.ndjson"
//! static_dir = "web/dist"          # optional
//! global_lock = false
//!
//! [store]
//! sync_writes = false
//! exclude_cache_hits = false
//! repair_torn_tail = true
//!
//! [payload]
//! small_bytes = 5120
//! large_bytes = 204800
//!
//! [geolocation]
//! endpoint_url_template = "https://ipwho.is/{ip}"
//! timeout_ms = 1500
//!
//! [[adapters]]
//! id = "sim_couchdb"
//! kind = "simulated"
//! profile = "couchdb"
//! scale = 0.1
//! jitter_fraction = 0.1
//! dedupe = true
//!
//! [[adapters]]
//! id = "couch"
//! kind = "http"
//! base_url = "http://10.0.0.5:5984/bench"
//! timeout_ms = 5000
//! ```
//!
//! Without an `adapters` list the registry holds `memory` and the four
//! `sim_*` stores at full scale with 10% jitter.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::adapters::{
    http_store, with_dedupe, with_delay, DelayModel, DelaySpec, HttpStoreConfig, MemoryStore,
    SharedAdapter,
};
use crate::engine::{Engine, EngineConfig, Registry};
use crate::geo::{Geolocator, ProviderConfig};
use crate::model::{DatabaseId, PayloadSizes, TestKind, MIN_PAYLOAD_BYTES};
use crate::profiles::SimProfile;
use crate::store::{ResultStore, ResultStoreError, StoreOptions};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_LOG_PATH: &str = "docbench-trials.ndjson";
pub const DEFAULT_JITTER_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error(transparent)]
    Store(#[from] ResultStoreError),
}

fn invalid(key: impl Into<String>, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Memory,
    Simulated,
    Http,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub id: String,
    pub kind: AdapterKind,
    #[serde(default)]
    pub dedupe: bool,
    pub max_document_bytes: Option<usize>,
    // simulated
    pub profile: Option<SimProfile>,
    pub scale: Option<f64>,
    pub jitter_fraction: Option<f64>,
    pub delays: Option<BTreeMap<String, DelaySpec>>,
    // http
    pub base_url: Option<String>,
    pub timeout_ms: Option<u64>,
    pub auth_header: Option<String>,
    pub persistent_connection: Option<bool>,
}

impl AdapterConfig {
    fn bare(id: &str, kind: AdapterKind) -> Self {
        Self {
            id: id.to_string(),
            kind,
            dedupe: false,
            max_document_bytes: None,
            profile: None,
            scale: None,
            jitter_fraction: None,
            delays: None,
            base_url: None,
            timeout_ms: None,
            auth_header: None,
            persistent_connection: None,
        }
    }

    pub fn memory(id: &str) -> Self {
        Self::bare(id, AdapterKind::Memory)
    }

    pub fn simulated(profile: SimProfile) -> Self {
        Self {
            profile: Some(profile),
            ..Self::bare(profile.default_id(), AdapterKind::Simulated)
        }
    }
}

fn default_adapters() -> Vec<AdapterConfig> {
    std::iter::once(AdapterConfig::memory("memory"))
        .chain(SimProfile::ALL.into_iter().map(AdapterConfig::simulated))
        .collect()
}

fn default_listen() -> String {
    DEFAULT_LISTEN.to_string()
}

fn default_log_path() -> PathBuf {
    PathBuf::from(DEFAULT_LOG_PATH)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_log_path")]
    pub log_path: PathBuf,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub global_lock: bool,
    #[serde(default)]
    pub store: StoreOptions,
    #[serde(default)]
    pub payload: PayloadSizes,
    #[serde(default)]
    pub geolocation: Option<ProviderConfig>,
    #[serde(default = "default_adapters")]
    pub adapters: Vec<AdapterConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Self::from_toml_str("").expect("empty config is valid")
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (or starts from defaults) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml_str(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    /// Recognized variables: `DOCBENCH_LISTEN`, `DOCBENCH_LOG_PATH`, `DOCBENCH_STATIC_DIR`,
    /// `DOCBENCH_GLOBAL_LOCK`, `DOCBENCH_GEO_ENDPOINT`, `DOCBENCH_GEO_TIMEOUT_MS`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        let mut geo_endpoint = None;
        let mut geo_timeout = None;
        for (name, value) in vars {
            match name.as_str() {
                "DOCBENCH_LISTEN" => self.listen = value,
                "DOCBENCH_LOG_PATH" => self.log_path = value.into(),
                "DOCBENCH_STATIC_DIR" => self.static_dir = Some(value.into()),
                "DOCBENCH_GLOBAL_LOCK" => {
                    self.global_lock = value
                        .parse()
                        .map_err(|_| invalid("DOCBENCH_GLOBAL_LOCK", "expected true or false"))?;
                }
                "DOCBENCH_GEO_ENDPOINT" => geo_endpoint = Some(value),
                "DOCBENCH_GEO_TIMEOUT_MS" => {
                    geo_timeout = Some(
                        value
                            .parse::<u64>()
                            .map_err(|e| invalid("DOCBENCH_GEO_TIMEOUT_MS", e))?,
                    );
                }
                _ => {}
            }
        }
        if geo_endpoint.is_some() || geo_timeout.is_some() {
            let current = self.geolocation.clone();
            let template = geo_endpoint
                .or_else(|| current.as_ref().map(|g| g.endpoint_url_template.clone()))
                .ok_or_else(|| invalid("DOCBENCH_GEO_TIMEOUT_MS", "set without a provider endpoint"))?;
            let timeout = geo_timeout
                .or_else(|| current.as_ref().map(|g| g.timeout_ms))
                .unwrap_or(1500);
            self.geolocation = Some(ProviderConfig {
                endpoint_url_template: template,
                timeout_ms: timeout,
            });
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen
            .parse::<std::net::SocketAddr>()
            .map_err(|e| invalid("listen", e))?;
        for (key, bytes) in [
            ("payload.small_bytes", self.payload.small_bytes),
            ("payload.large_bytes", self.payload.large_bytes),
        ] {
            if bytes < MIN_PAYLOAD_BYTES {
                return Err(invalid(key, format!("must be at least {MIN_PAYLOAD_BYTES}")));
            }
        }
        if self.payload.large_bytes <= self.payload.small_bytes {
            return Err(invalid("payload.large_bytes", "must exceed payload.small_bytes"));
        }
        if let Some(geo) = &self.geolocation {
            geo.validate().map_err(|e| invalid("geolocation", e))?;
        }
        let mut seen = std::collections::HashSet::new();
        for (i, adapter) in self.adapters.iter().enumerate() {
            let key = |field: &str| format!("adapters[{i}].{field}");
            if DatabaseId::new(adapter.id.as_str()).is_err() {
                return Err(invalid(key("id"), "expected 1-32 characters of [a-z0-9_]"));
            }
            if !seen.insert(adapter.id.as_str()) {
                return Err(invalid(key("id"), format!("duplicate id {:?}", adapter.id)));
            }
            self.adapter_model(adapter, i)?;
        }
        Ok(())
    }

    fn adapter_model(&self, a: &AdapterConfig, i: usize) -> Result<Option<DelayModel>, ConfigError> {
        let key = |field: &str| format!("adapters[{i}].{field}");
        let forbid = |present: bool, field: &str| {
            if present {
                Err(invalid(key(field), format!("not valid for kind = {:?}", a.kind)))
            } else {
                Ok(())
            }
        };
        let sim_fields = a.profile.is_some() || a.scale.is_some() || a.jitter_fraction.is_some() || a.delays.is_some();
        let http_fields = a.base_url.is_some()
            || a.timeout_ms.is_some()
            || a.auth_header.is_some()
            || a.persistent_connection.is_some();
        match a.kind {
            AdapterKind::Memory => {
                forbid(sim_fields, "profile")?;
                forbid(http_fields, "base_url")?;
                Ok(None)
            }
            AdapterKind::Http => {
                forbid(sim_fields, "profile")?;
                forbid(a.max_document_bytes.is_some(), "max_document_bytes")?;
                let url = a
                    .base_url
                    .as_deref()
                    .ok_or_else(|| invalid(key("base_url"), "required for kind = \"http\""))?;
                HttpStoreConfig::new(url, a.timeout_ms.unwrap_or(5000))
                    .map_err(|e| invalid(key("base_url"), e))?;
                Ok(None)
            }
            AdapterKind::Simulated => {
                forbid(http_fields, "base_url")?;
                let scale = a.scale.unwrap_or(1.0);
                let jitter = a.jitter_fraction.unwrap_or(DEFAULT_JITTER_FRACTION);
                if !(scale.is_finite() && scale >= 0.0) {
                    return Err(invalid(key("scale"), "must be a non-negative number"));
                }
                if !(0.0..=1.0).contains(&jitter) {
                    return Err(invalid(key("jitter_fraction"), "must lie in [0, 1]"));
                }
                let mut model = match a.profile {
                    Some(p) => p.delay_model(scale, jitter).map_err(|e| invalid(key("profile"), e))?,
                    None if a.delays.is_some() => DelayModel::default(),
                    None => {
                        return Err(invalid(key("profile"), "simulated adapters need a profile or a delays table"))
                    }
                };
                for (name, spec) in a.delays.iter().flatten() {
                    let kind: TestKind = name
                        .parse()
                        .map_err(|e| invalid(key(&format!("delays.{name}")), e))?;
                    model
                        .set(kind, *spec)
                        .map_err(|e| invalid(key(&format!("delays.{name}")), e))?;
                }
                Ok(Some(model.with_large_threshold(self.payload.large_bytes)))
            }
        }
    }

    /// Instantiates every configured adapter.
    pub fn build_registry(&self) -> Result<Registry, ConfigError> {
        let mut registry = Registry::new();
        for (i, a) in self.adapters.iter().enumerate() {
            let id = DatabaseId::new(a.id.as_str()).map_err(|e| invalid(format!("adapters[{i}].id"), e))?;
            let model = self.adapter_model(a, i)?;
            let memory = |id: DatabaseId| -> SharedAdapter {
                let store = MemoryStore::new(id);
                Arc::new(match a.max_document_bytes {
                    Some(limit) => store.with_limit(limit),
                    None => store,
                })
            };
            let mut adapter = match a.kind {
                AdapterKind::Memory => memory(id),
                AdapterKind::Simulated => with_delay(memory(id), model.expect("simulated model")),
                AdapterKind::Http => {
                    let mut http = HttpStoreConfig::new(
                        a.base_url.as_deref().expect("validated"),
                        a.timeout_ms.unwrap_or(5000),
                    )
                    .map_err(|e| invalid(format!("adapters[{i}].base_url"), e))?;
                    http.auth_header = a.auth_header.clone();
                    http.persistent_connection = a.persistent_connection.unwrap_or(true);
                    http_store(id, http).map_err(|e| invalid(format!("adapters[{i}]"), e))?
                }
            };
            if a.dedupe {
                adapter = with_dedupe(adapter);
            }
            registry
                .register(adapter)
                .map_err(|e| invalid(format!("adapters[{i}].id"), e))?;
        }
        Ok(registry)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            payload_sizes: self.payload,
            global_lock: self.global_lock,
        }
    }

    pub fn open_store(&self) -> Result<ResultStore, ConfigError> {
        Ok(ResultStore::open(&self.log_path, self.store)?)
    }

    /// Opens the log and wires registry, geolocation and store into an engine.
    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        let registry = self.build_registry()?;
        let store = Arc::new(self.open_store()?);
        let geo = Arc::new(Geolocator::new(self.geolocation.clone()));
        Ok(Engine::new(registry, store, geo, self.engine_config()))
    }
}
