//! C ABI over the docbench core.
//!
//! Every entry point returns a [`DocbenchStatus`]. On failure a description is
//! kept per thread and can be fetched with [`docbench_last_error_message`].
//! Strings handed out by this library are NUL-terminated UTF-8 and must be
//! released with [`docbench_string_free`]. Handles are opaque and released
//! with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::net::{IpAddr, Ipv4Addr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, size_t};

use docbench::config::{Config, ConfigError};
use docbench::engine::{Engine, EngineError, RunSpec};
use docbench::model::SizeClass;
use docbench::report::{Report, ReportFormat};
use docbench::store::{StoreOptions, TrialFilter};
use docbench::{generate_payload, DatabaseId, ResultStore, ResultStoreError, TestKind, TrialResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocbenchStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    BufferTooSmall = 4,
    Config = 5,
    Storage = 6,
    CorruptLog = 7,
    DuplicateTrial = 8,
    UnknownDatabase = 9,
    RunRejected = 10,
    Panic = 11,
}

/// Handle to a trial log and its aggregate views.
pub struct DocbenchStore {
    inner: ResultStore,
}

/// Handle to a configured engine plus the runtime that drives it.
pub struct DocbenchBench {
    runtime: tokio::runtime::Runtime,
    engine: Engine,
}

struct Failure {
    status: DocbenchStatus,
    message: String,
}

impl Failure {
    fn new(status: DocbenchStatus, message: impl ToString) -> Self {
        Self {
            status,
            message: message.to_string(),
        }
    }
}

impl From<ResultStoreError> for Failure {
    fn from(e: ResultStoreError) -> Self {
        let status = match &e {
            ResultStoreError::DuplicateTrial(_) => DocbenchStatus::DuplicateTrial,
            ResultStoreError::StorageFailure(_) => DocbenchStatus::Storage,
            ResultStoreError::CorruptLog { .. } => DocbenchStatus::CorruptLog,
            ResultStoreError::UnknownDatabase(_) => DocbenchStatus::UnknownDatabase,
        };
        Failure::new(status, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Store(inner) => inner.into(),
            other => Failure::new(DocbenchStatus::Config, other),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(inner) => inner.into(),
            EngineError::UnknownDatabase(_) => Failure::new(DocbenchStatus::UnknownDatabase, e),
            EngineError::RunAlreadyActive(_) => Failure::new(DocbenchStatus::RunRejected, e),
            other => Failure::new(DocbenchStatus::InvalidArgument, other),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DocbenchStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            DocbenchStatus::Ok
        }
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&format!("internal panic: {message}"));
            DocbenchStatus::Panic
        }
    }
}

/// # Safety
/// `p` is NULL or a valid NUL-terminated string that outlives the returned borrow.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(DocbenchStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(DocbenchStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` is NULL or a valid NUL-terminated string.
unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

/// # Safety
/// `out` is NULL or valid for a pointer write.
unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(DocbenchStatus::NullArgument, "out is NULL"));
    }
    let c = CString::new(s).map_err(|e| Failure::new(DocbenchStatus::InvalidArgument, e))?;
    *out = c.into_raw();
    Ok(())
}

/// # Safety
/// `out` is NULL or valid for a pointer write.
unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(DocbenchStatus::NullArgument, "out is NULL"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `p` is NULL or a live handle produced by this library.
unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(DocbenchStatus::NullArgument, format!("{name} is NULL")))
}

fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string(value).expect("view types serialize")
}

/// Description of the last failed call on this thread, or NULL after a
/// successful call. Free with [`docbench_string_free`].
#[no_mangle]
pub extern "C" fn docbench_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// # Safety
/// `s` is NULL or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn docbench_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes a deterministic JSON document of exactly `target_bytes` bytes into
/// `buf`. `*written` receives the length; with a short buffer it receives the
/// required length and `BufferTooSmall` is returned.
///
/// # Safety
/// `buf` is valid for `buf_len` byte writes; `written` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_payload_generate(
    target_bytes: size_t,
    seed: u64,
    buf: *mut u8,
    buf_len: size_t,
    written: *mut size_t,
) -> DocbenchStatus {
    guard(|| {
        if written.is_null() {
            return Err(Failure::new(DocbenchStatus::NullArgument, "written is NULL"));
        }
        let payload = generate_payload(SizeClass::new(target_bytes), seed)
            .map_err(|e| Failure::new(DocbenchStatus::InvalidArgument, e))?;
        *written = payload.body.len();
        if buf_len < payload.body.len() {
            return Err(Failure::new(
                DocbenchStatus::BufferTooSmall,
                format!("need {} bytes, have {buf_len}", payload.body.len()),
            ));
        }
        if buf.is_null() {
            return Err(Failure::new(DocbenchStatus::NullArgument, "buf is NULL"));
        }
        ptr::copy_nonoverlapping(payload.body.as_ptr(), buf, payload.body.len());
        Ok(())
    })
}

/// Opens (creating if absent) the trial log at `path`. A torn final record is
/// dropped when `repair_torn_tail` is true and reported as `CorruptLog` otherwise.
///
/// # Safety
/// `path` is a valid NUL-terminated string; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_open(
    path: *const c_char,
    repair_torn_tail: bool,
    out: *mut *mut DocbenchStore,
) -> DocbenchStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let options = StoreOptions {
            repair_torn_tail,
            ..StoreOptions::default()
        };
        let inner = ResultStore::open(Path::new(path), options)?;
        write_handle(out, DocbenchStore { inner })
    })
}

/// A store with no backing file.
///
/// # Safety
/// `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_open_in_memory(out: *mut *mut DocbenchStore) -> DocbenchStatus {
    guard(|| {
        write_handle(
            out,
            DocbenchStore {
                inner: ResultStore::in_memory(StoreOptions::default()),
            },
        )
    })
}

/// # Safety
/// `store` is NULL or a handle from `docbench_store_open*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_free(store: *mut DocbenchStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Appends one trial given as a JSON object in log-line form.
///
/// # Safety
/// `store` is a live handle; `trial_json` is a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_append_json(
    store: *const DocbenchStore,
    trial_json: *const c_char,
) -> DocbenchStatus {
    guard(|| {
        let store = handle(store, "store")?;
        let text = str_arg(trial_json, "trial_json")?;
        let trial: TrialResult = serde_json::from_str(text)
            .map_err(|e| Failure::new(DocbenchStatus::InvalidArgument, e))?;
        store.inner.append(trial)?;
        Ok(())
    })
}

/// # Safety
/// `store` is a live handle; `count` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_len(
    store: *const DocbenchStore,
    count: *mut size_t,
) -> DocbenchStatus {
    guard(|| {
        let store = handle(store, "store")?;
        if count.is_null() {
            return Err(Failure::new(DocbenchStatus::NullArgument, "count is NULL"));
        }
        *count = store.inner.len();
        Ok(())
    })
}

/// Per (database, test kind) count/mean/min/max as a JSON array.
///
/// # Safety
/// `store` is a live handle; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_aggregates_json(
    store: *const DocbenchStore,
    out: *mut *mut c_char,
) -> DocbenchStatus {
    guard(|| {
        let store = handle(store, "store")?;
        write_string(out, to_json(&store.inner.aggregates()))
    })
}

/// Best and worst latency per test kind for `database_id` as a JSON array.
///
/// # Safety
/// `store` is a live handle; `database_id` is a valid NUL-terminated string;
/// `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_extremes_json(
    store: *const DocbenchStore,
    database_id: *const c_char,
    out: *mut *mut c_char,
) -> DocbenchStatus {
    guard(|| {
        let store = handle(store, "store")?;
        let id = DatabaseId::new(str_arg(database_id, "database_id")?)
            .map_err(|e| Failure::new(DocbenchStatus::InvalidArgument, e))?;
        write_string(out, to_json(&store.inner.extremes(&id)?))
    })
}

/// Location-bucketed average latency as a JSON array.
///
/// # Safety
/// `store` is a live handle; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_heatmap_json(
    store: *const DocbenchStore,
    out: *mut *mut c_char,
) -> DocbenchStatus {
    guard(|| {
        let store = handle(store, "store")?;
        write_string(out, to_json(&store.inner.heatmap_points()))
    })
}

/// Average, maximum and minimum tables rendered as `"csv"` or `"json"`.
///
/// # Safety
/// `store` is a live handle; `format` is a valid NUL-terminated string;
/// `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_store_report(
    store: *const DocbenchStore,
    format: *const c_char,
    out: *mut *mut c_char,
) -> DocbenchStatus {
    guard(|| {
        let store = handle(store, "store")?;
        let format: ReportFormat = str_arg(format, "format")?
            .parse()
            .map_err(|e: String| Failure::new(DocbenchStatus::InvalidArgument, e))?;
        write_string(out, Report::from_store(&store.inner).render(format))
    })
}

/// Builds the engine from a TOML config file, or from defaults when
/// `config_path` is NULL. `DOCBENCH_*` environment overrides apply.
///
/// # Safety
/// `config_path` is NULL or a valid NUL-terminated string; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_bench_new(
    config_path: *const c_char,
    out: *mut *mut DocbenchBench,
) -> DocbenchStatus {
    guard(|| {
        let path = opt_str_arg(config_path, "config_path")?;
        let config = Config::load(path.map(Path::new))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| Failure::new(DocbenchStatus::Storage, e))?;
        let engine = {
            let _entered = runtime.enter();
            config.build_engine()?
        };
        write_handle(out, DocbenchBench { runtime, engine })
    })
}

/// # Safety
/// `bench` is NULL or a handle from [`docbench_bench_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn docbench_bench_free(bench: *mut DocbenchBench) {
    if !bench.is_null() {
        drop(Box::from_raw(bench));
    }
}

/// Runs `repetitions` trials of `test_kind` against each comma-separated id in
/// `database_ids` and blocks until done. `*out` receives
/// `{"status": {...}, "trials": [...]}`. Trial errors are reported inside the
/// trials, not through the return code.
///
/// # Safety
/// `bench` is a live handle; string arguments are valid NUL-terminated
/// strings; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn docbench_bench_run(
    bench: *const DocbenchBench,
    database_ids: *const c_char,
    test_kind: *const c_char,
    repetitions: u32,
    seed: u64,
    out: *mut *mut c_char,
) -> DocbenchStatus {
    guard(|| {
        let bench = handle(bench, "bench")?;
        let kind: TestKind = str_arg(test_kind, "test_kind")?
            .parse()
            .map_err(|e| Failure::new(DocbenchStatus::InvalidArgument, e))?;
        let ids = str_arg(database_ids, "database_ids")?
            .split(',')
            .map(|name| bench.engine.registry().resolve(name.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = RunSpec::new(kind, ids, "ffi").repetitions(repetitions).seed(seed);
        let status = bench.runtime.block_on(async {
            let run_id = bench
                .engine
                .start_run(spec, IpAddr::V4(Ipv4Addr::UNSPECIFIED))?;
            bench.engine.wait(&run_id).await
        })?;
        let trials = bench.engine.store().query_trials(&TrialFilter::run(&status.run_id));
        write_string(
            out,
            to_json(&serde_json::json!({ "status": status, "trials": trials })),
        )
    })
}
