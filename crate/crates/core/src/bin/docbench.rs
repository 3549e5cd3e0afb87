//! `docbench serve | run | report`
//!
//! Exit codes: 0 success, 1 bad input / config / corrupt log, 2 bind failure,
//! 3 a benchmark trial ended in error.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tokio::sync::broadcast::error::RecvError;

use docbench::config::Config;
use docbench::engine::{EngineEvent, RunSpec};
use docbench::report::{Report, ReportFormat};
use docbench::store::{mean_to_tenths, ResultStore};
use docbench::trial::{Outcome, TrialResult};
use docbench::{DatabaseId, TestKind};

const EXIT_INPUT: u8 = 1;
const EXIT_BIND: u8 = 2;
const EXIT_TRIAL_ERROR: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "docbench", version, about = "Document store latency benchmark service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API and the static UI.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run a benchmark headlessly and append its trials to the log.
    Run {
        /// Comma-separated database ids.
        #[arg(long, value_delimiter = ',', required = true)]
        db: Vec<String>,
        #[arg(long)]
        test: String,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Payload seed; derived from the run id when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Client address to geolocate.
        #[arg(long)]
        ip: Option<IpAddr>,
    },
    /// Print the average, maximum and minimum tables.
    Report {
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `log_path` from the config.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    let code = match cli.command {
        Command::Serve { config, listen } => runtime.block_on(serve(config, listen)),
        Command::Run {
            db,
            test,
            reps,
            config,
            seed,
            ip,
        } => runtime.block_on(run(db, test, reps, config, seed, ip)),
        Command::Report { format, config, log } => report(format, config, log),
    };
    ExitCode::from(code)
}

fn load_config(path: Option<PathBuf>) -> Result<Config, u8> {
    Config::load(path.as_deref()).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_INPUT
    })
}

async fn serve(config_path: Option<PathBuf>, listen: Option<String>) -> u8 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let engine = match config.build_engine() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let addr = listen.unwrap_or_else(|| config.listen.clone());
    let listener = match tokio::net::TcpListener::bind(&addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {addr}: {e}");
            return EXIT_BIND;
        }
    };
    match listener.local_addr() {
        Ok(bound) => eprintln!("listening on http://{bound}"),
        Err(_) => eprintln!("listening on {addr}"),
    }
    let app = docbench::api::router(engine, config.static_dir.clone());
    let served = axum::serve(
        listener,
        app.into_make_service_with_connect_info::<SocketAddr>(),
    )
    .with_graceful_shutdown(shutdown_signal())
    .await;
    match served {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: server failed: {e}");
            1
        }
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

async fn run(
    dbs: Vec<String>,
    test: String,
    reps: u32,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    ip: Option<IpAddr>,
) -> u8 {
    let test_kind: TestKind = match test.parse() {
        Ok(k) => k,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let registry = match config.build_registry() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let mut ids: Vec<DatabaseId> = Vec::with_capacity(dbs.len());
    for name in &dbs {
        match registry.resolve(name) {
            Ok(id) => ids.push(id),
            Err(e) => {
                eprintln!("error: {e}; registered: {}", join(registry.ids()));
                return EXIT_INPUT;
            }
        }
    }
    let engine = match config.build_engine() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };

    let mut spec = RunSpec::new(test_kind, ids.clone(), "cli").repetitions(reps);
    if let Some(seed) = seed {
        spec = spec.seed(seed);
    }
    let mut events = engine.subscribe();
    let run_id = match engine.start_run(spec, ip.unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED))) {
        Ok(id) => id,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    println!("run {run_id} {test_kind} reps={reps}");
    loop {
        match events.recv().await {
            Ok(EngineEvent::Trial(t)) if t.run_id == run_id => println!("{}", trial_line(&t)),
            Ok(EngineEvent::RunCompleted(s)) if s.run_id == run_id => break,
            Ok(_) => {}
            Err(RecvError::Lagged(n)) => tracing::warn!(skipped = n, "trial output lagged"),
            Err(RecvError::Closed) => break,
        }
    }
    let _ = engine.wait(&run_id).await;

    let trials = engine.trials(&run_id);
    let mut any_error = false;
    for id in &ids {
        let mine: Vec<&TrialResult> = trials.iter().filter(|t| &t.database_id == id).collect();
        let errors = mine.iter().filter(|t| !t.outcome.is_success()).count();
        any_error |= errors > 0;
        let ok: Vec<u64> = mine
            .iter()
            .filter(|t| t.outcome.is_success())
            .map(|t| t.elapsed_ms)
            .collect();
        if ok.is_empty() {
            println!("summary {id} count=0 errors={errors}");
        } else {
            let sum: u128 = ok.iter().map(|&ms| u128::from(ms)).sum();
            println!(
                "summary {id} count={} mean={:.1} min={} max={} errors={errors}",
                ok.len(),
                mean_to_tenths(sum, ok.len() as u64),
                ok.iter().min().expect("non-empty"),
                ok.iter().max().expect("non-empty"),
            );
        }
    }
    if any_error {
        EXIT_TRIAL_ERROR
    } else {
        0
    }
}

fn trial_line(t: &TrialResult) -> String {
    let outcome = match &t.outcome {
        Outcome::Success => "success".to_string(),
        Outcome::Error(kind) => format!("error:{kind}"),
    };
    let hit = if t.cache_hit { " cache_hit" } else { "" };
    format!(
        "trial {} {} {}ms {outcome}{hit}",
        t.trial_id, t.database_id, t.elapsed_ms
    )
}

fn report(format: ReportFormat, config_path: Option<PathBuf>, log: Option<PathBuf>) -> u8 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let path = log.unwrap_or_else(|| config.log_path.clone());
    match ResultStore::read_only(&path, config.store) {
        Ok(store) => {
            print!("{}", Report::from_store(&store).render(format));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn join(ids: &[DatabaseId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
