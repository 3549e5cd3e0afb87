mod common;

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::Value;

fn docbench() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_docbench"));
    cmd.env_remove("RUST_LOG");
    for (k, _) in std::env::vars() {
        if k.starts_with("DOCBENCH_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let log = dir.join("trials.ndjson");
    let path = dir.join("docbench.toml");
    std::fs::write(&path, format!("log_path = {:?}\n{body}", log.to_str().unwrap())).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    docbench().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const MEMORY: &str = "[[adapters]]\nid = \"memory\"\nkind = \"memory\"\n";

#[test]
fn run_counts_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MEMORY);
    let o = run(&["run", "--db", "memory", "--test", "upload_small", "--reps", "5", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("trial ")).count(), 5);
    assert!(out.contains("summary memory count=5 "), "{out}");
    let log = std::fs::read_to_string(dir.path().join("trials.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 5);
}

#[test]
fn run_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MEMORY);
    let cfg = cfg.to_str().unwrap();
    let o = run(&["run", "--db", "nonexistent", "--test", "upload_small", "--config", cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonexistent"));
    let o = run(&["run", "--db", "memory", "--test", "upload_medium", "--config", cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("trials.ndjson").exists());
}

#[test]
fn run_with_failing_trials_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "[[adapters]]\nid = \"down\"\nkind = \"http\"\nbase_url = \"http://127.0.0.1:{}/\"\ntimeout_ms = 300\n",
            common::dead_port()
        ),
    );
    let o = run(&["run", "--db", "down", "--test", "retrieve_small", "--reps", "2", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("error:StoreUnavailable"));
    assert!(stdout(&o).contains("summary down count=0 errors=2"));
}

#[test]
fn unknown_flags_print_usage() {
    for args in [&["--frobnicate"][..], &["run", "--db", "memory", "--test", "upload_small", "--turbo"], &["report", "--fmt", "csv"]] {
        let o = run(args);
        assert_ne!(o.status.code(), Some(0), "{args:?}");
        assert!(stderr(&o).contains("Usage:"), "{args:?}: {}", stderr(&o));
    }
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "listen = \"127.0.0.1:0\"\nlisten_backlog = 5\n").unwrap();
    let o = run(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("listen_backlog"), "{}", stderr(&o));

    std::fs::write(&cfg, "[[adapters]]\nid = \"x\"\nkind = \"http\"\nbase_url = \"ftp://h/\"\n").unwrap();
    let o = run(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("adapters[0]"), "{}", stderr(&o));
}

#[test]
fn serve_on_occupied_port_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MEMORY);
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let o = run(&["serve", "--config", cfg.to_str().unwrap(), "--listen", &addr]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[tokio::test]
async fn serve_answers_and_stops_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MEMORY);
    let mut child = docbench()
        .args(["serve", "--config", cfg.to_str().unwrap(), "--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let url = loop {
        let line = lines.next().expect("server announces its address").unwrap();
        if let Some(url) = line.strip_prefix("listening on ") {
            break url.to_string();
        }
    };
    let resp = reqwest::get(format!("{url}/api/aggregates")).await.unwrap();
    assert_eq!(resp.status(), reqwest::StatusCode::OK);

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let mut status = None;
    for _ in 0..100 {
        if let Some(s) = child.try_wait().unwrap() {
            status = Some(s);
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let status = status.unwrap_or_else(|| {
        let _ = child.kill();
        panic!("server did not stop on SIGTERM")
    });
    assert_eq!(status.code(), Some(0));
}

#[test]
fn report_of_empty_log_has_blank_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MEMORY);
    let o = run(&["report", "--format", "csv", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let rows: Vec<&str> = out.split("\r\n").filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 19);
    assert_eq!(rows[0], "table,test_kind");
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 2));
    assert!(!dir.path().join("trials.ndjson").exists(), "report must not create the log");
}

#[test]
fn report_of_corrupt_log_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("broken.ndjson");
    std::fs::write(&log, "{\"trial_id\": 1}\n").unwrap();
    let o = run(&["report", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn report_json_matches_recomputation_from_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[[adapters]]\nid = \"memory\"\nkind = \"memory\"\n\
         [[adapters]]\nid = \"quick\"\nkind = \"simulated\"\nprofile = \"firebase\"\nscale = 0.05\n",
    );
    let cfg = cfg.to_str().unwrap();
    for (test, reps) in [("upload_small", "4"), ("retrieve_large", "3"), ("update_small", "5")] {
        let o = run(&["run", "--db", "memory,quick", "--test", test, "--reps", reps, "--config", cfg]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let o = run(&["report", "--format", "json", "--config", cfg]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();

    let log = std::fs::read_to_string(dir.path().join("trials.ndjson")).unwrap();
    let mut cells: std::collections::BTreeMap<(String, String), Vec<u64>> = Default::default();
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        if v["outcome"] == "success" {
            cells
                .entry((v["database_id"].as_str().unwrap().into(), v["test_kind"].as_str().unwrap().into()))
                .or_default()
                .push(v["elapsed_ms"].as_u64().unwrap());
        }
    }
    assert_eq!(cells.len(), 6);
    for ((db, kind), samples) in &cells {
        let row = |table: &str| {
            report[table]
                .as_array()
                .unwrap()
                .iter()
                .find(|r| r["test_kind"] == kind.as_str())
                .unwrap()[db]
                .clone()
        };
        let sum: u64 = samples.iter().sum();
        let n = samples.len() as u64;
        // Half-up rounding to tenths in integers: floor((20*sum + n) / (2n)) tenths.
        let tenths = (20 * sum + n) / (2 * n);
        assert_eq!(row("average").as_f64().unwrap(), tenths as f64 / 10.0, "{db} {kind}");
        assert_eq!(row("maximum").as_u64().unwrap(), *samples.iter().max().unwrap());
        assert_eq!(row("minimum").as_u64().unwrap(), *samples.iter().min().unwrap());
    }
}

#[test]
fn couchdb_profile_mean_sits_in_its_jitter_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[[adapters]]\nid = \"sim_couchdb\"\nkind = \"simulated\"\nprofile = \"couchdb\"\n",
    );
    let o = run(&["run", "--db", "sim_couchdb", "--test", "upload_large", "--reps", "10", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let summary = out.lines().find(|l| l.starts_with("summary sim_couchdb")).unwrap();
    let mean: f64 = summary
        .split_whitespace()
        .find_map(|f| f.strip_prefix("mean="))
        .unwrap()
        .parse()
        .unwrap();
    // 2800 ms base with 10% jitter.
    assert!((2520.0..=3080.0 + 25.0).contains(&mean), "{summary}");
    assert!(summary.contains("count=10"));
}
