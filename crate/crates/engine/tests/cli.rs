mod common;

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{scratch, session};
use srl_core::metrics::{ReferenceSegment, SegmentSource};
use srl_core::simulate::sample_profile;
use srl_core::{compile_rules, run_offline, ActionLabel, ActionRecord, Archetype, ProcessEvent, SessionState};
use srl_engine::config::{default_config, load_config_file, CONFIG_ENV, DEFAULT_STUDY};
use srl_engine::formats::{read_jsonl, read_profile, write_jsonl, write_reference};
use srl_engine::IngestBatch;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_srl-engine"));
    c.env_remove(CONFIG_ENV).env("RUST_LOG", "warn");
    c
}

fn ok(mut c: Command) -> Output {
    let out = c.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn jsonl<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Vec<T> {
    read_jsonl(std::fs::read(path).unwrap().as_slice()).unwrap()
}

fn write_events(dir: &Path, archetypes: &[(Archetype, u64)]) -> PathBuf {
    let path = dir.join("events.jsonl");
    let events: Vec<_> = archetypes.iter().flat_map(|&(a, s)| session(a, s)).collect();
    write_jsonl(std::fs::File::create(&path).unwrap(), &events).unwrap();
    path
}

#[test]
fn parse_matches_the_library() {
    let dir = scratch();
    let events = write_events(dir.path(), &[(Archetype::Good, 1), (Archetype::Poor, 2)]);
    let (p, a) = (dir.path().join("p.jsonl"), dir.path().join("a.jsonl"));
    let mut c = bin();
    c.arg("parse").arg(&events).arg("--out").arg(&p).arg("--actions").arg(&a);
    ok(c);
    let cfg = Arc::new(default_config());
    let rules = Arc::new(compile_rules(&cfg).unwrap());
    let (mut processes, mut actions) = (Vec::new(), Vec::new());
    for (a, s) in [(Archetype::Good, 1), (Archetype::Poor, 2)] {
        let ev = session(a, s);
        let state = SessionState::new(&ev[0].session_id, &ev[0].user_id);
        let run = run_offline(&ev, cfg.clone(), rules.clone(), state, Some(cfg.task_duration_ms()));
        processes.extend(run.processes);
        actions.extend(run.actions);
    }
    assert_eq!(jsonl::<ProcessEvent>(&p), processes);
    assert_eq!(jsonl::<ActionRecord>(&a), actions);

    let mut c = bin();
    c.arg("parse").arg(&events).args(["--format", "csv"]);
    let csv_out = ok(c).stdout;
    assert_eq!(csv::Reader::from_reader(csv_out.as_slice()).records().count(), processes.len());
}

#[test]
fn metrics_of_a_parse_against_itself_is_perfect() {
    let dir = scratch();
    let events = write_events(dir.path(), &[(Archetype::Average, 3)]);
    let (p, a) = (dir.path().join("p.jsonl"), dir.path().join("a.jsonl"));
    let mut c = bin();
    c.arg("parse").arg(&events).arg("--out").arg(&p).arg("--actions").arg(&a);
    ok(c);
    let processes: Vec<ProcessEvent> = jsonl(&p);
    let mut reference = Vec::new();
    let mut last_end = 0;
    for e in &processes {
        if e.start >= last_end && e.end > e.start {
            reference.push(ReferenceSegment {
                session_id: e.session_id.clone(),
                label: e.label,
                start: e.start,
                end: e.end,
                source: SegmentSource::Synthetic,
            });
            last_end = e.end;
        }
    }
    assert!(reference.len() > 10);
    let r = dir.path().join("reference.csv");
    write_reference(std::fs::File::create(&r).unwrap(), &reference).unwrap();

    let mut c = bin();
    c.arg("metrics").arg("--reference").arg(&r).arg("--processes").arg(&p).arg("--actions").arg(&a);
    let table = String::from_utf8(ok(c).stdout).unwrap();
    assert!(table.contains("match rate       1.000"), "{table}");
    assert!(table.contains("trace coverage"), "{table}");

    let mut c = bin();
    c.arg("metrics").arg("--reference").arg(&r).arg("--processes").arg(&p).args(["--format", "json"]);
    let report: serde_json::Value = serde_json::from_slice(&ok(c).stdout).unwrap();
    assert_eq!(report["match_rate"]["value"], 1.0);
    assert_eq!(report["pairs"].as_array().unwrap().len(), reference.len());
}

fn off_task_count(actions: &Path) -> usize {
    jsonl::<ActionRecord>(actions).iter().filter(|a| a.label == ActionLabel::OffTask).count()
}

#[test]
fn config_comes_from_the_environment_unless_a_flag_is_given() {
    let dir = scratch();
    let events = write_events(dir.path(), &[(Archetype::Poor, 9)]);
    let strict = dir.path().join("strict.toml");
    std::fs::write(&strict, DEFAULT_STUDY.replace("off_task_threshold = 300", "off_task_threshold = 20")).unwrap();
    let shipped = dir.path().join("shipped.toml");
    std::fs::write(&shipped, DEFAULT_STUDY).unwrap();
    let a = dir.path().join("a.jsonl");
    let run = |env: Option<&Path>, flag: Option<&Path>| {
        let mut c = bin();
        if let Some(e) = env {
            c.env(CONFIG_ENV, e);
        }
        if let Some(f) = flag {
            c.arg("--config").arg(f);
        }
        c.arg("parse").arg(&events).arg("--actions").arg(&a).stdout(Stdio::null());
        ok(c);
        off_task_count(&a)
    };
    let default = run(None, None);
    assert_eq!(default, 1);
    assert!(run(Some(&strict), None) > default);
    assert_eq!(run(Some(&strict), Some(&shipped)), default);

    let mut c = bin();
    c.env(CONFIG_ENV, dir.path().join("missing.toml")).arg("parse").arg(&events);
    let out = c.output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, DEFAULT_STUDY.replace("scaffold_schedule = [[1, 2], [2, 7]", "scaffold_schedule = [[1, 9], [2, 7]")).unwrap();
    assert!(load_config_file(&broken).is_err());
    let mut c = bin();
    c.arg("--config").arg(&broken).arg("parse").arg(&events);
    assert!(!c.output().unwrap().status.success());
}

#[test]
fn profile_fixtures_are_the_built_in_profiles() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/profiles");
    for a in [Archetype::Good, Archetype::Average, Archetype::Poor] {
        let fixture = read_profile(&root.join(format!("{}.toml", a.as_str()))).unwrap();
        assert_eq!(fixture, sample_profile(a));
        fixture.validate(&default_config()).unwrap();
    }
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(db: &Path, config: Option<&Path>) -> Server {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut c = bin();
        if let Some(cfg) = config {
            c.arg("--config").arg(cfg);
        }
        let child = c
            .arg("serve")
            .arg("--addr")
            .arg(format!("127.0.0.1:{port}"))
            .arg("--db")
            .arg(db)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let url = format!("http://127.0.0.1:{port}");
        let deadline = Instant::now() + Duration::from_secs(20);
        while reqwest::blocking::get(format!("{url}/api/config")).is_err() {
            assert!(Instant::now() < deadline, "server did not come up");
            std::thread::sleep(Duration::from_millis(50));
        }
        Server { child, url }
    }

    fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn simulate_in_process_and_over_http_print_the_same_report() {
    let dir = scratch();
    let server = Server::start(&dir.path().join("served.db"), None);
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/profiles/good.toml");
    let run = |mode: &str, profile: &Path| {
        let mut c = bin();
        c.arg("simulate")
            .arg("--profile")
            .arg(profile)
            .args(["--seed", "12", "--condition", "personalised", "--mode", mode, "--url", &server.url]);
        let out = ok(c).stdout;
        serde_json::from_slice::<serde_json::Value>(&out).unwrap()
    };
    let local = run("inprocess", &fixture);
    assert!(!local["processes"].as_array().unwrap().is_empty());
    assert_eq!(run("http", &fixture), local);
    assert_eq!(run("inprocess", Path::new("good")), local);
    let mut c = bin();
    c.args(["simulate", "--profile", "excellent"]);
    assert!(!c.output().unwrap().status.success());
}

#[test]
fn killed_server_loses_no_acknowledged_event() {
    let dir = scratch();
    let db = dir.path().join("crash.db");
    let lazy = dir.path().join("lazy.toml");
    std::fs::write(
        &lazy,
        DEFAULT_STUDY
            .replace("max_events = 500", "max_events = 1000000")
            .replace("max_interval_ms = 1000", "max_interval_ms = 3600000"),
    )
    .unwrap();
    let server = Server::start(&db, Some(&lazy));
    let client = reqwest::blocking::Client::new();
    let sessions: Vec<_> = (0..3).map(|s| session(Archetype::Good, 40 + s)).collect();
    let mut sent = 0;
    for events in &sessions {
        for (n, chunk) in events.chunks(100).enumerate() {
            let batch = IngestBatch::from_events(&chunk[0].session_id, n as u64 + 1, chunk);
            let r = client.post(format!("{}/api/events", server.url)).json(&batch).send().unwrap();
            assert!(r.status().is_success());
            sent += chunk.len();
        }
    }
    let total = |url: &str| -> u64 {
        let page: serde_json::Value = client
            .get(format!("{url}/api/logs"))
            .query(&[("kind", "raw"), ("limit", "1")])
            .send()
            .unwrap()
            .json()
            .unwrap();
        page["total"].as_u64().unwrap()
    };
    assert_eq!(total(&server.url), 0, "nothing committed before the kill");
    server.kill();

    let server = Server::start(&db, None);
    let deadline = Instant::now() + Duration::from_secs(10);
    while total(&server.url) < sent as u64 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(100));
    }
    assert_eq!(total(&server.url), sent as u64);
    for events in &sessions {
        let id = &events[0].session_id;
        let body = client
            .get(format!("{}/api/export", server.url))
            .query(&[("sessions", id.as_str()), ("kind", "raw"), ("format", "json")])
            .send()
            .unwrap()
            .text()
            .unwrap();
        assert_eq!(&read_jsonl::<srl_core::RawTraceEvent>(body.as_bytes()).unwrap(), events);
    }
}
