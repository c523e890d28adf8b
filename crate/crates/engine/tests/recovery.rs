//! A "crash" here leaks an engine whose writer only commits on flush, so its
//! acknowledged ops exist in the journal and nowhere else.

mod common;

use std::io::Write;

use common::{lazy_config, open, options, scratch, session};
use srl_core::session::Condition;
use srl_core::{Archetype, EventKind, ProcessEvent, RawTraceEvent, ScaffoldRequest};
use srl_engine::config::default_config;
use srl_engine::{Engine, IngestBatch};

fn crash(engine: Engine) {
    std::mem::forget(engine);
}

fn journal(dir: &std::path::Path) -> std::path::PathBuf {
    dir.join("srl.journal")
}

fn clean_run(events: &[RawTraceEvent]) -> (Vec<RawTraceEvent>, Vec<ProcessEvent>) {
    let dir = scratch();
    let engine = open(dir.path());
    let id = &events[0].session_id;
    for (n, c) in events.chunks(50).enumerate() {
        engine.ingest(IngestBatch::from_events(id, n as u64 + 1, c)).unwrap();
    }
    engine.finish(id, Some(default_config().task_duration_ms())).unwrap();
    engine.flush().unwrap();
    let r = engine.reader().unwrap();
    (r.events(id).unwrap(), r.processes(id).unwrap())
}

#[test]
fn acknowledged_ops_survive_a_crash() {
    let dir = scratch();
    let events = session(Archetype::Good, 7);
    let id = events[0].session_id.clone();
    let user = events[0].user_id.clone();
    let chunks: Vec<&[RawTraceEvent]> = events.chunks(50).collect();
    let split = events.iter().position(|e| e.timestamp >= 120_000).unwrap().div_ceil(50);

    let engine = Engine::open(lazy_config(), options(dir.path())).unwrap();
    for (n, c) in chunks[..split].iter().enumerate() {
        engine.ingest(IngestBatch::from_events(&id, n as u64 + 1, c)).unwrap();
    }
    let request = ScaffoldRequest {
        user_id: user.clone(),
        session_id: id.clone(),
        condition: Condition::Personalised,
        elapsed_ms: chunks[split - 1].last().unwrap().timestamp,
    };
    let delivered = engine.scaffold(&request).unwrap().expect("scaffold 1 is due");
    let option = delivered.options.iter().find(|o| o.enabled).unwrap().id.clone();
    let at = request.elapsed_ms;
    for (n, (sub, opt)) in [("MessageOption_Checked", Some(option.as_str())), ("CreateChecklist", None)]
        .into_iter()
        .enumerate()
    {
        let mut e = RawTraceEvent::new(format!("i{n}"), &id, &user, at, EventKind::ScaffoldInteract, "")
            .with_payload("sub_action", sub)
            .with_payload("scaffold_id", "1");
        if let Some(o) = opt {
            e = e.with_payload("option_id", o);
        }
        engine.interact(&e).unwrap();
    }
    assert_eq!(engine.reader().unwrap().events(&id).unwrap(), vec![]);
    crash(engine);

    let engine = open(dir.path());
    engine.flush().unwrap();
    let reader = engine.reader().unwrap();
    let stored = reader.events(&id).unwrap();
    let sent: usize = chunks[..split].iter().map(|c| c.len()).sum();
    assert_eq!(stored.len(), sent + 3, "events, trigger and two interactions");
    assert_eq!(stored[..sent], events[..sent]);
    let scaffolds = reader.scaffolds(&id).unwrap();
    assert_eq!(scaffolds.len(), 1);
    let list = scaffolds[0].todo_list.as_ref().expect("checklist survives");
    assert_eq!(list.items.len(), 1);
    assert_eq!(list.items[0].option_id, option);

    // The restored session keeps its dedup state and answers polls the same.
    let again = engine.ingest(IngestBatch::from_events(&id, split as u64, chunks[split - 1])).unwrap();
    assert!(again.duplicate);
    assert_eq!(engine.scaffold(&request).unwrap(), Some(delivered));
}

#[test]
fn replay_after_crash_matches_an_uninterrupted_run() {
    let events = session(Archetype::Poor, 11);
    let id = events[0].session_id.clone();
    let chunks: Vec<&[RawTraceEvent]> = events.chunks(50).collect();
    let half = chunks.len() / 2;
    let dir = scratch();

    let engine = Engine::open(lazy_config(), options(dir.path())).unwrap();
    for (n, c) in chunks[..half].iter().enumerate() {
        engine.ingest(IngestBatch::from_events(&id, n as u64 + 1, c)).unwrap();
    }
    crash(engine);

    let engine = open(dir.path());
    for (n, c) in chunks.iter().enumerate().skip(half) {
        engine.ingest(IngestBatch::from_events(&id, n as u64 + 1, c)).unwrap();
    }
    engine.finish(&id, Some(default_config().task_duration_ms())).unwrap();
    engine.flush().unwrap();
    let r = engine.reader().unwrap();
    assert_eq!((r.events(&id).unwrap(), r.processes(&id).unwrap()), clean_run(&events));
}

#[test]
fn clean_restart_rebuilds_sessions_from_the_store() {
    let events = session(Archetype::Average, 5);
    let id = events[0].session_id.clone();
    let chunks: Vec<&[RawTraceEvent]> = events.chunks(50).collect();
    let dir = scratch();
    {
        let engine = open(dir.path());
        for (n, c) in chunks[..3].iter().enumerate() {
            engine.ingest(IngestBatch::from_events(&id, n as u64 + 1, c)).unwrap();
        }
    }
    assert_eq!(std::fs::metadata(journal(dir.path())).unwrap().len(), 0, "journal compacted on shutdown");
    let engine = open(dir.path());
    assert!(engine.ingest(IngestBatch::from_events(&id, 3, chunks[2])).unwrap().duplicate);
    for (n, c) in chunks.iter().enumerate().skip(3) {
        engine.ingest(IngestBatch::from_events(&id, n as u64 + 1, c)).unwrap();
    }
    engine.finish(&id, Some(default_config().task_duration_ms())).unwrap();
    engine.flush().unwrap();
    let r = engine.reader().unwrap();
    assert_eq!((r.events(&id).unwrap(), r.processes(&id).unwrap()), clean_run(&events));
}

#[test]
fn committed_entries_left_in_the_journal_are_not_applied_twice() {
    let events = session(Archetype::Good, 3);
    let id = events[0].session_id.clone();
    let dir = scratch();
    let engine = Engine::open(lazy_config(), options(dir.path())).unwrap();
    engine.ingest(IngestBatch::from_events(&id, 1, &events[..40])).unwrap();
    let before_commit = std::fs::read(journal(dir.path())).unwrap();
    engine.flush().unwrap();
    engine.ingest(IngestBatch::from_events(&id, 2, &events[40..90])).unwrap();
    let tail = std::fs::read(journal(dir.path())).unwrap();
    crash(engine);
    // As if the process died between the store commit and compaction.
    std::fs::write(journal(dir.path()), [before_commit, tail].concat()).unwrap();

    let engine = open(dir.path());
    engine.flush().unwrap();
    assert_eq!(engine.reader().unwrap().events(&id).unwrap(), events[..90]);
}

#[test]
fn torn_journal_tail_loses_only_the_unacknowledged_write() {
    let events = session(Archetype::Good, 4);
    let id = events[0].session_id.clone();
    let dir = scratch();
    let engine = Engine::open(lazy_config(), options(dir.path())).unwrap();
    engine.ingest(IngestBatch::from_events(&id, 1, &events[..30])).unwrap();
    crash(engine);
    let mut f = std::fs::OpenOptions::new().append(true).open(journal(dir.path())).unwrap();
    f.write_all(br#"{"seq":2,"session_id":"good-s4","user_id":"good-u4","op":{"op":"ing"#).unwrap();
    drop(f);

    let engine = open(dir.path());
    engine.flush().unwrap();
    assert_eq!(engine.reader().unwrap().events(&id).unwrap(), events[..30]);
    let ack = engine.ingest(IngestBatch::from_events(&id, 2, &events[30..40])).unwrap();
    assert_eq!((ack.accepted_count, ack.duplicate), (10, false));
}
