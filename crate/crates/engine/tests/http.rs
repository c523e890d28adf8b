mod common;

use std::sync::Arc;

use common::{lazy_config, open, options, scratch, session};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use srl_core::session::Condition;
use srl_core::simulate::sample_profile;
use srl_core::{Archetype, ScaffoldResponse, StudyConfig};
use srl_engine::config::default_config;
use srl_engine::http::BackgroundServer;
use srl_engine::sim::{self, DriveOptions, Http, InProcess};
use srl_engine::{Engine, IngestAck, IngestBatch};

fn start(engine: Engine) -> BackgroundServer {
    BackgroundServer::start(Arc::new(engine), "127.0.0.1:0".parse().unwrap()).unwrap()
}

fn client() -> Client {
    Client::new()
}

#[test]
fn events_endpoint_acknowledges_and_dedups() {
    let dir = scratch();
    let server = start(open(dir.path()));
    let events = session(Archetype::Good, 1);
    let batch = IngestBatch::from_events(&events[0].session_id, 1, &events[..10]);
    let url = format!("{}/api/events", server.url());
    let r = client().post(&url).json(&batch).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let ack: IngestAck = r.json().unwrap();
    assert_eq!(ack.accepted_count, 10);
    let again: IngestAck = client().post(&url).json(&batch).send().unwrap().json().unwrap();
    assert!(again.duplicate);
    let bad = client().post(&url).body("{\"session_id\": 3}").header("content-type", "application/json").send().unwrap();
    assert!(bad.status().is_client_error());
}

#[test]
fn full_queue_answers_503_with_retry_after() {
    let dir = scratch();
    let mut o = options(dir.path());
    o.queue_capacity = 5;
    let server = start(Engine::open(lazy_config(), o).unwrap());
    let events = session(Archetype::Good, 2);
    let url = format!("{}/api/events", server.url());
    let id = &events[0].session_id;
    assert!(client().post(&url).json(&IngestBatch::from_events(id, 1, &events[..5])).send().unwrap().status().is_success());
    let r = client().post(&url).json(&IngestBatch::from_events(id, 2, &events[5..7])).send().unwrap();
    assert_eq!(r.status(), StatusCode::SERVICE_UNAVAILABLE);
    let retry: u64 = r.headers()["retry-after"].to_str().unwrap().parse().unwrap();
    assert!(retry >= 1);
    let body: Value = r.json().unwrap();
    assert!(body["retry_after_ms"].as_u64().unwrap() > 0);
}

#[test]
fn scaffold_endpoint_follows_the_schedule() {
    let dir = scratch();
    let server = start(open(dir.path()));
    let url = format!("{}/api/scaffold", server.url());
    let poll = |elapsed: u64, condition: &str| {
        client()
            .get(&url)
            .query(&[("user", "u1"), ("session", "s1"), ("condition", condition), ("elapsed_ms", &elapsed.to_string())])
            .send()
            .unwrap()
    };
    assert_eq!(poll(60_000, "generalised").status(), StatusCode::NO_CONTENT);
    let r = poll(120_000, "generalised");
    assert_eq!(r.status(), StatusCode::OK);
    let first: ScaffoldResponse = r.json().unwrap();
    assert_eq!(first.scaffold_id, 1);
    assert_eq!(first.message, default_config().content(1).unwrap().prompt_message);
    assert!(first.options.iter().all(|o| o.enabled));
    let repeat: ScaffoldResponse = poll(120_000, "generalised").json().unwrap();
    assert_eq!(poll(130_000, "generalised").status(), StatusCode::NO_CONTENT);
    assert_eq!(repeat, first);
    assert_eq!(poll(130_000, "control").status(), StatusCode::BAD_REQUEST);
    assert_eq!(poll(130_000, "sometimes").status(), StatusCode::BAD_REQUEST);
    let wrong_user = client()
        .get(&url)
        .query(&[("user_id", "u9"), ("session_id", "s1"), ("condition", "generalised"), ("elapsed_ms", "140000")])
        .send()
        .unwrap();
    assert_eq!(wrong_user.status(), StatusCode::BAD_REQUEST);
}

#[test]
fn interaction_endpoint_returns_the_todo_list() {
    let dir = scratch();
    let server = start(open(dir.path()));
    let base = server.url();
    let scaffold: ScaffoldResponse = client()
        .get(format!("{base}/api/scaffold"))
        .query(&[("user", "u1"), ("session", "s1"), ("condition", "generalised"), ("elapsed_ms", "120000")])
        .send()
        .unwrap()
        .json()
        .unwrap();
    let event = |id: &str, sub: &str, option: Option<&str>| {
        let mut payload = json!({"sub_action": sub, "scaffold_id": scaffold.scaffold_id.to_string()});
        if let Some(o) = option {
            payload["option_id"] = o.into();
        }
        json!({
            "event_id": id, "session_id": "s1", "user_id": "u1", "timestamp": 121_000,
            "event_kind": "scaffold_interact", "page_url": "", "payload": payload,
        })
    };
    let post = |body: Value| client().post(format!("{base}/api/scaffold/interaction")).json(&body).send().unwrap();
    assert!(post(event("i1", "Message_Displayed", None)).status().is_success());
    assert!(post(event("i2", "MessageOption_Checked", Some("b"))).status().is_success());
    let reply: Value = post(event("i3", "CreateChecklist", None)).json().unwrap();
    assert_eq!(reply["scaffold_id"], 1);
    assert_eq!(reply["todo_list"]["items"][0]["option_id"], "b");
    assert_eq!(post(event("i4", "MessageOption_Checked", Some("z"))).status(), StatusCode::BAD_REQUEST);
    assert_eq!(post(event("i5", "Message_Triggered", None)).status(), StatusCode::BAD_REQUEST);
}

#[test]
fn logs_export_and_config_endpoints() {
    let dir = scratch();
    let engine = open(dir.path());
    let events = session(Archetype::Average, 3);
    let id = events[0].session_id.clone();
    sim::drive(&mut InProcess { engine: &engine }, &events, default_config().task_duration_ms(), &DriveOptions::default())
        .unwrap();
    let server = start(engine);
    let base = server.url();

    let page: Value = client()
        .get(format!("{base}/api/logs"))
        .query(&[("participant_id", "average-u3"), ("kind", "action"), ("limit", "5")])
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(page["kind"], "action");
    assert_eq!(page["records"].as_array().unwrap().len(), 5);
    let total = page["total"].as_u64().unwrap();
    let cursor = page["next_cursor"].as_i64().unwrap();
    let next: Value = client()
        .get(format!("{base}/api/logs"))
        .query(&[("participant_id", "average-u3"), ("kind", "action"), ("limit", "5"), ("cursor", &cursor.to_string())])
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_ne!(next["records"][0], page["records"][0]);
    let bad = client().get(format!("{base}/api/logs")).query(&[("kind", "gossip")]).send().unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);

    let export = client()
        .get(format!("{base}/api/export"))
        .query(&[("sessions", format!("{id},ghost").as_str()), ("kind", "action"), ("format", "csv")])
        .send()
        .unwrap();
    assert_eq!(export.status(), StatusCode::OK);
    assert_eq!(export.headers()["x-skipped-sessions"], "ghost");
    assert_eq!(export.headers()["x-export-rows"].to_str().unwrap(), total.to_string());
    let body = export.text().unwrap();
    assert_eq!(csv::Reader::from_reader(body.as_bytes()).records().count() as u64, total);

    let all = client().get(format!("{base}/api/export")).query(&[("kind", "raw"), ("format", "json")]).send().unwrap();
    // Each of the five deliveries adds a trigger and four interactions.
    assert_eq!(all.text().unwrap().lines().count(), events.len() + 5 * 5);

    let empty = client().get(format!("{base}/api/export?sessions=&kind=process")).send().unwrap().text().unwrap();
    assert_eq!(empty, "session_id,label,rule_id,start_ms,end_ms,matched_action_ids\n");

    let config: StudyConfig = client().get(format!("{base}/api/config")).send().unwrap().json().unwrap();
    assert_eq!(config, default_config());
}

#[test]
fn finish_endpoint_closes_the_session() {
    let dir = scratch();
    let server = start(open(dir.path()));
    let base = server.url();
    let events = session(Archetype::Poor, 4);
    let id = &events[0].session_id;
    client().post(format!("{base}/api/events")).json(&IngestBatch::from_events(id, 1, &events)).send().unwrap();
    let r: Value = client()
        .post(format!("{base}/api/sessions/{id}/finish"))
        .query(&[("end_ms", 2_700_000)])
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert!(r["actions"].as_u64().unwrap() >= 1);
    let unknown = client().post(format!("{base}/api/sessions/nope/finish")).send().unwrap();
    assert_eq!(unknown.status(), StatusCode::BAD_REQUEST);
}

#[test]
fn simulation_over_http_matches_in_process() {
    let config = default_config();
    for (archetype, seed, condition) in [
        (Archetype::Good, 5, Condition::Personalised),
        (Archetype::Average, 6, Condition::Generalised),
        (Archetype::Poor, 7, Condition::Personalised),
    ] {
        let profile = sample_profile(archetype).with_seed(seed);
        let options = DriveOptions {
            condition,
            ..DriveOptions::default()
        };
        let a = scratch();
        let local = open(a.path());
        let direct = sim::simulate(&mut InProcess { engine: &local }, &profile, &config, &options).unwrap();
        let b = scratch();
        let server = start(open(b.path()));
        let remote = sim::simulate(&mut Http::new(&server.url()).unwrap(), &profile, &config, &options).unwrap();
        assert!(!direct.processes.is_empty());
        assert_eq!(remote, direct);
    }
}
