//! Drives simulated sessions through the service, in process or over HTTP.
//!
//! The driver replays a generated stream in batches, polls for scaffolds on
//! the simulated clock, answers each delivered scaffold by checking its first
//! enabled option and creating a checklist, then finishes the session and
//! reads back the process events.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use srl_core::event::PAYLOAD_SUB_ACTION;
use srl_core::scaffold::{PAYLOAD_OPTION_ID, PAYLOAD_SCAFFOLD_ID};
use srl_core::session::Condition;
use srl_core::simulate::sample_profile;
use srl_core::{
    generate_session, Archetype, EventKind, LearnerProfile, Millis, ProcessEvent, RawTraceEvent,
    ScaffoldRequest, ScaffoldResponse, ScaffoldSubAction, StudyConfig,
};

use crate::engine::{Engine, EngineError, IngestAck, IngestBatch, InteractionReply};
use crate::formats::read_jsonl;

/// Where simulated traffic goes.
pub trait Sink {
    /// Sends one batch, waiting out backpressure.
    fn ingest(&mut self, batch: IngestBatch) -> Result<IngestAck>;
    fn scaffold(&mut self, request: &ScaffoldRequest) -> Result<Option<ScaffoldResponse>>;
    fn interact(&mut self, event: &RawTraceEvent) -> Result<InteractionReply>;
    fn finish(&mut self, session_id: &str, end: Millis) -> Result<()>;
    /// Stored process events of a finished session.
    fn processes(&mut self, session_id: &str) -> Result<Vec<ProcessEvent>>;
}

const RETRY_LIMIT: usize = 200;

pub struct InProcess<'a> {
    pub engine: &'a Engine,
}

impl Sink for InProcess<'_> {
    fn ingest(&mut self, batch: IngestBatch) -> Result<IngestAck> {
        for _ in 0..RETRY_LIMIT {
            match self.engine.ingest(batch.clone()) {
                Err(EngineError::Backpressure { retry_after_ms }) => {
                    std::thread::sleep(Duration::from_millis(retry_after_ms.min(100)))
                }
                other => return Ok(other?),
            }
        }
        bail!("ingest still backpressured after {RETRY_LIMIT} attempts")
    }

    fn scaffold(&mut self, request: &ScaffoldRequest) -> Result<Option<ScaffoldResponse>> {
        Ok(self.engine.scaffold(request)?)
    }

    fn interact(&mut self, event: &RawTraceEvent) -> Result<InteractionReply> {
        Ok(self.engine.interact(event)?)
    }

    fn finish(&mut self, session_id: &str, end: Millis) -> Result<()> {
        self.engine.finish(session_id, Some(end))?;
        Ok(())
    }

    fn processes(&mut self, session_id: &str) -> Result<Vec<ProcessEvent>> {
        self.engine.flush()?;
        self.engine.reader()?.processes(session_id)
    }
}

pub struct Http {
    client: reqwest::blocking::Client,
    base: String,
}

impl Http {
    pub fn new(base_url: &str) -> Result<Http> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()?;
        Ok(Http {
            client,
            base: base_url.trim_end_matches('/').to_string(),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

fn error_text(response: reqwest::blocking::Response) -> String {
    let status = response.status();
    let body = response.text().unwrap_or_default();
    format!("{status}: {body}")
}

impl Sink for Http {
    fn ingest(&mut self, batch: IngestBatch) -> Result<IngestAck> {
        for _ in 0..RETRY_LIMIT {
            let response = self.client.post(self.url("/api/events")).json(&batch).send()?;
            let status = response.status();
            if status.is_success() {
                return Ok(response.json()?);
            }
            if status == reqwest::StatusCode::SERVICE_UNAVAILABLE || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
                let wait = response
                    .headers()
                    .get(reqwest::header::RETRY_AFTER)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.parse::<u64>().ok())
                    .map_or(100, |s| (s * 1000).min(100));
                std::thread::sleep(Duration::from_millis(wait));
                continue;
            }
            bail!("ingest failed: {}", error_text(response));
        }
        bail!("ingest still backpressured after {RETRY_LIMIT} attempts")
    }

    fn scaffold(&mut self, request: &ScaffoldRequest) -> Result<Option<ScaffoldResponse>> {
        let elapsed = request.elapsed_ms.to_string();
        let response = self
            .client
            .get(self.url("/api/scaffold"))
            .query(&[
                ("user", request.user_id.as_str()),
                ("session", request.session_id.as_str()),
                ("condition", request.condition.as_str()),
                ("elapsed_ms", elapsed.as_str()),
            ])
            .send()?;
        match response.status() {
            reqwest::StatusCode::NO_CONTENT => Ok(None),
            s if s.is_success() => Ok(Some(response.json()?)),
            _ => bail!("scaffold request failed: {}", error_text(response)),
        }
    }

    fn interact(&mut self, event: &RawTraceEvent) -> Result<InteractionReply> {
        let response = self
            .client
            .post(self.url("/api/scaffold/interaction"))
            .json(event)
            .send()?;
        if !response.status().is_success() {
            bail!("interaction failed: {}", error_text(response));
        }
        Ok(response.json()?)
    }

    fn finish(&mut self, session_id: &str, end: Millis) -> Result<()> {
        let response = self
            .client
            .post(self.url(&format!("/api/sessions/{session_id}/finish")))
            .query(&[("end_ms", end)])
            .send()?;
        if !response.status().is_success() {
            bail!("finish failed: {}", error_text(response));
        }
        Ok(())
    }

    fn processes(&mut self, session_id: &str) -> Result<Vec<ProcessEvent>> {
        let response = self
            .client
            .get(self.url("/api/export"))
            .query(&[("sessions", session_id), ("kind", "process"), ("format", "json")])
            .send()?;
        if !response.status().is_success() {
            bail!("export failed: {}", error_text(response));
        }
        read_jsonl(response.text()?.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct DriveOptions {
    pub condition: Condition,
    pub poll_interval_ms: Millis,
    pub batch_size: usize,
}

impl Default for DriveOptions {
    fn default() -> Self {
        DriveOptions {
            condition: Condition::Generalised,
            poll_interval_ms: 10_000,
            batch_size: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub session_id: String,
    pub user_id: String,
    pub events_sent: usize,
    pub events_accepted: usize,
    /// Scaffolds as first delivered, with the poll time.
    pub scaffolds: Vec<(Millis, ScaffoldResponse)>,
    pub processes: Vec<ProcessEvent>,
}

struct Driver<'a, S: Sink> {
    sink: &'a mut S,
    session_id: String,
    user_id: String,
    options: &'a DriveOptions,
    pending: Vec<RawTraceEvent>,
    sequence: u64,
    page: String,
    report: SimulationReport,
}

impl<S: Sink> Driver<'_, S> {
    fn send_pending(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        self.sequence += 1;
        let batch = IngestBatch::from_events(&self.session_id, self.sequence, &self.pending);
        let ack = self.sink.ingest(batch)?;
        if !ack.rejected.is_empty() {
            bail!("simulated events rejected: {:?}", ack.rejected);
        }
        self.report.events_sent += self.pending.len();
        self.report.events_accepted += ack.accepted_count;
        self.pending.clear();
        Ok(())
    }

    fn poll(&mut self, at: Millis) -> Result<()> {
        if self.options.condition == Condition::Control {
            return Ok(());
        }
        self.send_pending()?;
        let request = ScaffoldRequest {
            user_id: self.user_id.clone(),
            session_id: self.session_id.clone(),
            condition: self.options.condition,
            elapsed_ms: at,
        };
        let Some(response) = self.sink.scaffold(&request)? else {
            return Ok(());
        };
        if self.report.scaffolds.iter().any(|(_, r)| r.scaffold_id == response.scaffold_id) {
            return Ok(());
        }
        self.report.scaffolds.push((at, response.clone()));
        if response.omitted {
            return Ok(());
        }
        let mut steps = vec![(ScaffoldSubAction::MessageDisplayed, None)];
        if let Some(option) = response.options.iter().find(|o| o.enabled) {
            steps.push((ScaffoldSubAction::MessageOptionChecked, Some(option.id.clone())));
            steps.push((ScaffoldSubAction::CreateChecklist, None));
        }
        steps.push((ScaffoldSubAction::MessageClosed, None));
        for (n, (sub, option)) in steps.into_iter().enumerate() {
            let mut event = RawTraceEvent::new(
                format!("{}-sc{}-{}", self.session_id, response.scaffold_id, n + 1),
                self.session_id.clone(),
                self.user_id.clone(),
                at,
                EventKind::ScaffoldInteract,
                self.page.clone(),
            )
            .with_payload(PAYLOAD_SUB_ACTION, sub.as_str())
            .with_payload(PAYLOAD_SCAFFOLD_ID, response.scaffold_id.to_string());
            if let Some(option) = option {
                event = event.with_payload(PAYLOAD_OPTION_ID, option);
            }
            self.sink.interact(&event)?;
        }
        Ok(())
    }
}

/// Sends `events` for one session and finishes it at `task_end`.
pub fn drive<S: Sink>(
    sink: &mut S,
    events: &[RawTraceEvent],
    task_end: Millis,
    options: &DriveOptions,
) -> Result<SimulationReport> {
    let first = events.first().context("empty event stream")?;
    let (session_id, user_id) = (first.session_id.clone(), first.user_id.clone());
    let mut d = Driver {
        sink,
        session_id: session_id.clone(),
        user_id: user_id.clone(),
        options,
        pending: Vec::new(),
        sequence: 0,
        page: String::new(),
        report: SimulationReport {
            session_id,
            user_id,
            events_sent: 0,
            events_accepted: 0,
            scaffolds: Vec::new(),
            processes: Vec::new(),
        },
    };
    let step = options.poll_interval_ms.max(1);
    let mut next_poll = step;
    for e in events {
        while next_poll <= e.timestamp && next_poll <= task_end {
            d.poll(next_poll)?;
            next_poll += step;
        }
        if !e.page_url.is_empty() {
            d.page = e.page_url.clone();
        }
        d.pending.push(e.clone());
        if d.pending.len() >= options.batch_size.max(1) {
            d.send_pending()?;
        }
    }
    while next_poll <= task_end {
        d.poll(next_poll)?;
        next_poll += step;
    }
    d.send_pending()?;
    let session = d.session_id.clone();
    d.sink.finish(&session, task_end)?;
    d.report.processes = d.sink.processes(&session)?;
    Ok(d.report)
}

/// Generates the profile's session and drives it through `sink`.
pub fn simulate<S: Sink>(
    sink: &mut S,
    profile: &LearnerProfile,
    config: &StudyConfig,
    options: &DriveOptions,
) -> Result<SimulationReport> {
    let events = generate_session(profile, config)?;
    drive(sink, &events, config.task_duration_ms(), options)
}

/// A profile file path, or one of the archetype names for the built-in
/// profile of that archetype.
pub fn load_profile(spec: &str) -> Result<LearnerProfile> {
    let path = Path::new(spec);
    if path.exists() {
        return crate::formats::read_profile(path);
    }
    match spec.parse::<Archetype>() {
        Ok(a) => Ok(sample_profile(a)),
        Err(_) => bail!("`{spec}` is neither a profile file nor one of good, average, poor"),
    }
}
