//! The ingest service core.
//!
//! Each session has one pipeline guarded by its own lock, so ingest, scaffold
//! requests and interactions for a session are applied one at a time. An
//! applied op is appended to the journal and handed to the batch writer
//! through a bounded queue; the writer commits in groups of up to
//! `batch_flush.max_events` events or after `batch_flush.max_interval_ms`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use srl_core::pipeline::{Emitted, PipelineError, SessionPipeline};
use srl_core::scaffold::{ScaffoldError, ToDoList};
use srl_core::session::Condition;
use srl_core::{
    compile_rules, CompiledRules, EventKind, LabelError, Millis, RawTraceEvent, ScaffoldRequest,
    ScaffoldResponse, ScaffoldSubAction, SessionState, StudyConfig,
};

use crate::journal::{Entry, Journal, Op};
use crate::store::{session_ops, Commit, Reader, Store};

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub db_path: PathBuf,
    /// Defaults to the database path with a `.journal` extension.
    pub journal_path: Option<PathBuf>,
    /// Most raw events allowed between acknowledgement and commit.
    pub queue_capacity: usize,
    /// Sync the journal to disk before acknowledging.
    pub fsync_journal: bool,
}

impl EngineOptions {
    pub fn new(db_path: impl Into<PathBuf>) -> Self {
        EngineOptions {
            db_path: db_path.into(),
            journal_path: None,
            queue_capacity: 100_000,
            fsync_journal: true,
        }
    }

    fn journal_path(&self) -> PathBuf {
        self.journal_path
            .clone()
            .unwrap_or_else(|| self.db_path.with_extension("journal"))
    }
}

/// One client batch. Events stay loosely typed so that a malformed event is
/// rejected on its own instead of failing the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestBatch {
    pub session_id: String,
    pub client_sequence: u64,
    pub events: Vec<serde_json::Value>,
}

impl IngestBatch {
    pub fn from_events(session_id: &str, client_sequence: u64, events: &[RawTraceEvent]) -> Self {
        IngestBatch {
            session_id: session_id.into(),
            client_sequence,
            events: events
                .iter()
                .map(|e| serde_json::to_value(e).expect("events serialise"))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position in the batch.
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAck {
    pub session_id: String,
    pub client_sequence: u64,
    pub accepted_count: usize,
    pub rejected: Vec<Rejection>,
    /// The sequence number was already seen; nothing was applied.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionReply {
    pub scaffold_id: u32,
    pub todo_list: Option<ToDoList>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinishReply {
    pub session_id: String,
    pub actions: usize,
    pub processes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub sessions: usize,
    pub accepted_count: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("ingest queue is full, retry after {retry_after_ms} ms")]
    Backpressure { retry_after_ms: u64 },
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("engine is shut down")]
    Closed,
    #[error("storage failure: {0:#}")]
    Storage(#[from] anyhow::Error),
}

impl From<PipelineError> for EngineError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Label(e) => EngineError::Label(e),
            PipelineError::Scaffold(e) => EngineError::Scaffold(e),
        }
    }
}

struct Slot {
    user_id: String,
    pipeline: SessionPipeline,
    last_client_sequence: Option<u64>,
}

/// What applying an op produced.
#[derive(Default)]
struct Applied {
    events: Vec<RawTraceEvent>,
    emitted: Emitted,
    touched: Vec<u32>,
    rejected: Vec<Rejection>,
    response: Option<ScaffoldResponse>,
    reply: Option<InteractionReply>,
}

impl Applied {
    fn absorb(&mut self, emitted: Emitted) {
        self.emitted.actions.extend(emitted.actions);
        self.emitted.processes.extend(emitted.processes);
    }

    fn reject(&mut self, index: usize, event_id: Option<&str>, reason: impl ToString) {
        self.rejected.push(Rejection {
            index,
            event_id: event_id.map(String::from),
            reason: reason.to_string(),
        });
    }
}

enum Feed {
    /// Client traffic: engine-only sub-actions are refused and scaffold
    /// interactions update to-do lists.
    Live,
    /// Restored logs: every event goes straight to the pipeline.
    Restore,
}

impl Slot {
    fn new(config: &Arc<StudyConfig>, rules: &Arc<CompiledRules>, session_id: &str, user_id: &str) -> Slot {
        Slot {
            user_id: user_id.into(),
            pipeline: SessionPipeline::new(config.clone(), rules.clone(), SessionState::new(session_id, user_id)),
            last_client_sequence: None,
        }
    }

    fn session_id(&self) -> &str {
        &self.pipeline.state().session_id
    }

    fn feed(&mut self, event: &RawTraceEvent, mode: &Feed, out: &mut Applied) -> Result<(), String> {
        if event.session_id != self.session_id() {
            return Err(format!("event belongs to session `{}`", event.session_id));
        }
        if event.user_id != self.user_id {
            return Err(format!("session `{}` belongs to user `{}`", self.session_id(), self.user_id));
        }
        if self.pipeline.is_finished() {
            return Err("session is finished".into());
        }
        let interaction = event.event_kind == EventKind::ScaffoldInteract;
        let emitted = match mode {
            Feed::Live if interaction => {
                let sub = event.payload.get(srl_core::event::PAYLOAD_SUB_ACTION);
                if sub.map(String::as_str) == Some(ScaffoldSubAction::MessageTriggered.as_str()) {
                    return Err("Message_Triggered is recorded by the engine only".into());
                }
                let (outcome, emitted) = self.pipeline.interact(event).map_err(|e| e.to_string())?;
                out.touched.push(outcome.scaffold_id);
                out.reply = Some(InteractionReply {
                    scaffold_id: outcome.scaffold_id,
                    todo_list: outcome.todo_list,
                });
                emitted
            }
            _ => self.pipeline.push(event).map_err(|e| e.to_string())?,
        };
        out.events.push(event.clone());
        out.absorb(emitted);
        Ok(())
    }

    fn apply(&mut self, op: &Op) -> Result<Applied, EngineError> {
        let mut out = Applied::default();
        match op {
            Op::Ingest { client_sequence, events } => {
                for (i, e) in events.iter().enumerate() {
                    if let Err(reason) = self.feed(e, &Feed::Live, &mut out) {
                        out.reject(i, Some(&e.event_id), reason);
                    }
                }
                self.last_client_sequence = Some(*client_sequence);
            }
            Op::Import { events } => {
                for (i, e) in events.iter().enumerate() {
                    if let Err(reason) = self.feed(e, &Feed::Restore, &mut out) {
                        out.reject(i, Some(&e.event_id), reason);
                    }
                }
            }
            Op::Interact { event } => {
                if event.event_kind != EventKind::ScaffoldInteract {
                    return Err(EngineError::BadRequest("not a scaffold_interact event".into()));
                }
                self.feed(event, &Feed::Live, &mut out).map_err(EngineError::BadRequest)?;
            }
            Op::Scaffold { request } => {
                if request.user_id != self.user_id {
                    return Err(EngineError::BadRequest(format!(
                        "session `{}` belongs to user `{}`",
                        request.session_id, self.user_id
                    )));
                }
                if let Some(step) = self.pipeline.scaffold(request)? {
                    if step.decision.trace_event.is_some() {
                        out.touched.push(step.decision.response.scaffold_id);
                    }
                    out.events.extend(step.appended);
                    out.absorb(step.emitted);
                    out.response = Some(step.decision.response);
                }
            }
            Op::Finish { end } => {
                let emitted = self.pipeline.finish(*end);
                out.absorb(emitted);
            }
        }
        Ok(out)
    }

    fn commit(&self, seq: u64, op: Op, applied: &Applied) -> Commit {
        let mut c = Commit::new(seq, self.session_id(), &self.user_id, op);
        c.events = applied.events.clone();
        c.actions = applied.emitted.actions.clone();
        c.processes = applied.emitted.processes.clone();
        let state = self.pipeline.state();
        c.scaffolds = applied
            .touched
            .iter()
            .filter_map(|id| state.delivered(*id).cloned())
            .collect();
        c
    }
}

struct Queued {
    commit: Commit,
    weight: usize,
}

enum Msg {
    Commit(Box<Queued>),
    Flush,
}

struct LogState {
    journal: Journal,
    next_seq: u64,
    tx: Option<Sender<Msg>>,
}

#[derive(Default)]
struct Progress {
    committed: u64,
    error: Option<String>,
}

struct Shared {
    pending: AtomicUsize,
    progress: Mutex<Progress>,
    changed: Condvar,
    log: Mutex<LogState>,
}

pub struct Engine {
    config: Arc<StudyConfig>,
    rules: Arc<CompiledRules>,
    options: EngineOptions,
    sessions: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    shared: Arc<Shared>,
    writer: Mutex<Option<JoinHandle<()>>>,
}

impl Engine {
    /// Opens the store and journal, starts the batch writer, and replays any
    /// journaled ops the store has not committed yet.
    pub fn open(config: StudyConfig, options: EngineOptions) -> anyhow::Result<Engine> {
        config.validate()?;
        let rules = Arc::new(compile_rules(&config)?);
        let config = Arc::new(config);
        let store = Store::open(&options.db_path)?;
        let committed = store.committed_seq()?;
        let (journal, entries) = Journal::open(&options.journal_path(), options.fsync_journal)?;
        let next_seq = committed.max(journal.last_seq()) + 1;
        let (tx, rx) = mpsc::channel();
        let shared = Arc::new(Shared {
            pending: AtomicUsize::new(0),
            progress: Mutex::new(Progress {
                committed,
                error: None,
            }),
            changed: Condvar::new(),
            log: Mutex::new(LogState {
                journal,
                next_seq,
                tx: Some(tx),
            }),
        });
        let flush = config.batch_flush;
        let writer = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("srl-batch-writer".into())
                .spawn(move || {
                    writer_loop(store, rx, shared, flush.max_events, Duration::from_millis(flush.max_interval_ms))
                })?
        };
        let engine = Engine {
            config,
            rules,
            options,
            sessions: Mutex::new(HashMap::new()),
            shared,
            writer: Mutex::new(Some(writer)),
        };
        engine.recover(entries, committed)?;
        Ok(engine)
    }

    fn recover(&self, entries: Vec<Entry>, committed: u64) -> anyhow::Result<()> {
        let pending: Vec<Entry> = entries.into_iter().filter(|e| e.seq > committed).collect();
        if pending.is_empty() {
            self.shared.log.lock().unwrap().journal.compact(committed)?;
            return Ok(());
        }
        log::info!("replaying {} journaled ops", pending.len());
        for entry in pending {
            let slot = self.slot(&entry.session_id, Some(&entry.user_id))?.expect("user given");
            let mut slot = slot.lock().unwrap();
            let applied = slot
                .apply(&entry.op)
                .with_context(|| format!("replaying op {}", entry.seq))?;
            let weight = applied.events.len().max(1);
            self.shared.pending.fetch_add(weight, Ordering::SeqCst);
            let commit = slot.commit(entry.seq, entry.op, &applied);
            let log = self.shared.log.lock().unwrap();
            send(&log, Queued { commit, weight })?;
        }
        Ok(())
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn db_path(&self) -> &Path {
        &self.options.db_path
    }

    /// A fresh read-only view. It sees what has been committed so far.
    pub fn reader(&self) -> anyhow::Result<Reader> {
        Reader::open(&self.options.db_path)
    }

    /// Raw events acknowledged but not yet committed.
    pub fn pending_events(&self) -> usize {
        self.shared.pending.load(Ordering::SeqCst)
    }

    /// The session's slot, rebuilt from the op log if it is not in memory.
    /// A session with no history is created only when `user_id` is known.
    fn slot(&self, session_id: &str, user_id: Option<&str>) -> anyhow::Result<Option<Arc<Mutex<Slot>>>> {
        let mut sessions = self.sessions.lock().unwrap();
        if let Some(s) = sessions.get(session_id) {
            return Ok(Some(s.clone()));
        }
        let reader = self.reader()?;
        let ops = session_ops(reader.connection(), session_id)?;
        let slot = match (ops.first(), user_id) {
            (Some((_, user, _)), _) => {
                let mut slot = Slot::new(&self.config, &self.rules, session_id, user);
                for (seq, _, op) in &ops {
                    slot.apply(op)
                        .with_context(|| format!("rebuilding session {session_id} at op {seq}"))?;
                }
                slot
            }
            (None, Some(user)) => Slot::new(&self.config, &self.rules, session_id, user),
            (None, None) => return Ok(None),
        };
        let slot = Arc::new(Mutex::new(slot));
        sessions.insert(session_id.into(), slot.clone());
        Ok(Some(slot))
    }

    fn forget(&self, session_id: &str) {
        self.sessions.lock().unwrap().remove(session_id);
    }

    fn reserve(&self, weight: usize) -> Result<(), EngineError> {
        let capacity = self.options.queue_capacity;
        let mut current = self.shared.pending.load(Ordering::SeqCst);
        loop {
            if current + weight > capacity && current > 0 {
                return Err(EngineError::Backpressure {
                    retry_after_ms: self.config.batch_flush.max_interval_ms,
                });
            }
            match self.shared.pending.compare_exchange(current, current + weight, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return Ok(()),
                Err(now) => current = now,
            }
        }
    }

    fn release(&self, weight: usize) {
        self.shared.pending.fetch_sub(weight, Ordering::SeqCst);
    }

    /// Journals an applied op, queues it for the writer and waits until the
    /// journal entry is on disk. If journaling or queueing fails the
    /// in-memory session is dropped so it is rebuilt from durable state.
    fn submit(&self, slot: &Slot, op: Op, applied: &Applied, weight: usize) -> Result<(), EngineError> {
        let mut log = self.shared.log.lock().unwrap();
        let seq = log.next_seq;
        let entry = Entry {
            seq,
            session_id: slot.session_id().into(),
            user_id: slot.user_id.clone(),
            op,
        };
        let result = log
            .journal
            .append(&entry)
            .and_then(|_| {
                let commit = slot.commit(seq, entry.op, applied);
                send(&log, Queued { commit, weight })
            });
        match result {
            Ok(()) => {
                log.next_seq += 1;
                let syncer = log.journal.syncer();
                drop(log);
                syncer.wait(seq).map_err(EngineError::from)
            }
            Err(e) => {
                drop(log);
                self.release(weight);
                self.forget(slot.session_id());
                Err(e.into())
            }
        }
    }

    fn check_open(&self) -> Result<(), EngineError> {
        if self.shared.log.lock().unwrap().tx.is_none() {
            return Err(EngineError::Closed);
        }
        Ok(())
    }

    pub fn ingest(&self, batch: IngestBatch) -> Result<IngestAck, EngineError> {
        self.check_open()?;
        if batch.session_id.is_empty() {
            return Err(EngineError::BadRequest("session_id is required".into()));
        }
        let mut ack = IngestAck {
            session_id: batch.session_id.clone(),
            client_sequence: batch.client_sequence,
            accepted_count: 0,
            rejected: Vec::new(),
            duplicate: false,
        };
        let mut parsed = Vec::with_capacity(batch.events.len());
        let mut positions = Vec::with_capacity(batch.events.len());
        for (i, value) in batch.events.into_iter().enumerate() {
            let event_id = value.get("event_id").and_then(|v| v.as_str()).map(String::from);
            match serde_json::from_value::<RawTraceEvent>(value) {
                Ok(e) => {
                    parsed.push(e);
                    positions.push(i);
                }
                Err(err) => ack.rejected.push(Rejection {
                    index: i,
                    event_id,
                    reason: format!("malformed event: {err}"),
                }),
            }
        }
        let user = parsed.first().map(|e| e.user_id.clone());
        let Some(slot) = self.slot(&batch.session_id, user.as_deref())? else {
            return Ok(ack);
        };
        let mut slot = slot.lock().unwrap();
        if slot.last_client_sequence.is_some_and(|last| batch.client_sequence <= last) {
            ack.duplicate = true;
            ack.rejected.clear();
            return Ok(ack);
        }
        let weight = parsed.len().max(1);
        self.reserve(weight)?;
        let mut applied = Applied::default();
        for (e, &i) in parsed.iter().zip(&positions) {
            if let Err(reason) = slot.feed(e, &Feed::Live, &mut applied) {
                applied.reject(i, Some(&e.event_id), reason);
            }
        }
        slot.last_client_sequence = Some(batch.client_sequence);
        ack.accepted_count = applied.events.len();
        ack.rejected.append(&mut applied.rejected);
        ack.rejected.sort_by_key(|r| r.index);
        let op = Op::Ingest {
            client_sequence: batch.client_sequence,
            events: applied.events.clone(),
        };
        self.submit(&slot, op, &applied, weight)?;
        Ok(ack)
    }

    /// Answers a scaffold poll; `None` when nothing is due.
    pub fn scaffold(&self, request: &ScaffoldRequest) -> Result<Option<ScaffoldResponse>, EngineError> {
        self.check_open()?;
        if request.condition == Condition::Control {
            return Err(ScaffoldError::ControlCondition.into());
        }
        let slot = self
            .slot(&request.session_id, Some(&request.user_id))?
            .expect("user given");
        let mut slot = slot.lock().unwrap();
        self.reserve(1)?;
        let op = Op::Scaffold { request: request.clone() };
        let applied = match slot.apply(&op) {
            Ok(a) => a,
            Err(e) => {
                self.release(1);
                return Err(e);
            }
        };
        self.submit(&slot, op, &applied, 1)?;
        Ok(applied.response)
    }

    /// Applies one scaffold interaction and returns the to-do list it touched.
    pub fn interact(&self, event: &RawTraceEvent) -> Result<InteractionReply, EngineError> {
        self.check_open()?;
        let slot = self
            .slot(&event.session_id, Some(&event.user_id))?
            .expect("user given");
        let mut slot = slot.lock().unwrap();
        self.reserve(1)?;
        let op = Op::Interact { event: event.clone() };
        let applied = match slot.apply(&op) {
            Ok(a) => a,
            Err(e) => {
                self.release(1);
                return Err(e);
            }
        };
        self.submit(&slot, op, &applied, 1)?;
        Ok(applied.reply.expect("interaction reply"))
    }

    /// Closes a session: the open record is finalised, a trailing idle gap up
    /// to `end` becomes OFF_TASK, and pending parser matches are flushed.
    pub fn finish(&self, session_id: &str, end: Option<Millis>) -> Result<FinishReply, EngineError> {
        self.check_open()?;
        let Some(slot) = self.slot(session_id, None)? else {
            return Err(EngineError::BadRequest(format!("unknown session `{session_id}`")));
        };
        let mut slot = slot.lock().unwrap();
        if slot.pipeline.is_finished() {
            return Ok(FinishReply {
                session_id: session_id.into(),
                actions: 0,
                processes: 0,
            });
        }
        self.reserve(1)?;
        let op = Op::Finish { end };
        let applied = slot.apply(&op)?;
        self.submit(&slot, op, &applied, 1)?;
        Ok(FinishReply {
            session_id: session_id.into(),
            actions: applied.emitted.actions.len(),
            processes: applied.emitted.processes.len(),
        })
    }

    /// Restores exported raw events. Each session's events go through the
    /// pipeline in the given order.
    pub fn import(&self, events: &[RawTraceEvent]) -> Result<ImportReport, EngineError> {
        self.check_open()?;
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<(usize, &RawTraceEvent)>> = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            let g = groups.entry(e.session_id.as_str()).or_default();
            if g.is_empty() {
                order.push(&e.session_id);
            }
            g.push((i, e));
        }
        let mut report = ImportReport {
            sessions: order.len(),
            accepted_count: 0,
            rejected: Vec::new(),
        };
        for session in order {
            let group = &groups[session];
            let user = &group[0].1.user_id;
            let slot = self.slot(session, Some(user))?.expect("user given");
            let mut slot = slot.lock().unwrap();
            let weight = group.len();
            loop {
                match self.reserve(weight) {
                    Ok(()) => break,
                    Err(EngineError::Backpressure { .. }) => self.flush()?,
                    Err(e) => return Err(e),
                }
            }
            let mut applied = Applied::default();
            for &(i, e) in group {
                if let Err(reason) = slot.feed(e, &Feed::Restore, &mut applied) {
                    applied.reject(i, Some(&e.event_id), reason);
                }
            }
            report.accepted_count += applied.events.len();
            report.rejected.append(&mut applied.rejected);
            let op = Op::Import {
                events: applied.events.clone(),
            };
            self.submit(&slot, op, &applied, weight)?;
        }
        report.rejected.sort_by_key(|r| r.index);
        Ok(report)
    }

    /// Blocks until everything acknowledged so far is committed.
    pub fn flush(&self) -> Result<(), EngineError> {
        let target = {
            let log = self.shared.log.lock().unwrap();
            if let Some(tx) = &log.tx {
                let _ = tx.send(Msg::Flush);
            }
            log.next_seq - 1
        };
        let mut progress = self.shared.progress.lock().unwrap();
        while progress.committed < target {
            if let Some(e) = &progress.error {
                return Err(EngineError::Storage(anyhow::anyhow!("{e}")));
            }
            progress = self
                .shared
                .changed
                .wait_timeout(progress, Duration::from_millis(200))
                .unwrap()
                .0;
            if self.writer.lock().unwrap().as_ref().is_none_or(|w| w.is_finished()) && progress.committed < target {
                return Err(EngineError::Closed);
            }
        }
        Ok(())
    }

    /// Commits everything pending and stops the writer.
    pub fn shutdown(&self) -> Result<(), EngineError> {
        let flushed = self.flush();
        self.shared.log.lock().unwrap().tx.take();
        if let Some(w) = self.writer.lock().unwrap().take() {
            let _ = w.join();
        }
        flushed
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if let Err(e) = self.shutdown() {
            if !matches!(e, EngineError::Closed) {
                log::error!("shutdown: {e}");
            }
        }
    }
}

fn send(log: &LogState, item: Queued) -> anyhow::Result<()> {
    let tx = log.tx.as_ref().ok_or_else(|| anyhow::anyhow!("writer stopped"))?;
    tx.send(Msg::Commit(Box::new(item))).map_err(|_| anyhow::anyhow!("writer stopped"))
}

fn writer_loop(mut store: Store, rx: Receiver<Msg>, shared: Arc<Shared>, max_events: usize, interval: Duration) {
    let mut buffer: Vec<Queued> = Vec::new();
    let mut buffered_events = 0usize;
    let mut deadline: Option<Instant> = None;
    loop {
        let msg = match deadline {
            None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
            Some(d) => rx.recv_timeout(d.saturating_duration_since(Instant::now())),
        };
        let (flush_now, stop) = match msg {
            Ok(Msg::Commit(q)) => {
                buffered_events += q.commit.events.len();
                buffer.push(*q);
                deadline.get_or_insert_with(|| Instant::now() + interval);
                (buffered_events >= max_events, false)
            }
            Ok(Msg::Flush) => (true, false),
            Err(RecvTimeoutError::Timeout) => (true, false),
            Err(RecvTimeoutError::Disconnected) => (true, true),
        };
        if flush_now && !buffer.is_empty() {
            loop {
                let commits: Vec<Commit> = buffer.iter().map(|q| q.commit.clone()).collect();
                match store.apply(&commits) {
                    Ok(()) => break,
                    Err(e) => {
                        log::error!("batch commit failed, retrying: {e:#}");
                        shared.progress.lock().unwrap().error = Some(format!("{e:#}"));
                        shared.changed.notify_all();
                        std::thread::sleep(Duration::from_millis(250));
                    }
                }
            }
            let last = buffer.last().map_or(0, |q| q.commit.seq);
            let weight: usize = buffer.iter().map(|q| q.weight).sum();
            buffer.clear();
            buffered_events = 0;
            deadline = None;
            shared.pending.fetch_sub(weight, Ordering::SeqCst);
            {
                let mut p = shared.progress.lock().unwrap();
                p.committed = p.committed.max(last);
                p.error = None;
            }
            shared.changed.notify_all();
            let mut log = shared.log.lock().unwrap();
            if let Err(e) = log.journal.compact(last) {
                log::warn!("journal compaction failed: {e:#}");
            }
        } else if flush_now {
            shared.changed.notify_all();
        }
        if stop {
            break;
        }
    }
}
