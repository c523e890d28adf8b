//! Raw events to learning actions.
//!
//! [`ActionLabeler`] is a per-session streaming state machine. An action
//! record stays open while later events extend it (keystroke bursts, scrolls
//! on the same page, events of a tool that is still open) and is emitted once
//! an event arrives that starts a different record.
//!
//! A closed record ends at the timestamp of the event that closed it, unless
//! that event came `off_task_threshold` or more after the record's last own
//! event; then it ends at its last own event and the idle gap is left for
//! [`detect_off_task`] to fill. Such a gap closes the open record even when
//! the late event would otherwise have extended it.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::error::ParseEnumError;
use crate::event::{
    closed_enum, EventError, EventKind, Millis, RawTraceEvent, ScaffoldSubAction, Tool,
    PAYLOAD_SUB_ACTION,
};
use crate::page::{PageCatalog, PageClass};
use crate::session::SessionState;

closed_enum! {
    pub enum ActionLabel {
        GeneralInstruction => "GENERAL_INSTRUCTION",
        Rubric => "RUBRIC",
        RelevantReading => "RELEVANT_READING",
        RelevantReReading => "RELEVANT_RE-READING",
        IrrelevantReading => "IRRELEVANT_READING",
        IrrelevantReReading => "IRRELEVANT_RE-READING",
        Navigation => "NAVIGATION",
        OpenEssay => "OPEN_ESSAY",
        WriteEssay => "WRITE_ESSAY",
        EditAnnotation => "EDIT_ANNOTATION",
        ReadAnnotation => "READ_ANNOTATION",
        LabelAnnotation => "LABEL_ANNOTATION",
        SearchAnnotation => "SEARCH_ANNOTATION",
        Timer => "TIMER",
        SearchContent => "SEARCH_CONTENT",
        Planner => "PLANNER",
        OffTask => "OFF_TASK",
        Scaffolding => "SCAFFOLDING",
    }
}

impl ActionLabel {
    fn for_tool(tool: Tool) -> ActionLabel {
        match tool {
            Tool::Annotation => ActionLabel::ReadAnnotation,
            Tool::AnnotationSearch => ActionLabel::SearchAnnotation,
            Tool::ContentSearch => ActionLabel::SearchContent,
            Tool::Timer => ActionLabel::Timer,
            Tool::Planner => ActionLabel::Planner,
            Tool::Essay => ActionLabel::OpenEssay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    /// Position of the record in its session's action stream.
    pub id: u64,
    pub session_id: String,
    pub label: ActionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_action: Option<ScaffoldSubAction>,
    pub start: Millis,
    pub end: Millis,
    pub source_event_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_class: Option<PageClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_url: Option<String>,
}

impl ActionRecord {
    pub fn duration(&self) -> Millis {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("event {event_id}: timestamp {timestamp} is before the previous event at {previous}")]
    OutOfOrder {
        event_id: String,
        timestamp: Millis,
        previous: Millis,
    },
    #[error("event {event_id}: belongs to session {found}, labeller is bound to {expected}")]
    WrongSession {
        event_id: String,
        expected: String,
        found: String,
    },
    #[error("event {event_id}: {source}")]
    Invalid { event_id: String, source: EventError },
    #[error("event {event_id}: expected a scaffold_interact event, found {kind}")]
    NotScaffold { event_id: String, kind: EventKind },
}

/// Maps a `scaffold_interact` event to its SCAFFOLDING action.
pub fn label_scaffold_interaction(event: &RawTraceEvent) -> Result<ActionRecord, LabelError> {
    let sub_action = scaffold_sub_action(event)?;
    Ok(ActionRecord {
        id: 0,
        session_id: event.session_id.clone(),
        label: ActionLabel::Scaffolding,
        sub_action: Some(sub_action),
        start: event.timestamp,
        end: event.timestamp,
        source_event_ids: vec![event.event_id.clone()],
        page_class: None,
        page_url: None,
    })
}

fn scaffold_sub_action(event: &RawTraceEvent) -> Result<ScaffoldSubAction, LabelError> {
    if event.event_kind != EventKind::ScaffoldInteract {
        return Err(LabelError::NotScaffold {
            event_id: event.event_id.clone(),
            kind: event.event_kind,
        });
    }
    let raw = event
        .payload
        .get(PAYLOAD_SUB_ACTION)
        .ok_or_else(|| LabelError::Invalid {
            event_id: event.event_id.clone(),
            source: EventError::MissingField("payload.sub_action"),
        })?;
    raw.parse().map_err(|_| LabelError::Invalid {
        event_id: event.event_id.clone(),
        source: EventError::UnknownSubAction(raw.clone()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelerSettings {
    pub dwell_threshold_ms: Millis,
    pub off_task_threshold_ms: Millis,
    pub burst_gap_ms: Millis,
}

impl LabelerSettings {
    pub fn from_config(config: &StudyConfig) -> Self {
        LabelerSettings {
            dwell_threshold_ms: config.instruction_dwell_threshold_ms(),
            off_task_threshold_ms: config.off_task_threshold_ms(),
            burst_gap_ms: config.keystroke_burst_gap_ms(),
        }
    }
}

#[derive(Debug, Clone)]
struct PageVisit {
    url: String,
    class: PageClass,
    revisit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpenKind {
    /// Reading or navigating the current page; labelled on close by dwell.
    Page,
    /// A tool action; `via_tool` marks records opened by `tool_open` that
    /// absorb further events of the same label while the tool stays open.
    Tool { label: ActionLabel, via_tool: Option<Tool> },
    Essay,
    Scaffold(ScaffoldSubAction),
}

#[derive(Debug, Clone)]
struct OpenRecord {
    kind: OpenKind,
    start: Millis,
    last: Millis,
    sources: Vec<String>,
    page_url: String,
    page_class: PageClass,
    revisit: bool,
}

/// Per-session streaming labeller.
#[derive(Debug, Clone)]
pub struct ActionLabeler {
    settings: LabelerSettings,
    catalog: PageCatalog,
    session_id: Option<String>,
    pages_visited: BTreeMap<String, Millis>,
    visit: Option<PageVisit>,
    open: Option<OpenRecord>,
    open_tools: Vec<Tool>,
    last_ts: Option<Millis>,
    next_id: u64,
    noise: u64,
}

impl ActionLabeler {
    pub fn new(config: &StudyConfig) -> Self {
        Self::with_settings(LabelerSettings::from_config(config), config.page_catalog.clone())
    }

    pub fn with_settings(settings: LabelerSettings, catalog: PageCatalog) -> Self {
        ActionLabeler {
            settings,
            catalog,
            session_id: None,
            pages_visited: BTreeMap::new(),
            visit: None,
            open: None,
            open_tools: Vec::new(),
            last_ts: None,
            next_id: 0,
            noise: 0,
        }
    }

    /// Seeds first-visit history, e.g. from a resumed [`SessionState`].
    pub fn with_history(mut self, pages_visited: &BTreeMap<String, Millis>) -> Self {
        self.pages_visited = pages_visited.clone();
        self
    }

    pub fn pages_visited(&self) -> &BTreeMap<String, Millis> {
        &self.pages_visited
    }

    /// Number of events dropped as noise so far.
    pub fn noise_count(&self) -> u64 {
        self.noise
    }

    pub fn last_timestamp(&self) -> Option<Millis> {
        self.last_ts
    }

    /// Feeds one event; returns the records it closed. A rejected event leaves
    /// the labeller unchanged.
    pub fn push(&mut self, event: &RawTraceEvent) -> Result<Vec<ActionRecord>, LabelError> {
        match &self.session_id {
            Some(expected) if *expected != event.session_id => {
                return Err(LabelError::WrongSession {
                    event_id: event.event_id.clone(),
                    expected: expected.clone(),
                    found: event.session_id.clone(),
                })
            }
            _ => {}
        }
        if let Some(previous) = self.last_ts {
            if event.timestamp < previous {
                return Err(LabelError::OutOfOrder {
                    event_id: event.event_id.clone(),
                    timestamp: event.timestamp,
                    previous,
                });
            }
        }
        event.validate().map_err(|source| LabelError::Invalid {
            event_id: event.event_id.clone(),
            source,
        })?;
        if self.session_id.is_none() {
            self.session_id = Some(event.session_id.clone());
        }
        self.last_ts = Some(event.timestamp);

        let mut out = Vec::new();
        let ts = event.timestamp;
        let idle = self
            .open
            .as_ref()
            .is_some_and(|open| ts - open.last >= self.settings.off_task_threshold_ms);
        if idle {
            self.close_into(ts, &mut out);
        }
        match event.event_kind {
            EventKind::MouseMove => {
                if !self.open_tools.is_empty() && self.open.is_some() {
                    self.attach(event);
                } else {
                    self.noise += 1;
                }
            }
            EventKind::Navigation => {
                let same_page = self.visit.as_ref().is_some_and(|v| v.url == event.page_url);
                if same_page && self.open_is_page(&event.page_url) {
                    self.attach(event);
                } else {
                    self.close_into(ts, &mut out);
                    self.begin_visit(&event.page_url, ts);
                    self.open_page(event);
                }
            }
            EventKind::Scroll => self.page_activity(event, &mut out),
            EventKind::MouseClick | EventKind::Keystroke => {
                let attachable = match &self.open {
                    Some(open) => open.kind != OpenKind::Page || open.page_url == event.page_url,
                    None => false,
                };
                if attachable {
                    self.attach(event);
                } else {
                    self.page_activity(event, &mut out);
                }
            }
            EventKind::ToolOpen => {
                // validated above
                let tool = event.tool().expect("validated tool");
                self.close_into(ts, &mut out);
                if !self.open_tools.contains(&tool) {
                    self.open_tools.push(tool);
                }
                let kind = OpenKind::Tool {
                    label: ActionLabel::for_tool(tool),
                    via_tool: Some(tool),
                };
                self.open_record(kind, event);
            }
            EventKind::ToolClose => {
                let tool = event.tool().expect("validated tool");
                self.open_tools.retain(|t| *t != tool);
                if self.open.is_some() {
                    self.attach(event);
                } else {
                    self.open_record(
                        OpenKind::Tool {
                            label: ActionLabel::for_tool(tool),
                            via_tool: None,
                        },
                        event,
                    );
                }
            }
            EventKind::TimerCheck => self.tool_action(ActionLabel::Timer, event, &mut out),
            EventKind::AnnotationCreate
            | EventKind::AnnotationEdit
            | EventKind::AnnotationDelete => {
                self.tool_action(ActionLabel::EditAnnotation, event, &mut out)
            }
            EventKind::AnnotationRead => {
                self.tool_action(ActionLabel::ReadAnnotation, event, &mut out)
            }
            EventKind::AnnotationLabel => {
                self.tool_action(ActionLabel::LabelAnnotation, event, &mut out)
            }
            EventKind::AnnotationSearch => {
                self.tool_action(ActionLabel::SearchAnnotation, event, &mut out)
            }
            EventKind::ContentSearch => {
                self.tool_action(ActionLabel::SearchContent, event, &mut out)
            }
            EventKind::PlannerInteract => self.tool_action(ActionLabel::Planner, event, &mut out),
            EventKind::EssayKeystroke => {
                let continues = self.open.as_ref().is_some_and(|open| {
                    open.kind == OpenKind::Essay && ts - open.last <= self.settings.burst_gap_ms
                });
                if continues {
                    self.attach(event);
                } else {
                    self.close_into(ts, &mut out);
                    self.open_record(OpenKind::Essay, event);
                }
            }
            EventKind::ScaffoldInteract => {
                let sub = scaffold_sub_action(event)?;
                self.close_into(ts, &mut out);
                self.open_record(OpenKind::Scaffold(sub), event);
            }
        }
        Ok(out)
    }

    /// Closes the open record at its last own event.
    pub fn finish(&mut self) -> Vec<ActionRecord> {
        let mut out = Vec::new();
        if let Some(open) = self.open.take() {
            let end = open.last;
            out.push(self.seal(open, end));
        }
        out
    }

    /// Closes the open record as if the next event arrived at `now`.
    pub fn finish_at(&mut self, now: Millis) -> Vec<ActionRecord> {
        let mut out = Vec::new();
        self.close_into(now, &mut out);
        out
    }

    fn open_is_page(&self, url: &str) -> bool {
        self.open
            .as_ref()
            .is_some_and(|o| o.kind == OpenKind::Page && o.page_url == url)
    }

    fn page_activity(&mut self, event: &RawTraceEvent, out: &mut Vec<ActionRecord>) {
        if self.open_is_page(&event.page_url) {
            self.attach(event);
            return;
        }
        self.close_into(event.timestamp, out);
        let same_visit = self.visit.as_ref().is_some_and(|v| v.url == event.page_url);
        if !same_visit {
            self.begin_visit(&event.page_url, event.timestamp);
        }
        self.open_page(event);
    }

    fn tool_action(&mut self, label: ActionLabel, event: &RawTraceEvent, out: &mut Vec<ActionRecord>) {
        let absorbed = self.open.as_ref().is_some_and(|open| match open.kind {
            OpenKind::Tool {
                label: l,
                via_tool: Some(tool),
            } => l == label && self.open_tools.contains(&tool),
            _ => false,
        });
        if absorbed {
            self.attach(event);
        } else {
            self.close_into(event.timestamp, out);
            self.open_record(OpenKind::Tool { label, via_tool: None }, event);
        }
    }

    fn begin_visit(&mut self, url: &str, ts: Millis) {
        let revisit = self.pages_visited.contains_key(url);
        self.pages_visited.entry(url.into()).or_insert(ts);
        self.visit = Some(PageVisit {
            url: url.into(),
            class: self.catalog.classify(url),
            revisit,
        });
    }

    fn open_page(&mut self, event: &RawTraceEvent) {
        self.open_record(OpenKind::Page, event);
    }

    fn open_record(&mut self, kind: OpenKind, event: &RawTraceEvent) {
        let (page_url, page_class, revisit) = match (&self.visit, kind) {
            (Some(v), OpenKind::Page) => (v.url.clone(), v.class, v.revisit),
            _ => (
                event.page_url.clone(),
                self.catalog.classify(&event.page_url),
                false,
            ),
        };
        debug_assert!(self.open.is_none());
        self.open = Some(OpenRecord {
            kind,
            start: event.timestamp,
            last: event.timestamp,
            sources: vec![event.event_id.clone()],
            page_url,
            page_class,
            revisit,
        });
    }

    fn attach(&mut self, event: &RawTraceEvent) {
        let open = self.open.as_mut().expect("attach requires an open record");
        open.last = event.timestamp;
        open.sources.push(event.event_id.clone());
    }

    fn close_into(&mut self, next_ts: Millis, out: &mut Vec<ActionRecord>) {
        if let Some(open) = self.open.take() {
            let end = if next_ts.saturating_sub(open.last) < self.settings.off_task_threshold_ms {
                next_ts.max(open.last)
            } else {
                open.last
            };
            out.push(self.seal(open, end));
        }
    }

    fn seal(&mut self, open: OpenRecord, end: Millis) -> ActionRecord {
        let (label, sub_action) = match open.kind {
            OpenKind::Page => (
                self.page_label(open.page_class, open.revisit, end - open.start),
                None,
            ),
            OpenKind::Tool { label, .. } => (label, None),
            OpenKind::Essay => (ActionLabel::WriteEssay, None),
            OpenKind::Scaffold(sub) => (ActionLabel::Scaffolding, Some(sub)),
        };
        let id = self.next_id;
        self.next_id += 1;
        ActionRecord {
            id,
            session_id: self.session_id.clone().unwrap_or_default(),
            label,
            sub_action,
            start: open.start,
            end,
            source_event_ids: open.sources,
            page_class: Some(open.page_class),
            page_url: Some(open.page_url),
        }
    }

    fn page_label(&self, class: PageClass, revisit: bool, dwell: Millis) -> ActionLabel {
        if class == PageClass::TableOfContents || dwell < self.settings.dwell_threshold_ms {
            return ActionLabel::Navigation;
        }
        match (class, revisit) {
            (PageClass::GeneralInstruction, _) => ActionLabel::GeneralInstruction,
            (PageClass::Rubric, _) => ActionLabel::Rubric,
            (PageClass::RelevantContent, false) => ActionLabel::RelevantReading,
            (PageClass::RelevantContent, true) => ActionLabel::RelevantReReading,
            (PageClass::IrrelevantContent, false) => ActionLabel::IrrelevantReading,
            (PageClass::IrrelevantContent, true) => ActionLabel::IrrelevantReReading,
            (PageClass::TableOfContents, _) => ActionLabel::Navigation,
        }
    }
}

/// Result of labelling a whole event stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelRun {
    pub actions: Vec<ActionRecord>,
    pub rejected: Vec<LabelError>,
}

/// Labels a complete, time-ordered event stream. Rejected events are
/// reported and skipped; `state` receives first-visit times and elapsed time.
pub fn label_events(
    events: &[RawTraceEvent],
    state: &mut SessionState,
    config: &StudyConfig,
) -> LabelRun {
    let mut labeler = ActionLabeler::new(config).with_history(&state.pages_visited);
    let mut run = LabelRun::default();
    for event in events {
        match labeler.push(event) {
            Ok(records) => run.actions.extend(records),
            Err(e) => run.rejected.push(e),
        }
    }
    run.actions.extend(labeler.finish());
    for (url, first) in labeler.pages_visited() {
        state.record_visit(url, *first);
    }
    if let Some(last) = labeler.last_timestamp() {
        state.advance(last);
    }
    run
}

fn off_task_record(session_id: &str, start: Millis, end: Millis) -> ActionRecord {
    ActionRecord {
        id: 0,
        session_id: session_id.into(),
        label: ActionLabel::OffTask,
        sub_action: None,
        start,
        end,
        source_event_ids: Vec::new(),
        page_class: None,
        page_url: None,
    }
}

/// Streaming OFF_TASK insertion. Output ids are renumbered consecutively.
#[derive(Debug, Clone)]
pub struct OffTaskDetector {
    threshold_ms: Millis,
    session_id: Option<String>,
    previous_end: Millis,
    next_id: u64,
}

impl OffTaskDetector {
    pub fn new(threshold_ms: Millis) -> Self {
        OffTaskDetector {
            threshold_ms,
            session_id: None,
            previous_end: 0,
            next_id: 0,
        }
    }

    pub fn push(&mut self, mut record: ActionRecord) -> Vec<ActionRecord> {
        let mut out = Vec::with_capacity(2);
        if self.session_id.is_none() {
            self.session_id = Some(record.session_id.clone());
        }
        if record.start.saturating_sub(self.previous_end) >= self.threshold_ms {
            let gap = off_task_record(&record.session_id, self.previous_end, record.start);
            out.push(self.number(gap));
        }
        self.previous_end = self.previous_end.max(record.end);
        record.id = 0;
        out.push(self.number(record));
        out
    }

    /// Closes the stream; a trailing gap up to `session_end` may become OFF_TASK.
    pub fn finish(&mut self, session_end: Option<Millis>) -> Option<ActionRecord> {
        let end = session_end?;
        if end.saturating_sub(self.previous_end) >= self.threshold_ms {
            let session = self.session_id.clone().unwrap_or_default();
            let gap = off_task_record(&session, self.previous_end, end);
            self.previous_end = end;
            Some(self.number(gap))
        } else {
            None
        }
    }

    fn number(&mut self, mut record: ActionRecord) -> ActionRecord {
        record.id = self.next_id;
        self.next_id += 1;
        record
    }
}

/// Inserts one OFF_TASK record into every gap of at least `threshold_ms`
/// between session start, consecutive records and (when given) session end.
pub fn detect_off_task(
    actions: &[ActionRecord],
    threshold_ms: Millis,
    session_end: Option<Millis>,
) -> Vec<ActionRecord> {
    let mut detector = OffTaskDetector::new(threshold_ms);
    let mut out = Vec::with_capacity(actions.len());
    for record in actions {
        out.extend(detector.push(record.clone()));
    }
    out.extend(detector.finish(session_end));
    out
}
