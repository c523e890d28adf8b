//! Per-session chain: labeller, OFF_TASK detection, streaming parser, and
//! the scaffold state that depends on them.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::action::{ActionLabeler, ActionRecord, LabelError, OffTaskDetector};
use crate::config::StudyConfig;
use crate::event::{Millis, RawTraceEvent};
use crate::process::{CompiledRules, ProcessEvent, StreamingParser};
use crate::scaffold::{
    evaluate_request, record_interaction, InteractionOutcome, ScaffoldDecision, ScaffoldError,
    ScaffoldRequest,
};
use crate::session::{Condition, DetectedProcess, SessionState};

/// Records and processes finalised by one step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Emitted {
    pub actions: Vec<ActionRecord>,
    pub processes: Vec<ProcessEvent>,
}

impl Emitted {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.processes.is_empty()
    }

    fn extend(&mut self, other: Emitted) {
        self.actions.extend(other.actions);
        self.processes.extend(other.processes);
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum PipelineError {
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
}

/// A delivered scaffold together with what recording it emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaffoldStep {
    pub decision: ScaffoldDecision,
    /// The trace event actually appended, with its final timestamp.
    pub appended: Option<RawTraceEvent>,
    pub emitted: Emitted,
}

#[derive(Debug, Clone)]
pub struct SessionPipeline {
    config: Arc<StudyConfig>,
    labeler: ActionLabeler,
    off_task: OffTaskDetector,
    parser: StreamingParser,
    state: SessionState,
    finished: bool,
}

impl SessionPipeline {
    pub fn new(config: Arc<StudyConfig>, rules: Arc<CompiledRules>, state: SessionState) -> Self {
        SessionPipeline {
            labeler: ActionLabeler::new(&config).with_history(&state.pages_visited),
            off_task: OffTaskDetector::new(config.off_task_threshold_ms()),
            parser: StreamingParser::new(rules),
            config,
            state,
            finished: false,
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn last_timestamp(&self) -> Option<Millis> {
        self.labeler.last_timestamp()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Feeds one event. A rejected event changes nothing.
    pub fn push(&mut self, event: &RawTraceEvent) -> Result<Emitted, LabelError> {
        let records = self.labeler.push(event)?;
        let url = event.page_url.as_str();
        if !self.state.pages_visited.contains_key(url) {
            if let Some(&first) = self.labeler.pages_visited().get(url) {
                self.state.record_visit(url, first);
            }
        }
        self.state.advance(event.timestamp);
        Ok(self.forward(records))
    }

    fn forward(&mut self, records: Vec<ActionRecord>) -> Emitted {
        let mut out = Emitted::default();
        for record in records {
            for numbered in self.off_task.push(record) {
                out.processes.extend(self.parser.push(numbered.clone()));
                out.actions.push(numbered);
            }
        }
        self.state.record_processes(&out.processes);
        out
    }

    /// Closes the session. With `session_end` the open record runs up to it
    /// and a trailing idle gap becomes OFF_TASK.
    pub fn finish(&mut self, session_end: Option<Millis>) -> Emitted {
        if self.finished {
            return Emitted::default();
        }
        self.finished = true;
        let records = match session_end {
            Some(end) => self.labeler.finish_at(end),
            None => self.labeler.finish(),
        };
        let mut out = self.forward(records);
        if let Some(gap) = self.off_task.finish(session_end) {
            out.processes.extend(self.parser.push(gap.clone()));
            out.actions.push(gap);
        }
        let tail = self.parser.finish();
        self.state.record_processes(&tail);
        out.processes.extend(tail);
        if let Some(end) = session_end {
            self.state.advance(end);
        }
        out
    }

    /// Processes that would be detected if the session ended at `now`.
    /// Nothing is committed.
    pub fn provisional_processes(&self, now: Millis) -> Vec<ProcessEvent> {
        if self.finished {
            return Vec::new();
        }
        let mut probe = self.clone();
        let now = now.max(probe.labeler.last_timestamp().unwrap_or(0));
        probe.finish(Some(now)).processes
    }

    /// Answers a scaffold poll. Personalised answers see committed processes
    /// plus those the stream up to `elapsed_ms` already implies. The
    /// `Message_Triggered` event is appended no earlier than the last event
    /// seen.
    pub fn scaffold(&mut self, request: &ScaffoldRequest) -> Result<Option<ScaffoldStep>, PipelineError> {
        let mut view = self.state.clone();
        if request.condition == Condition::Personalised {
            view.detected_processes.extend(
                self.provisional_processes(request.elapsed_ms)
                    .iter()
                    .map(DetectedProcess::from),
            );
        }
        let Some(decision) = evaluate_request(request, &mut view, &self.config)? else {
            self.state.advance(request.elapsed_ms);
            return Ok(None);
        };
        self.state.condition = view.condition;
        self.state.scaffolds_delivered = view.scaffolds_delivered;
        self.state.advance(request.elapsed_ms);
        let mut step = ScaffoldStep {
            decision,
            appended: None,
            emitted: Emitted::default(),
        };
        if let Some(mut event) = step.decision.trace_event.clone() {
            if !self.finished {
                event.timestamp = event.timestamp.max(self.last_timestamp().unwrap_or(0));
                step.emitted = self.push(&event)?;
                step.appended = Some(event);
            }
        }
        Ok(Some(step))
    }

    /// Applies a scaffold interaction and appends it to the trace. Either both
    /// happen or neither does.
    pub fn interact(&mut self, event: &RawTraceEvent) -> Result<(InteractionOutcome, Emitted), PipelineError> {
        let mut state = self.state.clone();
        let outcome = record_interaction(event, &mut state)?;
        let mut probe = self.labeler.clone();
        probe.push(event)?;
        self.state.scaffolds_delivered = state.scaffolds_delivered;
        let emitted = self.push(event)?;
        Ok((outcome, emitted))
    }
}

/// Offline run over one session's complete event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineRun {
    pub actions: Vec<ActionRecord>,
    pub processes: Vec<ProcessEvent>,
    pub rejected: Vec<LabelError>,
    pub state: SessionState,
}

/// Labels and parses a stored stream the way the live pipeline does.
pub fn run_offline(
    events: &[RawTraceEvent],
    config: Arc<StudyConfig>,
    rules: Arc<CompiledRules>,
    state: SessionState,
    session_end: Option<Millis>,
) -> OfflineRun {
    let mut pipeline = SessionPipeline::new(config, rules, state);
    let mut emitted = Emitted::default();
    let mut rejected = Vec::new();
    for event in events {
        match pipeline.push(event) {
            Ok(out) => emitted.extend(out),
            Err(e) => rejected.push(e),
        }
    }
    emitted.extend(pipeline.finish(session_end));
    OfflineRun {
        actions: emitted.actions,
        processes: emitted.processes,
        rejected,
        state: pipeline.state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionLabel;
    use crate::event::{EventKind, ScaffoldSubAction, PAYLOAD_SUB_ACTION};
    use crate::process::{compile_rules, parse_actions};
    use crate::scaffold::PAYLOAD_OPTION_ID;
    use crate::testkit::{self, ev};

    fn pipeline() -> SessionPipeline {
        let cfg = testkit::study_config();
        let rules = Arc::new(compile_rules(&cfg).unwrap());
        SessionPipeline::new(Arc::new(cfg), rules, SessionState::new("s1", "u1"))
    }

    fn orientation(dwell_ms: Millis) -> Vec<RawTraceEvent> {
        let gi_end = 5_000 + dwell_ms;
        vec_events(&[
            ("n0", 5_000, EventKind::Navigation, testkit::INSTRUCTIONS),
            ("s0", 5_000 + dwell_ms / 2, EventKind::Scroll, testkit::INSTRUCTIONS),
            ("n1", gi_end, EventKind::Navigation, testkit::CONTENTS),
            ("n2", gi_end + 5_000, EventKind::Navigation, testkit::RELEVANT_1),
            ("s2", gi_end + 15_000, EventKind::Scroll, testkit::RELEVANT_1),
            ("s3", gi_end + 25_000, EventKind::Scroll, testkit::RELEVANT_1),
        ])
    }

    fn vec_events(spec: &[(&str, Millis, EventKind, &str)]) -> Vec<RawTraceEvent> {
        spec.iter().map(|&(id, ts, kind, url)| ev(id, ts, kind, url)).collect()
    }

    fn request(condition: Condition, elapsed_ms: Millis) -> ScaffoldRequest {
        ScaffoldRequest {
            user_id: "u1".into(),
            session_id: "s1".into(),
            condition,
            elapsed_ms,
        }
    }

    fn enabled_after(dwell_ms: Millis) -> Vec<bool> {
        let mut p = pipeline();
        for e in orientation(dwell_ms) {
            p.push(&e).unwrap();
        }
        let step = p.scaffold(&request(Condition::Personalised, 120_000)).unwrap().unwrap();
        step.decision.response.options.iter().map(|o| o.enabled).collect()
    }

    #[test]
    fn sixteen_second_dwell_disables_reorient() {
        assert_eq!(enabled_after(16_000), [true, true, false, true]);
    }

    #[test]
    fn fourteen_second_dwell_keeps_reorient() {
        // the short instruction visit is plain navigation; the reading still
        // counts as first reading, which covers option (a)
        assert_eq!(enabled_after(14_000), [false, true, true, true]);
    }

    #[test]
    fn scaffold_event_lands_in_the_trace() {
        let mut p = pipeline();
        for e in orientation(20_000) {
            p.push(&e).unwrap();
        }
        let step = p.scaffold(&request(Condition::Generalised, 120_000)).unwrap().unwrap();
        assert_eq!(step.appended.as_ref().unwrap().timestamp, 120_000);
        let mut out = step.emitted;
        out.extend(p.finish(None));
        let last = out.actions.last().unwrap();
        assert_eq!(last.label, ActionLabel::Scaffolding);
        assert_eq!(last.sub_action, Some(ScaffoldSubAction::MessageTriggered));
    }

    #[test]
    fn interaction_is_recorded_and_traced() {
        let mut p = pipeline();
        p.push(&ev("n", 1_000, EventKind::Navigation, testkit::RELEVANT_1)).unwrap();
        p.scaffold(&request(Condition::Generalised, 120_000)).unwrap();
        let check = ev("c", 121_000, EventKind::ScaffoldInteract, "")
            .with_payload(PAYLOAD_SUB_ACTION, "MessageOption_Checked")
            .with_payload(PAYLOAD_OPTION_ID, "b");
        let make = ev("m", 122_000, EventKind::ScaffoldInteract, "")
            .with_payload(PAYLOAD_SUB_ACTION, "CreateChecklist");
        p.interact(&check).unwrap();
        let (outcome, _) = p.interact(&make).unwrap();
        assert_eq!(outcome.todo_list.unwrap().option_ids().collect::<Vec<_>>(), ["b"]);

        let stale = ev("x", 1_500, EventKind::ScaffoldInteract, "")
            .with_payload(PAYLOAD_SUB_ACTION, "CurrToDoListItem_Checked")
            .with_payload(PAYLOAD_OPTION_ID, "b");
        let before = p.state().clone();
        assert!(matches!(p.interact(&stale), Err(PipelineError::Label(_))));
        assert_eq!(p.state(), &before);
    }

    #[test]
    fn online_equals_offline() {
        let cfg = Arc::new(testkit::study_config());
        let rules = Arc::new(compile_rules(&cfg).unwrap());
        let mut events = orientation(20_000);
        events.push(ev("t", 600_000, EventKind::TimerCheck, testkit::RELEVANT_1));
        let mut p = SessionPipeline::new(cfg.clone(), rules.clone(), SessionState::new("s1", "u1"));
        let mut online = Emitted::default();
        for e in &events {
            online.extend(p.push(e).unwrap());
        }
        online.extend(p.finish(Some(700_000)));
        let offline = run_offline(&events, cfg, rules.clone(), SessionState::new("s1", "u1"), Some(700_000));
        assert_eq!(online.actions, offline.actions);
        assert_eq!(online.processes, offline.processes);
        assert_eq!(parse_actions(&offline.actions, &rules), offline.processes);
        assert_eq!(
            offline.actions.iter().filter(|a| a.label == ActionLabel::OffTask).count(),
            1
        );
    }
}
