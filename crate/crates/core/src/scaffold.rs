//! Timed scaffolds and the to-do lists learners build from them.
//!
//! The client polls with a [`ScaffoldRequest`]. [`evaluate_request`] answers
//! with the earliest due scaffold that has not been delivered yet. In the
//! personalised condition an option is disabled once a process event of its
//! satisfying rule has been detected; a scaffold whose four options are all
//! disabled is delivered as omitted.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{ScaffoldSpec, StudyConfig};
use crate::event::{EventKind, Millis, RawTraceEvent, ScaffoldSubAction, PAYLOAD_SUB_ACTION};
use crate::session::{Condition, DeliveredScaffold, DetectedProcess, SessionState};

pub const PAYLOAD_SCAFFOLD_ID: &str = "scaffold_id";
pub const PAYLOAD_OPTION_ID: &str = "option_id";
/// Comma-separated option ids, for re-ordering and editing a list.
pub const PAYLOAD_ITEMS: &str = "items";
pub const PAYLOAD_OMITTED: &str = "omitted";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldRequest {
    pub user_id: String,
    pub session_id: String,
    pub condition: Condition,
    pub elapsed_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldOptionState {
    pub id: String,
    pub text: String,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldResponse {
    pub scaffold_id: u32,
    pub message: String,
    pub options: Vec<ScaffoldOptionState>,
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToDoItem {
    pub option_id: String,
    pub checked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToDoList {
    pub session_id: String,
    pub scaffold_id: u32,
    pub items: Vec<ToDoItem>,
    pub created_at: Millis,
}

impl ToDoList {
    pub fn option_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.items.iter().map(|i| i.option_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScaffoldError {
    #[error("the control condition receives no scaffolds")]
    ControlCondition,
    #[error("request for session {found} evaluated against session {expected}")]
    WrongSession { expected: String, found: String },
    #[error("event {0} is not a scaffold_interact event")]
    NotScaffoldEvent(String),
    #[error("event {event_id}: {reason}")]
    BadPayload { event_id: String, reason: String },
    #[error("no scaffold has been displayed in this session")]
    NothingDisplayed,
    #[error("scaffold {0} was not displayed in this session")]
    NotDisplayed(u32),
    #[error("scaffold {scaffold_id}: option `{option_id}` was never displayed")]
    UnknownOption { scaffold_id: u32, option_id: String },
    #[error("scaffold {scaffold_id}: option `{option_id}` is disabled")]
    OptionDisabled { scaffold_id: u32, option_id: String },
    #[error("scaffold {0} has no to-do list yet")]
    NoToDoList(u32),
    #[error("scaffold {scaffold_id}: `{option_id}` is not on the to-do list")]
    NotOnList { scaffold_id: u32, option_id: String },
    #[error("scaffold {0}: re-ordered items are not a permutation of the list")]
    NotAPermutation(u32),
    #[error("scaffold {scaffold_id}: `{option_id}` was never selected")]
    NeverSelected { scaffold_id: u32, option_id: String },
}

/// The first scheduled scaffold, in schedule order, that is due at `elapsed`
/// and not yet delivered.
pub fn due_scaffold(elapsed: Millis, config: &StudyConfig, delivered: &[u32]) -> Option<u32> {
    config
        .scaffolds()
        .filter(|s| s.trigger_ms() <= elapsed && !delivered.contains(&s.scaffold_id))
        .map(|s| s.scaffold_id)
        .next()
}

fn detected_within(
    rule_id: &str,
    detected: &[DetectedProcess],
    elapsed: Millis,
    window: Option<Millis>,
) -> bool {
    detected.iter().any(|p| {
        p.rule_id == rule_id
            && p.end <= elapsed
            && window.is_none_or(|w| p.end.saturating_add(w) >= elapsed)
    })
}

/// Renders a scaffold. Personalised rendering disables the options whose
/// rule was detected; generalised rendering ignores detections.
pub fn render(
    spec: ScaffoldSpec<'_>,
    condition: Condition,
    detected: &[DetectedProcess],
    elapsed: Millis,
    window: Option<Millis>,
) -> ScaffoldResponse {
    let options: Vec<ScaffoldOptionState> = spec
        .content
        .options
        .iter()
        .map(|o| ScaffoldOptionState {
            id: o.option_id.clone(),
            text: o.text.clone(),
            enabled: condition != Condition::Personalised
                || !detected_within(&o.satisfying_rule_id, detected, elapsed, window),
        })
        .collect();
    ScaffoldResponse {
        scaffold_id: spec.scaffold_id,
        message: spec.content.prompt_message.clone(),
        omitted: options.iter().all(|o| !o.enabled),
        options,
    }
}

/// A scaffold answer plus the SCAFFOLDING trace event recording it. A
/// repeated request gets the earlier response back and no new event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaffoldDecision {
    pub response: ScaffoldResponse,
    pub trace_event: Option<RawTraceEvent>,
}

/// The engine-side `Message_Triggered` event for a delivery.
pub fn message_triggered_event(
    state: &SessionState,
    response: &ScaffoldResponse,
    at: Millis,
) -> RawTraceEvent {
    RawTraceEvent::new(
        format!("{}:scaffold:{}", state.session_id, response.scaffold_id),
        state.session_id.clone(),
        state.user_id.clone(),
        at,
        EventKind::ScaffoldInteract,
        "",
    )
    .with_payload(PAYLOAD_SUB_ACTION, ScaffoldSubAction::MessageTriggered.as_str())
    .with_payload(PAYLOAD_SCAFFOLD_ID, format!("{}", response.scaffold_id))
    .with_payload(PAYLOAD_OMITTED, if response.omitted { "true" } else { "false" })
}

/// Answers a poll. `Ok(None)` means nothing is due. A delivery, omitted or
/// not, is recorded in `state`.
pub fn evaluate_request(
    request: &ScaffoldRequest,
    state: &mut SessionState,
    config: &StudyConfig,
) -> Result<Option<ScaffoldDecision>, ScaffoldError> {
    if request.condition == Condition::Control {
        return Err(ScaffoldError::ControlCondition);
    }
    if request.session_id != state.session_id {
        return Err(ScaffoldError::WrongSession {
            expected: state.session_id.clone(),
            found: request.session_id.clone(),
        });
    }
    if let Some(last) = state.scaffolds_delivered.last() {
        if request.elapsed_ms <= last.delivered_at {
            return Ok(Some(ScaffoldDecision {
                response: last.response.clone(),
                trace_event: None,
            }));
        }
    }
    let delivered: Vec<u32> = state.delivered_ids().collect();
    let Some(id) = due_scaffold(request.elapsed_ms, config, &delivered) else {
        state.advance(request.elapsed_ms);
        return Ok(None);
    };
    let spec = config.scaffold(id).expect("due scaffold is scheduled");
    let response = render(
        spec,
        request.condition,
        &state.detected_processes,
        request.elapsed_ms,
        config.detection_window_ms(),
    );
    state.condition = request.condition;
    state.advance(request.elapsed_ms);
    let event = message_triggered_event(state, &response, request.elapsed_ms);
    state.scaffolds_delivered.push(DeliveredScaffold {
        scaffold_id: id,
        delivered_at: request.elapsed_ms,
        response: response.clone(),
        selected: Vec::new(),
        ever_selected: Vec::new(),
        todo_list: None,
    });
    Ok(Some(ScaffoldDecision {
        response,
        trace_event: Some(event),
    }))
}

/// Result of one interaction: the list it touched, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionOutcome {
    pub scaffold_id: u32,
    pub todo_list: Option<ToDoList>,
}

fn bad_payload(event: &RawTraceEvent, reason: impl Into<String>) -> ScaffoldError {
    ScaffoldError::BadPayload {
        event_id: event.event_id.clone(),
        reason: reason.into(),
    }
}

fn option_arg(event: &RawTraceEvent) -> Result<&str, ScaffoldError> {
    event
        .payload
        .get(PAYLOAD_OPTION_ID)
        .map(String::as_str)
        .ok_or_else(|| bad_payload(event, "missing option_id"))
}

fn items_arg(event: &RawTraceEvent) -> Result<Vec<String>, ScaffoldError> {
    let raw = event
        .payload
        .get(PAYLOAD_ITEMS)
        .ok_or_else(|| bad_payload(event, "missing items"))?;
    Ok(raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect())
}

fn target<'s>(
    event: &RawTraceEvent,
    state: &'s mut SessionState,
) -> Result<&'s mut DeliveredScaffold, ScaffoldError> {
    match event.payload.get(PAYLOAD_SCAFFOLD_ID) {
        Some(raw) => {
            let id: u32 = raw
                .parse()
                .map_err(|_| bad_payload(event, format!("bad scaffold_id `{raw}`")))?;
            state
                .scaffolds_delivered
                .iter_mut()
                .find(|d| d.scaffold_id == id && !d.response.omitted)
                .ok_or(ScaffoldError::NotDisplayed(id))
        }
        None => state
            .scaffolds_delivered
            .iter_mut()
            .rev()
            .find(|d| !d.response.omitted)
            .ok_or(ScaffoldError::NothingDisplayed),
    }
}

fn displayed_option(d: &DeliveredScaffold, option_id: &str) -> Result<bool, ScaffoldError> {
    d.response
        .options
        .iter()
        .find(|o| o.id == option_id)
        .map(|o| o.enabled)
        .ok_or_else(|| ScaffoldError::UnknownOption {
            scaffold_id: d.scaffold_id,
            option_id: option_id.into(),
        })
}

fn list_item<'d>(d: &'d mut DeliveredScaffold, option_id: &str) -> Result<&'d mut ToDoItem, ScaffoldError> {
    let id = d.scaffold_id;
    let list = d.todo_list.as_mut().ok_or(ScaffoldError::NoToDoList(id))?;
    list.items
        .iter_mut()
        .find(|i| i.option_id == option_id)
        .ok_or_else(|| ScaffoldError::NotOnList {
            scaffold_id: id,
            option_id: option_id.into(),
        })
}

/// Applies one `scaffold_interact` event to the session. The target scaffold
/// is named by the `scaffold_id` payload entry, or else is the latest
/// displayed one. A rejected interaction leaves `state` unchanged.
pub fn record_interaction(
    event: &RawTraceEvent,
    state: &mut SessionState,
) -> Result<InteractionOutcome, ScaffoldError> {
    use ScaffoldSubAction::*;

    if event.event_kind != EventKind::ScaffoldInteract {
        return Err(ScaffoldError::NotScaffoldEvent(event.event_id.clone()));
    }
    if event.session_id != state.session_id {
        return Err(ScaffoldError::WrongSession {
            expected: state.session_id.clone(),
            found: event.session_id.clone(),
        });
    }
    let sub: ScaffoldSubAction = event
        .payload
        .get(PAYLOAD_SUB_ACTION)
        .ok_or_else(|| bad_payload(event, "missing sub_action"))?
        .parse()
        .map_err(|e| bad_payload(event, format!("{e}")))?;
    let d = target(event, state)?;
    let scaffold_id = d.scaffold_id;

    match sub {
        MessageOptionChecked => {
            let option = option_arg(event)?;
            if !displayed_option(d, option)? {
                return Err(ScaffoldError::OptionDisabled {
                    scaffold_id,
                    option_id: option.into(),
                });
            }
            if !d.selected.iter().any(|s| s == option) {
                d.selected.push(option.into());
            }
            if !d.ever_selected.iter().any(|s| s == option) {
                d.ever_selected.push(option.into());
            }
        }
        MessageOptionUnChecked => {
            let option = option_arg(event)?;
            displayed_option(d, option)?;
            d.selected.retain(|s| s != option);
        }
        CreateChecklist => {
            d.todo_list = Some(ToDoList {
                session_id: event.session_id.clone(),
                scaffold_id,
                items: d
                    .selected
                    .iter()
                    .map(|o| ToDoItem {
                        option_id: o.clone(),
                        checked: false,
                    })
                    .collect(),
                created_at: event.timestamp,
            });
        }
        CurrToDoListItemChecked | PrevToDoListItemChecked => {
            list_item(d, option_arg(event)?)?.checked = true;
        }
        CurrToDoListItemUnChecked | PrevToDoListItemUnChecked => {
            list_item(d, option_arg(event)?)?.checked = false;
        }
        CurrToDoListReOrdered | PrevToDoListReOrdered => {
            let order = items_arg(event)?;
            let list = d.todo_list.as_mut().ok_or(ScaffoldError::NoToDoList(scaffold_id))?;
            let mut current: Vec<&str> = list.option_ids().collect();
            let mut wanted: Vec<&str> = order.iter().map(String::as_str).collect();
            current.sort_unstable();
            wanted.sort_unstable();
            if current != wanted {
                return Err(ScaffoldError::NotAPermutation(scaffold_id));
            }
            let mut items = Vec::with_capacity(order.len());
            for id in &order {
                let at = list.items.iter().position(|i| &i.option_id == id).expect("permutation");
                items.push(list.items.swap_remove(at));
            }
            list.items = items;
        }
        CurrToDoListEdit | PrevToDoListEdit => {
            let wanted = items_arg(event)?;
            if d.todo_list.is_none() {
                return Err(ScaffoldError::NoToDoList(scaffold_id));
            }
            if let Some(bad) = wanted.iter().find(|w| !d.ever_selected.contains(w)) {
                return Err(ScaffoldError::NeverSelected {
                    scaffold_id,
                    option_id: bad.clone(),
                });
            }
            let list = d.todo_list.as_mut().expect("checked above");
            let items = wanted
                .iter()
                .map(|w| ToDoItem {
                    option_id: w.clone(),
                    checked: list
                        .items
                        .iter()
                        .any(|i| &i.option_id == w && i.checked),
                })
                .collect();
            list.items = items;
        }
        PrevToDoListItemClickedLink | NextToDoListItemClickedLink => {
            if let Some(option) = event.payload.get(PAYLOAD_OPTION_ID) {
                list_item(d, option)?;
            }
        }
        MessageTriggered | MessageDisplayed | NotificationClicked | MessageClosed
        | CurrToDoListDisplayed | PrevToDoListDisplayed | ToDoListClosed => {}
    }
    Ok(InteractionOutcome {
        scaffold_id,
        todo_list: d.todo_list.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;
    use alloc::vec;

    fn request(condition: Condition, elapsed_ms: Millis) -> ScaffoldRequest {
        ScaffoldRequest {
            user_id: "u1".into(),
            session_id: "s1".into(),
            condition,
            elapsed_ms,
        }
    }

    fn detected(rule_id: &str, end: Millis) -> DetectedProcess {
        let cfg = testkit::study_config();
        DetectedProcess {
            label: cfg.rule(rule_id).unwrap().label,
            rule_id: rule_id.into(),
            start: 0,
            end,
        }
    }

    #[test]
    fn due_follows_schedule() {
        let cfg = testkit::study_config();
        assert_eq!(due_scaffold(120_000, &cfg, &[]), Some(1));
        assert_eq!(due_scaffold(60_000, &cfg, &[]), None);
        assert_eq!(due_scaffold(36 * 60_000, &cfg, &[1, 2, 3, 4]), Some(5));
        assert_eq!(due_scaffold(36 * 60_000, &cfg, &[1, 2, 3, 4, 5]), None);
    }

    #[test]
    fn generalised_scaffold_one_has_all_options() {
        let cfg = testkit::study_config();
        let mut state = SessionState::new("s1", "u1");
        state.detected_processes.push(detected("MC.O.1", 100_000));
        let d = evaluate_request(&request(Condition::Generalised, 120_000), &mut state, &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(d.response.scaffold_id, 1);
        assert!(d.response.options.iter().all(|o| o.enabled));
        assert!(!d.response.omitted);
        assert_eq!(d.response.options[1].text, "Check the essay rubric carefully");
        let ev = d.trace_event.unwrap();
        assert_eq!(ev.payload[PAYLOAD_SUB_ACTION], "Message_Triggered");
        assert_eq!(state.delivered_ids().collect::<Vec<_>>(), [1]);
    }

    #[test]
    fn personalised_disables_detected_option() {
        let cfg = testkit::study_config();
        let mut state = SessionState::new("s1", "u1");
        state.detected_processes.push(detected("MC.O.1", 100_000));
        let d = evaluate_request(&request(Condition::Personalised, 120_000), &mut state, &cfg)
            .unwrap()
            .unwrap();
        let enabled: Vec<bool> = d.response.options.iter().map(|o| o.enabled).collect();
        assert_eq!(enabled, [true, true, false, true]);
        assert!(!d.response.omitted);
    }

    #[test]
    fn all_rules_detected_omits() {
        let cfg = testkit::study_config();
        let mut state = SessionState::new("s1", "u1");
        for o in &cfg.content(1).unwrap().options {
            state.detected_processes.push(detected(&o.satisfying_rule_id, 60_000));
        }
        let d = evaluate_request(&request(Condition::Personalised, 120_000), &mut state, &cfg)
            .unwrap()
            .unwrap();
        assert!(d.response.omitted);
        assert!(d.response.options.iter().all(|o| !o.enabled));
    }

    #[test]
    fn future_detections_do_not_count() {
        let cfg = testkit::study_config();
        let mut state = SessionState::new("s1", "u1");
        state.detected_processes.push(detected("MC.O.1", 130_000));
        let d = evaluate_request(&request(Condition::Personalised, 120_000), &mut state, &cfg)
            .unwrap()
            .unwrap();
        assert!(d.response.options.iter().all(|o| o.enabled));
    }

    #[test]
    fn detection_window_limits_recency() {
        let mut cfg = testkit::study_config();
        cfg.detection_window = Some(30);
        let mut state = SessionState::new("s1", "u1");
        state.detected_processes.push(detected("MC.O.1", 60_000));
        let d = evaluate_request(&request(Condition::Personalised, 120_000), &mut state, &cfg)
            .unwrap()
            .unwrap();
        assert!(d.response.options[2].enabled);
    }

    #[test]
    fn control_condition_is_a_protocol_error() {
        let cfg = testkit::study_config();
        let mut state = SessionState::new("s1", "u1");
        assert_eq!(
            evaluate_request(&request(Condition::Control, 120_000), &mut state, &cfg),
            Err(ScaffoldError::ControlCondition)
        );
    }

    #[test]
    fn repeated_request_is_idempotent() {
        let cfg = testkit::study_config();
        let mut state = SessionState::new("s1", "u1");
        let first = evaluate_request(&request(Condition::Generalised, 120_000), &mut state, &cfg)
            .unwrap()
            .unwrap();
        let before = state.clone();
        let again = evaluate_request(&request(Condition::Generalised, 120_000), &mut state, &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(again.response, first.response);
        assert!(again.trace_event.is_none());
        assert_eq!(state, before);
        assert!(evaluate_request(&request(Condition::Generalised, 130_000), &mut state, &cfg)
            .unwrap()
            .is_none());
    }

    fn interact(sub: ScaffoldSubAction, ts: Millis) -> RawTraceEvent {
        testkit::ev(&format!("i{ts}"), ts, EventKind::ScaffoldInteract, "/")
            .with_payload(PAYLOAD_SUB_ACTION, sub.as_str())
    }

    fn displayed_state(condition: Condition) -> SessionState {
        let cfg = testkit::study_config();
        let mut state = SessionState::new("s1", "u1");
        state.detected_processes.push(detected("MC.O.1", 100_000));
        evaluate_request(&request(condition, 120_000), &mut state, &cfg).unwrap();
        state
    }

    #[test]
    fn check_then_create_checklist() {
        let mut state = displayed_state(Condition::Generalised);
        use ScaffoldSubAction::*;
        record_interaction(&interact(MessageOptionChecked, 121_000).with_payload(PAYLOAD_OPTION_ID, "b"), &mut state)
            .unwrap();
        let out = record_interaction(&interact(CreateChecklist, 122_000), &mut state).unwrap();
        let list = out.todo_list.unwrap();
        assert_eq!(list.option_ids().collect::<Vec<_>>(), ["b"]);
        assert_eq!(list.created_at, 122_000);
    }

    #[test]
    fn reorder_and_check_items() {
        let mut state = displayed_state(Condition::Generalised);
        use ScaffoldSubAction::*;
        for (t, o) in [(1, "a"), (2, "b")] {
            record_interaction(
                &interact(MessageOptionChecked, 120_000 + t).with_payload(PAYLOAD_OPTION_ID, o),
                &mut state,
            )
            .unwrap();
        }
        record_interaction(&interact(CreateChecklist, 120_010), &mut state).unwrap();
        let out = record_interaction(
            &interact(CurrToDoListReOrdered, 120_020).with_payload(PAYLOAD_ITEMS, "b,a"),
            &mut state,
        )
        .unwrap();
        assert_eq!(out.todo_list.unwrap().option_ids().collect::<Vec<_>>(), ["b", "a"]);
        let out = record_interaction(
            &interact(CurrToDoListItemChecked, 120_030).with_payload(PAYLOAD_OPTION_ID, "a"),
            &mut state,
        )
        .unwrap();
        assert_eq!(
            out.todo_list.unwrap().items,
            vec![
                ToDoItem { option_id: "b".into(), checked: false },
                ToDoItem { option_id: "a".into(), checked: true },
            ]
        );
        assert_eq!(
            record_interaction(
                &interact(CurrToDoListReOrdered, 120_040).with_payload(PAYLOAD_ITEMS, "b,c"),
                &mut state,
            ),
            Err(ScaffoldError::NotAPermutation(1))
        );
    }

    #[test]
    fn undisplayed_and_disabled_options_rejected() {
        use ScaffoldSubAction::*;
        let mut state = displayed_state(Condition::Personalised);
        let before = state.clone();
        assert!(matches!(
            record_interaction(&interact(MessageOptionChecked, 121_000).with_payload(PAYLOAD_OPTION_ID, "z"), &mut state),
            Err(ScaffoldError::UnknownOption { .. })
        ));
        assert!(matches!(
            record_interaction(&interact(MessageOptionChecked, 121_000).with_payload(PAYLOAD_OPTION_ID, "c"), &mut state),
            Err(ScaffoldError::OptionDisabled { .. })
        ));
        assert_eq!(state, before);

        let mut fresh = SessionState::new("s1", "u1");
        assert_eq!(
            record_interaction(&interact(MessageOptionChecked, 1).with_payload(PAYLOAD_OPTION_ID, "a"), &mut fresh),
            Err(ScaffoldError::NothingDisplayed)
        );
    }

    #[test]
    fn edit_only_keeps_selected_options() {
        use ScaffoldSubAction::*;
        let mut state = displayed_state(Condition::Generalised);
        for (t, o) in [(1, "a"), (2, "d")] {
            record_interaction(
                &interact(MessageOptionChecked, 120_000 + t).with_payload(PAYLOAD_OPTION_ID, o),
                &mut state,
            )
            .unwrap();
        }
        record_interaction(&interact(MessageOptionUnChecked, 120_003).with_payload(PAYLOAD_OPTION_ID, "d"), &mut state)
            .unwrap();
        record_interaction(&interact(CreateChecklist, 120_004), &mut state).unwrap();
        let out = record_interaction(&interact(CurrToDoListEdit, 120_005).with_payload(PAYLOAD_ITEMS, "a,d"), &mut state)
            .unwrap();
        assert_eq!(out.todo_list.unwrap().option_ids().collect::<Vec<_>>(), ["a", "d"]);
        assert!(matches!(
            record_interaction(&interact(CurrToDoListEdit, 120_006).with_payload(PAYLOAD_ITEMS, "b"), &mut state),
            Err(ScaffoldError::NeverSelected { .. })
        ));
    }
}
