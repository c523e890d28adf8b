//! Raw browser interaction events as they arrive on the wire.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseEnumError;

/// Milliseconds since the start of a learning session.
pub type Millis = u64;

/// Payload key carrying the scaffolding sub-action of a `scaffold_interact` event.
pub const PAYLOAD_SUB_ACTION: &str = "sub_action";
/// Payload key naming the tool for `tool_open` / `tool_close` events.
pub const PAYLOAD_TOOL: &str = "tool";

macro_rules! closed_enum {
    (
        $(#[$meta:meta])*
        pub enum $name:ident { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant,)+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant,)+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text,)+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ParseEnumError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(ParseEnumError::new(stringify!($name), other)),
                }
            }
        }
    };
}
pub(crate) use closed_enum;

closed_enum! {
    /// The closed set of interaction kinds the instrumentation emits.
    pub enum EventKind {
        Keystroke => "keystroke",
        MouseClick => "mouse_click",
        MouseMove => "mouse_move",
        Scroll => "scroll",
        Navigation => "navigation",
        ToolOpen => "tool_open",
        ToolClose => "tool_close",
        AnnotationCreate => "annotation_create",
        AnnotationEdit => "annotation_edit",
        AnnotationDelete => "annotation_delete",
        AnnotationRead => "annotation_read",
        AnnotationLabel => "annotation_label",
        AnnotationSearch => "annotation_search",
        ContentSearch => "content_search",
        TimerCheck => "timer_check",
        PlannerInteract => "planner_interact",
        EssayKeystroke => "essay_keystroke",
        ScaffoldInteract => "scaffold_interact",
    }
}

closed_enum! {
    /// Learner interactions with a scaffold popup and the to-do lists built from it.
    pub enum ScaffoldSubAction {
        MessageTriggered => "Message_Triggered",
        MessageDisplayed => "Message_Displayed",
        NotificationClicked => "Notification_Clicked",
        MessageClosed => "Message_Closed",
        MessageOptionChecked => "MessageOption_Checked",
        MessageOptionUnChecked => "MessageOption_UnChecked",
        CreateChecklist => "CreateChecklist",
        CurrToDoListDisplayed => "CurrToDoList_Displayed",
        PrevToDoListDisplayed => "PrevToDoList_Displayed",
        CurrToDoListEdit => "CurrToDoList_Edit",
        PrevToDoListEdit => "PrevToDoList_Edit",
        ToDoListClosed => "ToDoList_Closed",
        CurrToDoListItemChecked => "CurrToDoListItem_Checked",
        CurrToDoListItemUnChecked => "CurrToDoListItem_UnChecked",
        PrevToDoListItemChecked => "PrevToDoListItem_Checked",
        PrevToDoListItemUnChecked => "PrevToDoListItem_UnChecked",
        CurrToDoListReOrdered => "CurrToDoList_Re-Ordered",
        PrevToDoListReOrdered => "PrevToDoList_Re-Ordered",
        PrevToDoListItemClickedLink => "PrevToDoListItem_ClickedLink",
        NextToDoListItemClickedLink => "NextToDoListItem_ClickedLink",
    }
}

closed_enum! {
    /// Instrumentation widgets that report `tool_open` / `tool_close`.
    pub enum Tool {
        Annotation => "annotation",
        AnnotationSearch => "annotation_search",
        ContentSearch => "content_search",
        Timer => "timer",
        Planner => "planner",
        Essay => "essay",
    }
}

/// One timestamped interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTraceEvent {
    pub event_id: String,
    pub session_id: String,
    pub user_id: String,
    pub timestamp: Millis,
    pub event_kind: EventKind,
    pub page_url: String,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
}

impl RawTraceEvent {
    pub fn new(
        event_id: impl Into<String>,
        session_id: impl Into<String>,
        user_id: impl Into<String>,
        timestamp: Millis,
        event_kind: EventKind,
        page_url: impl Into<String>,
    ) -> Self {
        RawTraceEvent {
            event_id: event_id.into(),
            session_id: session_id.into(),
            user_id: user_id.into(),
            timestamp,
            event_kind,
            page_url: page_url.into(),
            payload: BTreeMap::new(),
        }
    }

    pub fn with_payload(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }

    pub fn tool(&self) -> Option<Tool> {
        self.payload.get(PAYLOAD_TOOL).and_then(|t| t.parse().ok())
    }

    /// Checks the per-event invariants that do not depend on stream position.
    pub fn validate(&self) -> Result<(), EventError> {
        if self.event_id.is_empty() {
            return Err(EventError::MissingField("event_id"));
        }
        if self.session_id.is_empty() {
            return Err(EventError::MissingField("session_id"));
        }
        match self.event_kind {
            EventKind::ScaffoldInteract => {
                let raw = self
                    .payload
                    .get(PAYLOAD_SUB_ACTION)
                    .ok_or(EventError::MissingField("payload.sub_action"))?;
                raw.parse::<ScaffoldSubAction>()
                    .map_err(|_| EventError::UnknownSubAction(raw.clone()))?;
            }
            EventKind::ToolOpen | EventKind::ToolClose => {
                let raw = self
                    .payload
                    .get(PAYLOAD_TOOL)
                    .ok_or(EventError::MissingField("payload.tool"))?;
                raw.parse::<Tool>()
                    .map_err(|_| EventError::UnknownTool(raw.clone()))?;
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("unknown scaffolding sub-action `{0}`")]
    UnknownSubAction(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
}
