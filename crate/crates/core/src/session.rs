use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseEnumError;
use crate::event::{closed_enum, Millis};
use crate::process::ProcessEvent;
use crate::rules::ProcessLabel;
use crate::scaffold::{ScaffoldResponse, ToDoList};

closed_enum! {
    /// Scaffolding condition a participant is assigned to.
    pub enum Condition {
        Generalised => "generalised",
        Personalised => "personalised",
        Control => "control",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedProcess {
    pub label: ProcessLabel,
    pub rule_id: String,
    pub start: Millis,
    pub end: Millis,
}

impl From<&ProcessEvent> for DetectedProcess {
    fn from(p: &ProcessEvent) -> Self {
        DetectedProcess {
            label: p.label,
            rule_id: p.rule_id.clone(),
            start: p.start,
            end: p.end,
        }
    }
}

/// One scaffold handed out in this session, with whatever the learner did
/// with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveredScaffold {
    pub scaffold_id: u32,
    pub delivered_at: Millis,
    pub response: ScaffoldResponse,
    /// Options currently ticked in the popup, in the order they were ticked.
    #[serde(default)]
    pub selected: Vec<String>,
    /// Every option ever ticked while the popup was shown.
    #[serde(default)]
    pub ever_selected: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub todo_list: Option<ToDoList>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub user_id: String,
    pub condition: Condition,
    /// Wall-clock start in milliseconds since the Unix epoch, when known.
    #[serde(default)]
    pub started_at: Option<u64>,
    pub elapsed: Millis,
    pub pages_visited: BTreeMap<String, Millis>,
    pub detected_processes: Vec<DetectedProcess>,
    pub scaffolds_delivered: Vec<DeliveredScaffold>,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, user_id: impl Into<String>) -> Self {
        SessionState {
            session_id: session_id.into(),
            user_id: user_id.into(),
            condition: Condition::Generalised,
            started_at: None,
            elapsed: 0,
            pages_visited: BTreeMap::new(),
            detected_processes: Vec::new(),
            scaffolds_delivered: Vec::new(),
        }
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }

    /// Moves the session clock forward; never backwards.
    pub fn advance(&mut self, now: Millis) {
        self.elapsed = self.elapsed.max(now);
    }

    /// Keeps the earliest visit time for `url`.
    pub fn record_visit(&mut self, url: &str, at: Millis) {
        self.pages_visited
            .entry(url.into())
            .and_modify(|t| *t = (*t).min(at))
            .or_insert(at);
    }

    pub fn record_processes<'a>(&mut self, events: impl IntoIterator<Item = &'a ProcessEvent>) {
        self.detected_processes
            .extend(events.into_iter().map(DetectedProcess::from));
    }

    pub fn delivered(&self, scaffold_id: u32) -> Option<&DeliveredScaffold> {
        self.scaffolds_delivered
            .iter()
            .find(|d| d.scaffold_id == scaffold_id)
    }

    pub fn delivered_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.scaffolds_delivered.iter().map(|d| d.scaffold_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elapsed_is_monotone() {
        let mut s = SessionState::new("s", "u");
        s.advance(10);
        s.advance(5);
        assert_eq!(s.elapsed, 10);
    }

    #[test]
    fn visit_keeps_earliest_time() {
        let mut s = SessionState::new("s", "u");
        s.record_visit("/a", 50);
        s.record_visit("/a", 20);
        s.record_visit("/a", 90);
        assert_eq!(s.pages_visited.len(), 1);
        assert_eq!(s.pages_visited["/a"], 20);
    }
}
