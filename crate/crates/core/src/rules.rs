//! Process labels and the pattern rules that map action sequences onto them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::ActionLabel;
use crate::error::ParseEnumError;
use crate::event::closed_enum;
use crate::event::Millis;
use crate::page::PageClass;

closed_enum! {
    pub enum ProcessLabel {
        Orientation => "MC.Orientation",
        Planning => "MC.Planning",
        Monitoring => "MC.Monitoring",
        Evaluation => "MC.Evaluation",
        FirstReading => "LC.First-reading",
        ReReading => "LC.Re-reading",
        ElaborationOrganisation => "HC.Elaboration-Organisation",
        NoProcess => "NO_PROCESS",
    }
}

impl ProcessLabel {
    /// Labels a parser can emit; `NO_PROCESS` is filtered before output.
    pub const EMITTABLE: &'static [ProcessLabel] = &[
        ProcessLabel::Orientation,
        ProcessLabel::Planning,
        ProcessLabel::Monitoring,
        ProcessLabel::Evaluation,
        ProcessLabel::FirstReading,
        ProcessLabel::ReReading,
        ProcessLabel::ElaborationOrganisation,
    ];
}

/// `->` (ordered, contiguous) or `<->` (any order within the window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    #[serde(alias = "->")]
    Ordered,
    #[serde(alias = "<->")]
    OrderFree,
}

impl Ordering {
    pub fn symbol(self) -> &'static str {
        match self {
            Ordering::Ordered => "->",
            Ordering::OrderFree => "<->",
        }
    }
}

/// Extra predicate on the action bound to `element`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Guard {
    /// The action's duration must strictly exceed `min_ms`.
    MinDwell { element: usize, min_ms: Millis },
    PageClass { element: usize, class: PageClass },
}

impl Guard {
    pub fn element(&self) -> usize {
        match self {
            Guard::MinDwell { element, .. } | Guard::PageClass { element, .. } => *element,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub rule_id: String,
    pub label: ProcessLabel,
    pub elements: Vec<ActionLabel>,
    pub ordering: Ordering,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guards: Vec<Guard>,
    #[serde(default)]
    pub priority: i32,
}

impl PatternRule {
    pub fn new(
        rule_id: impl Into<String>,
        label: ProcessLabel,
        ordering: Ordering,
        elements: &[ActionLabel],
    ) -> Self {
        PatternRule {
            rule_id: rule_id.into(),
            label,
            elements: elements.to_vec(),
            ordering,
            guards: Vec::new(),
            priority: 0,
        }
    }

    pub fn with_priority(mut self, priority: i32) -> Self {
        self.priority = priority;
        self
    }

    pub fn with_guard(mut self, guard: Guard) -> Self {
        self.guards.push(guard);
        self
    }

    /// e.g. `GENERAL_INSTRUCTION -> NAVIGATION -> RELEVANT_READING`
    pub fn pattern_text(&self) -> String {
        let sep = format!(" {} ", self.ordering.symbol());
        self.elements
            .iter()
            .map(|e| e.as_str())
            .collect::<Vec<_>>()
            .join(&sep)
    }
}

impl fmt::Display for PatternRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} => {}", self.rule_id, self.pattern_text(), self.label)
    }
}
