//! Action stream to SRL process events.
//!
//! Matching is greedy, left to right. At each position not yet consumed, the
//! candidate rules whose pattern can start with that action are tried in
//! order of priority (higher first), then pattern length (longer first), then
//! declaration order. The first rule that matches consumes its actions and
//! yields one [`ProcessEvent`]. Actions no rule consumes are NO_PROCESS and
//! produce nothing.
//!
//! * Ordered rules (`->`) must match a contiguous run of unconsumed actions
//!   starting at the anchor.
//! * Order-free rules (`<->`) must find their elements, in any order, among
//!   unconsumed actions in the window of `order_free_window` positions that
//!   starts at the anchor; the anchor itself is always part of the match.
//!   Among all position sets that satisfy labels and guards, the
//!   lexicographically smallest one is taken.
//! * OFF_TASK is never matched and no match spans across it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::action::{ActionLabel, ActionRecord};
use crate::config::StudyConfig;
use crate::error::ConfigError;
use crate::event::Millis;
use crate::metrics::Rate;
use crate::rules::{Guard, Ordering, PatternRule, ProcessLabel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessEvent {
    pub session_id: String,
    pub label: ProcessLabel,
    pub rule_id: String,
    pub start: Millis,
    pub end: Millis,
    pub matched_action_ids: Vec<u64>,
}

/// Rule library ready for streaming matching.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledRules {
    /// Sorted by match preference.
    rules: Vec<PatternRule>,
    /// Rule indices (in preference order) per label that can anchor a match.
    by_anchor: BTreeMap<ActionLabel, Vec<usize>>,
    window: usize,
    horizon: usize,
}

pub fn compile_rules(config: &StudyConfig) -> Result<CompiledRules, ConfigError> {
    CompiledRules::new(&config.pattern_rules, config.order_free_window)
}

impl CompiledRules {
    pub fn new(rules: &[PatternRule], window: usize) -> Result<Self, ConfigError> {
        if window == 0 {
            return Err(ConfigError::invalid("order_free_window", "must be positive"));
        }
        let mut ids = BTreeSet::new();
        for rule in rules {
            if !ids.insert(rule.rule_id.as_str()) {
                return Err(ConfigError::DuplicateRule(rule.rule_id.clone()));
            }
            if rule.elements.is_empty() {
                return Err(ConfigError::EmptyRule(rule.rule_id.clone()));
            }
        }
        let mut order: Vec<usize> = (0..rules.len()).collect();
        order.sort_by(|&a, &b| {
            rules[b]
                .priority
                .cmp(&rules[a].priority)
                .then(rules[b].elements.len().cmp(&rules[a].elements.len()))
                .then(a.cmp(&b))
        });
        let sorted: Vec<PatternRule> = order.iter().map(|&i| rules[i].clone()).collect();

        let mut by_anchor: BTreeMap<ActionLabel, Vec<usize>> = BTreeMap::new();
        for (idx, rule) in sorted.iter().enumerate() {
            let anchors: BTreeSet<ActionLabel> = match rule.ordering {
                Ordering::Ordered => [rule.elements[0]].into_iter().collect(),
                Ordering::OrderFree => rule.elements.iter().copied().collect(),
            };
            for label in anchors {
                by_anchor.entry(label).or_default().push(idx);
            }
        }
        let longest_ordered = sorted
            .iter()
            .filter(|r| r.ordering == Ordering::Ordered)
            .map(|r| r.elements.len())
            .max()
            .unwrap_or(1);
        Ok(CompiledRules {
            rules: sorted,
            by_anchor,
            window,
            horizon: window.max(longest_ordered),
        })
    }

    /// Rules in match-preference order.
    pub fn rules(&self) -> &[PatternRule] {
        &self.rules
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// How many positions, anchor included, a decision may look at.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn candidates(&self, label: ActionLabel) -> impl Iterator<Item = &PatternRule> + '_ {
        self.by_anchor
            .get(&label)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rules[i])
    }

    /// Decides position `anchor`: returns the process event of the first
    /// matching rule and marks its actions consumed.
    fn decide(
        &self,
        actions: &[ActionRecord],
        consumed: &mut [bool],
        anchor: usize,
    ) -> Option<ProcessEvent> {
        let first = &actions[anchor];
        if consumed[anchor] || first.label == ActionLabel::OffTask {
            return None;
        }
        let barrier = actions[anchor + 1..]
            .iter()
            .position(|a| a.label == ActionLabel::OffTask)
            .map_or(actions.len(), |p| anchor + 1 + p);
        for rule in self.candidates(first.label) {
            let hit = match rule.ordering {
                Ordering::Ordered => match_ordered(rule, actions, consumed, anchor, barrier),
                Ordering::OrderFree => {
                    let limit = barrier.min(anchor + self.window);
                    match_order_free(rule, actions, consumed, anchor, limit)
                }
            };
            if let Some(positions) = hit {
                for &p in &positions {
                    consumed[p] = true;
                }
                return Some(process_event(rule, actions, &positions));
            }
        }
        None
    }
}

fn process_event(rule: &PatternRule, actions: &[ActionRecord], positions: &[usize]) -> ProcessEvent {
    let matched = positions.iter().map(|&p| &actions[p]);
    ProcessEvent {
        session_id: actions[positions[0]].session_id.clone(),
        label: rule.label,
        rule_id: rule.rule_id.clone(),
        start: matched.clone().map(|a| a.start).min().unwrap_or(0),
        end: matched.clone().map(|a| a.end).max().unwrap_or(0),
        matched_action_ids: matched.map(|a| a.id).collect(),
    }
}

fn guards_hold(rule: &PatternRule, bound: &[&ActionRecord]) -> bool {
    rule.guards.iter().all(|g| match *g {
        Guard::MinDwell { element, min_ms } => bound[element].duration() > min_ms,
        Guard::PageClass { element, class } => bound[element].page_class == Some(class),
    })
}

fn match_ordered(
    rule: &PatternRule,
    actions: &[ActionRecord],
    consumed: &[bool],
    anchor: usize,
    barrier: usize,
) -> Option<Vec<usize>> {
    let k = rule.elements.len();
    if anchor + k > barrier {
        return None;
    }
    let span = anchor..anchor + k;
    let fits = span
        .clone()
        .zip(&rule.elements)
        .all(|(p, &label)| !consumed[p] && actions[p].label == label);
    if !fits {
        return None;
    }
    let bound: Vec<&ActionRecord> = span.clone().map(|p| &actions[p]).collect();
    guards_hold(rule, &bound).then(|| span.collect())
}

fn match_order_free(
    rule: &PatternRule,
    actions: &[ActionRecord],
    consumed: &[bool],
    anchor: usize,
    limit: usize,
) -> Option<Vec<usize>> {
    let mut remaining = rule.elements.clone();
    let at = remaining.iter().position(|&l| l == actions[anchor].label)?;
    remaining.swap_remove(at);
    let mut chosen = vec![anchor];
    search(rule, actions, consumed, anchor + 1, limit, &mut remaining, &mut chosen).then_some(chosen)
}

/// Include-first depth-first search, so the first complete assignment found
/// is the lexicographically smallest position set.
fn search(
    rule: &PatternRule,
    actions: &[ActionRecord],
    consumed: &[bool],
    from: usize,
    limit: usize,
    remaining: &mut Vec<ActionLabel>,
    chosen: &mut Vec<usize>,
) -> bool {
    if remaining.is_empty() {
        return guards_hold(rule, &bind_order_free(rule, actions, chosen));
    }
    for p in from..limit {
        if consumed[p] {
            continue;
        }
        if let Some(i) = remaining.iter().position(|&l| l == actions[p].label) {
            let label = remaining.swap_remove(i);
            chosen.push(p);
            if search(rule, actions, consumed, p + 1, limit, remaining, chosen) {
                return true;
            }
            chosen.pop();
            remaining.push(label);
        }
    }
    false
}

/// Binds each element to a chosen position with the same label; repeated
/// labels bind in position order.
fn bind_order_free<'a>(
    rule: &PatternRule,
    actions: &'a [ActionRecord],
    chosen: &[usize],
) -> Vec<&'a ActionRecord> {
    let mut sorted = chosen.to_vec();
    sorted.sort_unstable();
    let mut used = vec![false; sorted.len()];
    rule.elements
        .iter()
        .map(|&label| {
            let slot = (0..sorted.len())
                .find(|&i| !used[i] && actions[sorted[i]].label == label)
                .expect("chosen set matches the element multiset");
            used[slot] = true;
            &actions[sorted[slot]]
        })
        .collect()
}

/// Parses a complete action stream.
pub fn parse_actions(actions: &[ActionRecord], rules: &CompiledRules) -> Vec<ProcessEvent> {
    let mut consumed = vec![false; actions.len()];
    (0..actions.len())
        .filter_map(|i| rules.decide(actions, &mut consumed, i))
        .collect()
}

/// Ids of actions that no process event consumed (the NO_PROCESS actions),
/// OFF_TASK excluded.
pub fn unmatched_action_ids(actions: &[ActionRecord], processes: &[ProcessEvent]) -> Vec<u64> {
    let matched: BTreeSet<u64> = processes
        .iter()
        .flat_map(|p| p.matched_action_ids.iter().copied())
        .collect();
    actions
        .iter()
        .filter(|a| a.label != ActionLabel::OffTask && !matched.contains(&a.id))
        .map(|a| a.id)
        .collect()
}

/// Incremental parser: holds back only as many actions as a decision can
/// look ahead, and yields exactly what [`parse_actions`] yields on the whole
/// stream.
#[derive(Debug, Clone)]
pub struct StreamingParser {
    rules: Arc<CompiledRules>,
    buffer: Vec<ActionRecord>,
    consumed: Vec<bool>,
    next_anchor: usize,
}

impl StreamingParser {
    pub fn new(rules: Arc<CompiledRules>) -> Self {
        StreamingParser {
            rules,
            buffer: Vec::new(),
            consumed: Vec::new(),
            next_anchor: 0,
        }
    }

    pub fn push(&mut self, action: ActionRecord) -> Vec<ProcessEvent> {
        self.buffer.push(action);
        self.consumed.push(false);
        self.drain(false)
    }

    pub fn finish(&mut self) -> Vec<ProcessEvent> {
        self.drain(true)
    }

    /// Actions still waiting for enough lookahead.
    pub fn pending(&self) -> usize {
        self.buffer.len() - self.next_anchor
    }

    fn decidable(&self, anchor: usize) -> bool {
        if self.consumed[anchor] || anchor + self.rules.horizon() <= self.buffer.len() {
            return true;
        }
        self.buffer[anchor + 1..]
            .iter()
            .any(|a| a.label == ActionLabel::OffTask)
    }

    fn drain(&mut self, finished: bool) -> Vec<ProcessEvent> {
        let mut out = Vec::new();
        while self.next_anchor < self.buffer.len() {
            if !finished && !self.decidable(self.next_anchor) {
                break;
            }
            if let Some(ev) = self
                .rules
                .decide(&self.buffer, &mut self.consumed, self.next_anchor)
            {
                out.push(ev);
            }
            self.next_anchor += 1;
        }
        // Decided positions can no longer take part in any match.
        if self.next_anchor > 0 {
            self.buffer.drain(..self.next_anchor);
            self.consumed.drain(..self.next_anchor);
            self.next_anchor = 0;
        }
        out
    }
}

/// Fraction of non-OFF_TASK actions consumed by some process event.
/// Undefined (value 0) for a stream without such actions.
pub fn trace_coverage(actions: &[ActionRecord], processes: &[ProcessEvent]) -> Rate {
    let matched: BTreeSet<u64> = processes
        .iter()
        .flat_map(|p| p.matched_action_ids.iter().copied())
        .collect();
    let eligible = actions.iter().filter(|a| a.label != ActionLabel::OffTask);
    let total = eligible.clone().count();
    let covered = eligible.filter(|a| matched.contains(&a.id)).count();
    Rate::ratio(covered, total)
}
