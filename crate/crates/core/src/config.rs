//! Study configuration: task timing, scaffold schedule and content, page
//! catalog and the process rule library.
//!
//! Durations keep the units of the configuration document: `task_duration`
//! in minutes, thresholds and intervals in seconds. Use the `*_ms` accessors
//! inside the engine.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::action::ActionLabel;
use crate::error::ConfigError;
use crate::event::Millis;
use crate::page::PageCatalog;
use crate::rules::{PatternRule, ProcessLabel};

pub const DEFAULT_TASK_DURATION_MIN: u32 = 45;
pub const DEFAULT_OFF_TASK_THRESHOLD_S: u32 = 300;
pub const DEFAULT_INSTRUCTION_DWELL_S: u32 = 15;
pub const DEFAULT_ORDER_FREE_WINDOW: usize = 5;
pub const DEFAULT_KEYSTROKE_BURST_GAP_S: u32 = 10;
pub const DEFAULT_POLL_INTERVAL_S: u32 = 10;
pub const OPTIONS_PER_SCAFFOLD: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldOption {
    pub option_id: String,
    pub text: String,
    pub satisfying_rule_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldContent {
    pub scaffold_id: u32,
    pub name: String,
    pub prompt_message: String,
    pub options: Vec<ScaffoldOption>,
}

/// A scheduled scaffold: its content joined with its trigger minute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaffoldSpec<'a> {
    pub scaffold_id: u32,
    pub trigger_minute: u32,
    pub content: &'a ScaffoldContent,
}

impl ScaffoldSpec<'_> {
    pub fn trigger_ms(&self) -> Millis {
        minutes_to_ms(self.trigger_minute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFlush {
    pub max_events: usize,
    pub max_interval_ms: u64,
}

impl Default for BatchFlush {
    fn default() -> Self {
        BatchFlush {
            max_events: 500,
            max_interval_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(default = "default_task_duration")]
    pub task_duration: u32,
    #[serde(default = "default_off_task")]
    pub off_task_threshold: u32,
    #[serde(default = "default_dwell")]
    pub instruction_dwell_threshold: u32,
    /// `(scaffold_id, trigger_minute)` pairs in delivery order.
    pub scaffold_schedule: Vec<(u32, u32)>,
    pub scaffold_contents: Vec<ScaffoldContent>,
    #[serde(default)]
    pub page_catalog: PageCatalog,
    pub pattern_rules: Vec<PatternRule>,
    #[serde(default)]
    pub batch_flush: BatchFlush,
    #[serde(default = "default_window")]
    pub order_free_window: usize,
    #[serde(default = "default_burst_gap")]
    pub keystroke_burst_gap: u32,
    #[serde(default = "default_poll")]
    pub scaffold_poll_interval: u32,
    /// Only processes ending within this many seconds before a scaffold
    /// request count as detected. Unset means the whole session so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_window: Option<u32>,
}

fn default_task_duration() -> u32 {
    DEFAULT_TASK_DURATION_MIN
}
fn default_off_task() -> u32 {
    DEFAULT_OFF_TASK_THRESHOLD_S
}
fn default_dwell() -> u32 {
    DEFAULT_INSTRUCTION_DWELL_S
}
fn default_window() -> usize {
    DEFAULT_ORDER_FREE_WINDOW
}
fn default_burst_gap() -> u32 {
    DEFAULT_KEYSTROKE_BURST_GAP_S
}
fn default_poll() -> u32 {
    DEFAULT_POLL_INTERVAL_S
}

pub fn minutes_to_ms(minutes: u32) -> Millis {
    u64::from(minutes) * 60_000
}

pub fn seconds_to_ms(seconds: u32) -> Millis {
    u64::from(seconds) * 1_000
}

impl StudyConfig {
    /// An otherwise empty configuration with every default applied.
    pub fn empty() -> Self {
        StudyConfig {
            task_duration: DEFAULT_TASK_DURATION_MIN,
            off_task_threshold: DEFAULT_OFF_TASK_THRESHOLD_S,
            instruction_dwell_threshold: DEFAULT_INSTRUCTION_DWELL_S,
            scaffold_schedule: Vec::new(),
            scaffold_contents: Vec::new(),
            page_catalog: PageCatalog::default(),
            pattern_rules: Vec::new(),
            batch_flush: BatchFlush::default(),
            order_free_window: DEFAULT_ORDER_FREE_WINDOW,
            keystroke_burst_gap: DEFAULT_KEYSTROKE_BURST_GAP_S,
            scaffold_poll_interval: DEFAULT_POLL_INTERVAL_S,
            detection_window: None,
        }
    }

    pub fn task_duration_ms(&self) -> Millis {
        minutes_to_ms(self.task_duration)
    }
    pub fn off_task_threshold_ms(&self) -> Millis {
        seconds_to_ms(self.off_task_threshold)
    }
    pub fn instruction_dwell_threshold_ms(&self) -> Millis {
        seconds_to_ms(self.instruction_dwell_threshold)
    }
    pub fn keystroke_burst_gap_ms(&self) -> Millis {
        seconds_to_ms(self.keystroke_burst_gap)
    }
    pub fn detection_window_ms(&self) -> Option<Millis> {
        self.detection_window.map(seconds_to_ms)
    }

    pub fn rule(&self, rule_id: &str) -> Option<&PatternRule> {
        self.pattern_rules.iter().find(|r| r.rule_id == rule_id)
    }

    pub fn content(&self, scaffold_id: u32) -> Option<&ScaffoldContent> {
        self.scaffold_contents
            .iter()
            .find(|c| c.scaffold_id == scaffold_id)
    }

    /// Scheduled scaffolds in delivery order. Assumes a validated config.
    pub fn scaffolds(&self) -> impl Iterator<Item = ScaffoldSpec<'_>> + '_ {
        self.scaffold_schedule
            .iter()
            .filter_map(move |&(scaffold_id, trigger_minute)| {
                self.content(scaffold_id).map(|content| ScaffoldSpec {
                    scaffold_id,
                    trigger_minute,
                    content,
                })
            })
    }

    pub fn scaffold(&self, scaffold_id: u32) -> Option<ScaffoldSpec<'_>> {
        self.scaffolds().find(|s| s.scaffold_id == scaffold_id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.task_duration == 0 {
            return Err(ConfigError::invalid("task_duration", "must be positive"));
        }
        if self.off_task_threshold == 0 {
            return Err(ConfigError::invalid("off_task_threshold", "must be positive"));
        }
        if self.order_free_window == 0 {
            return Err(ConfigError::invalid("order_free_window", "must be positive"));
        }
        if self.batch_flush.max_events == 0 {
            return Err(ConfigError::invalid(
                "batch_flush.max_events",
                "must be positive",
            ));
        }
        self.page_catalog.validate()?;
        self.validate_rules()?;
        self.validate_schedule()?;
        Ok(())
    }

    fn validate_rules(&self) -> Result<(), ConfigError> {
        let mut ids = BTreeSet::new();
        for rule in &self.pattern_rules {
            if rule.rule_id.is_empty() {
                return Err(ConfigError::invalid("pattern_rules.rule_id", "must not be empty"));
            }
            if !ids.insert(rule.rule_id.as_str()) {
                return Err(ConfigError::DuplicateRule(rule.rule_id.clone()));
            }
            if rule.elements.is_empty() {
                return Err(ConfigError::EmptyRule(rule.rule_id.clone()));
            }
            if rule.label == ProcessLabel::NoProcess {
                return Err(ConfigError::invalid(
                    format!("pattern_rules[{}].label", rule.rule_id),
                    "NO_PROCESS cannot be produced by a rule",
                ));
            }
            if rule.elements.contains(&ActionLabel::OffTask) {
                return Err(ConfigError::invalid(
                    format!("pattern_rules[{}].elements", rule.rule_id),
                    "OFF_TASK cannot take part in a pattern",
                ));
            }
            if let Some(g) = rule.guards.iter().find(|g| g.element() >= rule.elements.len()) {
                return Err(ConfigError::invalid(
                    format!("pattern_rules[{}].guards", rule.rule_id),
                    format!("guard refers to element {} of {}", g.element(), rule.elements.len()),
                ));
            }
        }
        Ok(())
    }

    fn validate_schedule(&self) -> Result<(), ConfigError> {
        let mut previous: Option<u32> = None;
        let mut seen = BTreeSet::new();
        for &(scaffold_id, minute) in &self.scaffold_schedule {
            if let Some(prev) = previous {
                if minute <= prev {
                    return Err(ConfigError::ScheduleNotIncreasing {
                        previous: prev,
                        next: minute,
                    });
                }
            }
            previous = Some(minute);
            if minute >= self.task_duration {
                return Err(ConfigError::TriggerAfterTaskEnd {
                    minute,
                    task_duration: self.task_duration,
                });
            }
            if !seen.insert(scaffold_id) {
                return Err(ConfigError::invalid(
                    "scaffold_schedule",
                    format!("scaffold {scaffold_id} is scheduled twice"),
                ));
            }
            if self.content(scaffold_id).is_none() {
                return Err(ConfigError::invalid(
                    "scaffold_contents",
                    format!("no content for scheduled scaffold {scaffold_id}"),
                ));
            }
        }
        let mut content_ids = BTreeSet::new();
        for content in &self.scaffold_contents {
            if !content_ids.insert(content.scaffold_id) {
                return Err(ConfigError::invalid(
                    "scaffold_contents",
                    format!("scaffold {} has more than one content block", content.scaffold_id),
                ));
            }
            if content.options.len() != OPTIONS_PER_SCAFFOLD {
                return Err(ConfigError::OptionCount {
                    scaffold_id: content.scaffold_id,
                    found: content.options.len(),
                });
            }
            let mut option_ids = BTreeSet::new();
            for option in &content.options {
                if !option_ids.insert(option.option_id.as_str()) {
                    return Err(ConfigError::invalid(
                        format!("scaffold_contents[{}].options", content.scaffold_id),
                        format!("duplicate option_id `{}`", option.option_id),
                    ));
                }
                if self.rule(&option.satisfying_rule_id).is_none() {
                    return Err(ConfigError::DanglingRule {
                        scaffold_id: content.scaffold_id,
                        option_id: option.option_id.clone(),
                        rule_id: option.satisfying_rule_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}
