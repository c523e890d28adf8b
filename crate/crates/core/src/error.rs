use alloc::string::{String, ToString};

/// A string did not name a member of a closed enumeration.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{value}` is not a valid {kind}")]
pub struct ParseEnumError {
    pub kind: &'static str,
    pub value: String,
}

impl ParseEnumError {
    pub(crate) fn new(kind: &'static str, value: &str) -> Self {
        ParseEnumError {
            kind,
            value: value.to_string(),
        }
    }
}

/// Validation failures for a study configuration. Every variant names the
/// offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("scaffold_schedule: trigger minutes must be strictly increasing ({previous} then {next})")]
    ScheduleNotIncreasing { previous: u32, next: u32 },
    #[error("scaffold_schedule: trigger minute {minute} is not before task_duration {task_duration}")]
    TriggerAfterTaskEnd { minute: u32, task_duration: u32 },
    #[error("scaffold_contents[{scaffold_id}]: expected exactly 4 options, found {found}")]
    OptionCount { scaffold_id: u32, found: usize },
    #[error("scaffold_contents[{scaffold_id}].options[{option_id}]: satisfying_rule_id `{rule_id}` does not resolve to a pattern rule")]
    DanglingRule {
        scaffold_id: u32,
        option_id: String,
        rule_id: String,
    },
    #[error("pattern_rules: duplicate rule_id `{0}`")]
    DuplicateRule(String),
    #[error("pattern_rules[{0}]: elements must not be empty")]
    EmptyRule(String),
    #[error("page_catalog: pattern `{0}` is listed more than once")]
    DuplicatePattern(String),
}

impl ConfigError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
