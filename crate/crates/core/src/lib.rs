//! Trace labelling, SRL process parsing, scaffolding and validation metrics.
//!
//! Raw interaction events flow through [`ActionLabeler`] into action records,
//! [`OffTaskDetector`] marks long idle gaps, and [`StreamingParser`] matches
//! the action stream against the pattern rules of a [`StudyConfig`].
//! [`SessionPipeline`] ties these together per session and answers scaffold
//! requests. The crate is `no_std` and needs only `alloc`.

#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod action;
pub mod config;
pub mod error;
pub mod event;
pub mod metrics;
pub mod page;
pub mod pipeline;
pub mod process;
pub mod rules;
pub mod scaffold;
pub mod session;
pub mod simulate;
/// Fixtures and brute-force oracles for tests. Not part of the stable API.
#[cfg(any(test, feature = "testkit"))]
#[doc(hidden)]
pub mod testkit;

pub use action::{
    detect_off_task, label_events, label_scaffold_interaction, ActionLabel, ActionLabeler,
    ActionRecord, LabelError, LabelRun, OffTaskDetector,
};
pub use config::{ScaffoldContent, ScaffoldOption, ScaffoldSpec, StudyConfig};
pub use error::{ConfigError, ParseEnumError};
pub use event::{EventKind, Millis, RawTraceEvent, ScaffoldSubAction, Tool};
pub use metrics::{align, match_rate, sensitivity_specificity, AlignmentResult, Rate, ReferenceSegment};
pub use page::{classify_page, PageCatalog, PageClass};
pub use pipeline::{run_offline, Emitted, SessionPipeline};
pub use process::{compile_rules, parse_actions, trace_coverage, CompiledRules, ProcessEvent, StreamingParser};
pub use rules::{Guard, Ordering, PatternRule, ProcessLabel};
pub use scaffold::{
    due_scaffold, evaluate_request, record_interaction, ScaffoldRequest, ScaffoldResponse, ToDoList,
};
pub use session::{Condition, SessionState};
pub use simulate::{generate_session, Archetype, LearnerProfile};
