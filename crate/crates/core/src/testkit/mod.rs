//! Fixtures shared by the unit tests: the five-scaffold essay study and a
//! small page catalog.

pub mod oracle;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::action::{ActionLabel, ActionRecord};
use crate::config::{ScaffoldContent, ScaffoldOption, StudyConfig};
use crate::event::{EventKind, Millis, RawTraceEvent};
use crate::page::{PageCatalog, PageClass};
use crate::rules::{Guard, Ordering, PatternRule, ProcessLabel};

pub const INSTRUCTIONS: &str = "/course/instructions";
pub const RUBRIC: &str = "/course/rubric";
pub const CONTENTS: &str = "/course/contents";
pub const RELEVANT_1: &str = "/course/reading/learning-analytics";
pub const RELEVANT_2: &str = "/course/reading/self-regulation";
pub const ESSAY: &str = "/course/essay";

pub fn catalog() -> PageCatalog {
    PageCatalog::new(PageClass::IrrelevantContent)
        .with_entry(INSTRUCTIONS, PageClass::GeneralInstruction)
        .with_entry(RUBRIC, PageClass::Rubric)
        .with_entry(CONTENTS, PageClass::TableOfContents)
        .with_entry("/course/reading/", PageClass::RelevantContent)
}

pub fn rules() -> Vec<PatternRule> {
    use ActionLabel::*;
    use Ordering::*;
    use ProcessLabel as P;
    vec![
        PatternRule::new(
            "MC.O.1",
            P::Orientation,
            Ordered,
            &[GeneralInstruction, Navigation, RelevantReading],
        )
        .with_guard(Guard::MinDwell { element: 0, min_ms: 15_000 }),
        PatternRule::new("MC.O.2", P::Orientation, OrderFree, &[GeneralInstruction, EditAnnotation]),
        PatternRule::new("MC.M.1", P::Monitoring, Ordered, &[Timer]),
        PatternRule::new("MC.P.1", P::Planning, Ordered, &[SearchContent]),
        PatternRule::new("MC.P.2", P::Planning, Ordered, &[SearchAnnotation]),
        PatternRule::new("MC.P.3", P::Planning, Ordered, &[Planner]),
        PatternRule::new("MC.E.1", P::Evaluation, Ordered, &[OpenEssay, Rubric]),
        PatternRule::new("LC.F.1", P::FirstReading, Ordered, &[RelevantReading]),
        PatternRule::new("LC.R.1", P::ReReading, Ordered, &[RelevantReReading]),
        PatternRule::new("HC.EO.1", P::ElaborationOrganisation, Ordered, &[WriteEssay]),
    ]
}

fn content(id: u32, name: &str, message: &str, options: [(&str, &str); 4]) -> ScaffoldContent {
    ScaffoldContent {
        scaffold_id: id,
        name: name.into(),
        prompt_message: message.into(),
        options: options
            .iter()
            .zip(["a", "b", "c", "d"])
            .map(|(&(text, rule), option_id)| ScaffoldOption {
                option_id: option_id.into(),
                text: text.into(),
                satisfying_rule_id: rule.into(),
            })
            .collect(),
    }
}

pub fn scaffold_contents() -> Vec<ScaffoldContent> {
    vec![
        content(
            1,
            "Orientation",
            "Accurate understanding of the content and requirements of literacy task is critical. Based on your learning behaviour so far, we recommend the following steps:",
            [
                ("Use table of contents to get an overview and skim text", "LC.F.1"),
                ("Check the essay rubric carefully", "MC.E.1"),
                ("Make sure you understand the learning goals and instructions", "MC.O.1"),
                ("Process information by taking notes", "MC.O.2"),
            ],
        ),
        content(
            2,
            "Start reading",
            "Efficient and high-quality reading of information on different topics in the material is essential. Based on your learning behaviour so far, we recommend the following steps:",
            [
                ("Note down important information", "MC.O.2"),
                ("Select what to read next using the table of contents", "LC.F.1"),
                ("Check time and monitor your reading progress", "MC.M.1"),
                ("Search for (specific) information", "MC.P.1"),
            ],
        ),
        content(
            3,
            "Monitor reading",
            "Make sure you only read task-related pages and think about the relationship between reading and writing is the key to learning success. Based on your learning behaviour so far, we recommend the following steps:",
            [
                ("Review annotations and check what you have learned so far", "MC.P.2"),
                ("Review the learning goals and instructions to focus on relevant content", "MC.O.1"),
                ("Check your essay structure to determine what to read next", "HC.EO.1"),
                ("Check the essay rubric", "MC.E.1"),
            ],
        ),
        content(
            4,
            "Start writing",
            "Starting writing early and conscientiously writing a high-quality essay is central to the success of this task. Based on your learning behaviour so far, we recommend the following steps:",
            [
                ("Check the remaining time for writing", "MC.M.1"),
                ("Check and re-read the essay rubric", "MC.E.1"),
                ("Draft essay by using your own language and transferring learning to main points", "HC.EO.1"),
                ("Write the essay with help from notes", "MC.P.2"),
            ],
        ),
        content(
            5,
            "Monitor writing",
            "At the end of the task, complete the essay according to the task instructions and rubric to get a high score. Based on your learning behaviour so far, we recommend the following steps:",
            [
                ("Check the essay rubric to revise your essay", "MC.E.1"),
                ("Edit your essay to make sure it's complete", "HC.EO.1"),
                ("Check the learning goals and instructions to avoid digress", "MC.O.1"),
                ("Check the timer to manage your time", "MC.M.1"),
            ],
        ),
    ]
}

pub fn study_config() -> StudyConfig {
    let mut cfg = StudyConfig::empty();
    cfg.scaffold_schedule = vec![(1, 2), (2, 7), (3, 16), (4, 21), (5, 35)];
    cfg.scaffold_contents = scaffold_contents();
    cfg.page_catalog = catalog();
    cfg.pattern_rules = rules();
    cfg
}

/// An event of session `s1`, user `u1`.
pub fn ev(id: &str, ts: Millis, kind: EventKind, url: &str) -> RawTraceEvent {
    RawTraceEvent::new(id, "s1", "u1", ts, kind, url)
}

pub fn action(id: u64, label: ActionLabel, start: Millis, end: Millis) -> ActionRecord {
    ActionRecord {
        id,
        session_id: "s1".into(),
        label,
        sub_action: None,
        start,
        end,
        source_event_ids: vec![String::from("e") + &alloc::format!("{id}")],
        page_class: None,
        page_url: None,
    }
}
