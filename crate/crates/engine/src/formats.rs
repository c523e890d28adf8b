//! File formats: JSON-lines event logs, delimited reference segments,
//! process and action tables, learner profile fixtures.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use srl_core::metrics::{ReferenceSegment, SegmentSource};
use srl_core::{ActionRecord, LearnerProfile, ProcessEvent, ProcessLabel, RawTraceEvent};

/// One JSON document per line; blank lines are skipped.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<RawTraceEvent>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Columns `session_id,label,start_ms,end_ms,source`, with a header row.
#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    session_id: String,
    label: String,
    start_ms: u64,
    end_ms: u64,
    source: String,
}

pub fn read_reference(reader: impl std::io::Read) -> Result<Vec<ReferenceSegment>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in csv.deserialize::<SegmentRow>().enumerate() {
        let row = row.with_context(|| format!("reference row {}", i + 1))?;
        let label: ProcessLabel = row
            .label
            .parse()
            .with_context(|| format!("reference row {}", i + 1))?;
        let source: SegmentSource = row
            .source
            .parse()
            .with_context(|| format!("reference row {}", i + 1))?;
        if row.start_ms > row.end_ms {
            bail!("reference row {}: start_ms after end_ms", i + 1);
        }
        out.push(ReferenceSegment {
            session_id: row.session_id,
            label,
            start: row.start_ms,
            end: row.end_ms,
            source,
        });
    }
    Ok(out)
}

pub fn write_reference(writer: impl Write, segments: &[ReferenceSegment]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for s in segments {
        csv.serialize(SegmentRow {
            session_id: s.session_id.clone(),
            label: s.label.as_str().into(),
            start_ms: s.start,
            end_ms: s.end,
            source: s.source.as_str().into(),
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub const EVENT_COLUMNS: &[&str] = &[
    "event_id",
    "session_id",
    "user_id",
    "timestamp",
    "event_kind",
    "page_url",
    "payload",
];
pub const ACTION_COLUMNS: &[&str] = &[
    "session_id",
    "action_id",
    "label",
    "sub_action",
    "start_ms",
    "end_ms",
    "page_url",
    "page_class",
    "source_event_ids",
];
pub const PROCESS_COLUMNS: &[&str] = &[
    "session_id",
    "label",
    "rule_id",
    "start_ms",
    "end_ms",
    "matched_action_ids",
];

/// Delimited form of an event; the payload map is a JSON object cell.
pub fn event_row(e: &RawTraceEvent) -> Vec<String> {
    vec![
        e.event_id.clone(),
        e.session_id.clone(),
        e.user_id.clone(),
        e.timestamp.to_string(),
        e.event_kind.as_str().into(),
        e.page_url.clone(),
        serde_json::to_string(&e.payload).expect("string map serialises"),
    ]
}

pub fn event_from_row(row: &csv::StringRecord) -> Result<RawTraceEvent> {
    if row.len() != EVENT_COLUMNS.len() {
        bail!("expected {} columns, found {}", EVENT_COLUMNS.len(), row.len());
    }
    Ok(RawTraceEvent {
        event_id: row[0].into(),
        session_id: row[1].into(),
        user_id: row[2].into(),
        timestamp: row[3].parse().context("timestamp")?,
        event_kind: row[4].parse().context("event_kind")?,
        page_url: row[5].into(),
        payload: serde_json::from_str(&row[6]).context("payload")?,
    })
}

fn join_ids<T: ToString>(ids: &[T]) -> String {
    ids.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn action_row(a: &ActionRecord) -> Vec<String> {
    vec![
        a.session_id.clone(),
        a.id.to_string(),
        a.label.as_str().into(),
        a.sub_action.map(|s| s.as_str().to_string()).unwrap_or_default(),
        a.start.to_string(),
        a.end.to_string(),
        a.page_url.clone().unwrap_or_default(),
        a.page_class.map(|c| c.as_str().to_string()).unwrap_or_default(),
        join_ids(&a.source_event_ids),
    ]
}

pub fn process_row(p: &ProcessEvent) -> Vec<String> {
    vec![
        p.session_id.clone(),
        p.label.as_str().into(),
        p.rule_id.clone(),
        p.start.to_string(),
        p.end.to_string(),
        join_ids(&p.matched_action_ids),
    ]
}

pub fn write_processes_csv(writer: impl Write, processes: &[ProcessEvent]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(PROCESS_COLUMNS)?;
    for p in processes {
        csv.write_record(process_row(p))?;
    }
    csv.flush()?;
    Ok(())
}

/// A learner profile fixture file (TOML).
pub fn read_profile(path: &Path) -> Result<LearnerProfile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing profile {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use srl_core::testkit;
    use srl_core::EventKind;

    #[test]
    fn events_round_trip_through_jsonl() {
        let events = vec![
            testkit::ev("a", 0, EventKind::Navigation, testkit::INSTRUCTIONS),
            testkit::ev("b", 5, EventKind::ToolOpen, testkit::RUBRIC).with_payload("tool", "timer"),
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &events).unwrap();
        assert_eq!(read_jsonl::<RawTraceEvent>(buf.as_slice()).unwrap(), events);
    }

    #[test]
    fn event_rows_round_trip() {
        let e = testkit::ev("x,1", 9, EventKind::ContentSearch, "/q?a=\"b\"").with_payload("terms", "self, regulation");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(event_row(&e)).unwrap();
        let bytes = w.into_inner().unwrap();
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes.as_slice());
        let row = r.records().next().unwrap().unwrap();
        assert_eq!(event_from_row(&row).unwrap(), e);
    }

    #[test]
    fn reference_file_parses() {
        let text = "session_id,label,start_ms,end_ms,source\ns1,MC.Orientation,0,10000,think_aloud\ns1, MC.Planning ,10000,20000,synthetic\n";
        let segs = read_reference(text.as_bytes()).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].label, ProcessLabel::Planning);
        let mut buf = Vec::new();
        write_reference(&mut buf, &segs).unwrap();
        assert_eq!(read_reference(buf.as_slice()).unwrap(), segs);
    }

    #[test]
    fn reference_rejects_unknown_label_and_inverted_span() {
        assert!(read_reference("session_id,label,start_ms,end_ms,source\ns,MC.Bogus,0,1,synthetic\n".as_bytes()).is_err());
        assert!(read_reference("session_id,label,start_ms,end_ms,source\ns,MC.Planning,5,1,synthetic\n".as_bytes()).is_err());
    }
}
