//! Agreement between parsed process events and externally coded reference
//! segments.
//!
//! Alignment pairs each reference segment with at most one process event of
//! the same session and each event with at most one segment. Candidate pairs
//! are those with positive temporal overlap; they are taken greedily in
//! order of decreasing overlap (ties: earlier event start, then earlier
//! segment). The result is the unique stable pairing under those
//! preferences: no segment and event both prefer each other over what they
//! got.
//!
//! Intervals are half-open `[start, end)`. A zero-length interval counts as
//! one millisecond long so instantaneous events can still be paired.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseEnumError;
use crate::event::{closed_enum, Millis};
use crate::process::ProcessEvent;
use crate::rules::ProcessLabel;

/// A ratio that may be undefined because its denominator is zero. Undefined
/// rates carry value 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub defined: bool,
}

impl Rate {
    pub fn ratio(numerator: usize, denominator: usize) -> Rate {
        if denominator == 0 {
            Rate::undefined()
        } else {
            Rate {
                value: numerator as f64 / denominator as f64,
                defined: true,
            }
        }
    }

    pub fn undefined() -> Rate {
        Rate {
            value: 0.0,
            defined: false,
        }
    }

    pub fn get(self) -> Option<f64> {
        self.defined.then_some(self.value)
    }
}

closed_enum! {
    pub enum SegmentSource {
        ThinkAloud => "think_aloud",
        Synthetic => "synthetic",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSegment {
    pub session_id: String,
    pub label: ProcessLabel,
    pub start: Millis,
    pub end: Millis,
    pub source: SegmentSource,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("session {session_id}: reference segment [{start}, {end}) has start after end")]
    InvertedSegment {
        session_id: String,
        start: Millis,
        end: Millis,
    },
    #[error("session {session_id}: reference segments [{first_start}, {first_end}) and [{second_start}, {second_end}) overlap or are out of order")]
    OverlappingSegments {
        session_id: String,
        first_start: Millis,
        first_end: Millis,
        second_start: Millis,
        second_end: Millis,
    },
    #[error("sensitivity and specificity are not defined for NO_PROCESS")]
    NoProcessLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub segment: ReferenceSegment,
    pub event: Option<ProcessEvent>,
}

impl AlignmentPair {
    /// The parsed label, NO_PROCESS when the segment found no event.
    pub fn predicted(&self) -> ProcessLabel {
        self.event.as_ref().map_or(ProcessLabel::NoProcess, |e| e.label)
    }

    pub fn is_match(&self) -> bool {
        self.event.as_ref().is_some_and(|e| e.label == self.segment.label)
    }
}

/// Overlap of two half-open intervals, zero-length ones widened to 1 ms.
pub fn overlap_ms(a_start: Millis, a_end: Millis, b_start: Millis, b_end: Millis) -> Millis {
    let a_end = a_end.max(a_start + 1);
    let b_end = b_end.max(b_start + 1);
    a_end.min(b_end).saturating_sub(a_start.max(b_start))
}

fn check_segments(segments: &[&ReferenceSegment]) -> Result<(), MetricsError> {
    for s in segments {
        if s.start > s.end {
            return Err(MetricsError::InvertedSegment {
                session_id: s.session_id.clone(),
                start: s.start,
                end: s.end,
            });
        }
    }
    for w in segments.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.start < a.end.max(a.start + 1) {
            return Err(MetricsError::OverlappingSegments {
                session_id: a.session_id.clone(),
                first_start: a.start,
                first_end: a.end,
                second_start: b.start,
                second_end: b.end,
            });
        }
    }
    Ok(())
}

/// Pairs reference segments with process events. Output follows the order
/// of `reference`.
pub fn align(
    reference: &[ReferenceSegment],
    processes: &[ProcessEvent],
) -> Result<Vec<AlignmentPair>, MetricsError> {
    let mut seg_by_session: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in reference.iter().enumerate() {
        seg_by_session.entry(s.session_id.as_str()).or_default().push(i);
    }
    let mut ev_by_session: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in processes.iter().enumerate() {
        ev_by_session.entry(e.session_id.as_str()).or_default().push(i);
    }

    let mut assigned: Vec<Option<usize>> = vec![None; reference.len()];
    for (session, seg_idx) in &seg_by_session {
        let segs: Vec<&ReferenceSegment> = seg_idx.iter().map(|&i| &reference[i]).collect();
        check_segments(&segs)?;
        let Some(ev_idx) = ev_by_session.get(session) else {
            continue;
        };
        // (overlap, event start, segment order, event index)
        let mut candidates = Vec::new();
        for (order, &si) in seg_idx.iter().enumerate() {
            let s = &reference[si];
            for &ei in ev_idx {
                let e = &processes[ei];
                let ov = overlap_ms(s.start, s.end, e.start, e.end);
                if ov > 0 {
                    candidates.push((ov, e.start, order, ei));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut event_taken = BTreeMap::new();
        for (_, _, order, ei) in candidates {
            let si = seg_idx[order];
            if assigned[si].is_none() && !event_taken.contains_key(&ei) {
                assigned[si] = Some(ei);
                event_taken.insert(ei, si);
            }
        }
    }
    Ok(reference
        .iter()
        .zip(assigned)
        .map(|(s, e)| AlignmentPair {
            segment: s.clone(),
            event: e.map(|i| processes[i].clone()),
        })
        .collect())
}

/// Share of segments whose paired event carries the same label.
pub fn match_rate(alignment: &[AlignmentPair]) -> Rate {
    let hits = alignment.iter().filter(|p| p.is_match()).count();
    Rate::ratio(hits, alignment.len())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl BinaryCounts {
    pub fn sensitivity(&self) -> Rate {
        Rate::ratio(self.tp, self.tp + self.fn_)
    }
    pub fn specificity(&self) -> Rate {
        Rate::ratio(self.tn, self.tn + self.fp)
    }
}

/// One-vs-rest counts for `label` over reference segments.
pub fn binary_counts(alignment: &[AlignmentPair], label: ProcessLabel) -> BinaryCounts {
    let mut c = BinaryCounts::default();
    for pair in alignment {
        match (pair.segment.label == label, pair.predicted() == label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn sensitivity_specificity(
    alignment: &[AlignmentPair],
    label: ProcessLabel,
) -> Result<(Rate, Rate), MetricsError> {
    if label == ProcessLabel::NoProcess {
        return Err(MetricsError::NoProcessLabel);
    }
    let c = binary_counts(alignment, label);
    Ok((c.sensitivity(), c.specificity()))
}

/// Reference label x parsed label counts; unpaired segments count under
/// NO_PROCESS.
pub type ConfusionMatrix = BTreeMap<ProcessLabel, BTreeMap<ProcessLabel, usize>>;

pub fn confusion(alignment: &[AlignmentPair]) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new();
    for pair in alignment {
        *m.entry(pair.segment.label)
            .or_default()
            .entry(pair.predicted())
            .or_default() += 1;
    }
    m
}

/// Share of reference time covered by parsed events of the same label.
pub fn time_match_rate(reference: &[ReferenceSegment], processes: &[ProcessEvent]) -> Rate {
    let mut total: u64 = 0;
    let mut covered: u64 = 0;
    for s in reference {
        let end = s.end.max(s.start + 1);
        total += end - s.start;
        let mut pieces: Vec<(Millis, Millis)> = processes
            .iter()
            .filter(|e| e.session_id == s.session_id && e.label == s.label)
            .map(|e| (e.start.max(s.start), e.end.max(e.start + 1).min(end)))
            .filter(|(a, b)| a < b)
            .collect();
        pieces.sort_unstable();
        let mut cursor = s.start;
        for (a, b) in pieces {
            let a = a.max(cursor);
            if b > a {
                covered += b - a;
                cursor = b;
            }
        }
    }
    if total == 0 {
        Rate::undefined()
    } else {
        Rate {
            value: covered as f64 / total as f64,
            defined: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: ProcessLabel,
    pub counts: BinaryCounts,
    pub sensitivity: Rate,
    pub specificity: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pairs: Vec<AlignmentPair>,
    pub confusion: ConfusionMatrix,
    pub match_rate: Rate,
    pub time_match_rate: Rate,
    pub per_label: Vec<LabelMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_coverage: Option<Rate>,
}

/// Runs alignment and every metric in one go.
pub fn evaluate(
    reference: &[ReferenceSegment],
    processes: &[ProcessEvent],
    trace_coverage: Option<Rate>,
) -> Result<AlignmentResult, MetricsError> {
    let pairs = align(reference, processes)?;
    let per_label = ProcessLabel::EMITTABLE
        .iter()
        .map(|&label| {
            let counts = binary_counts(&pairs, label);
            LabelMetrics {
                label,
                counts,
                sensitivity: counts.sensitivity(),
                specificity: counts.specificity(),
            }
        })
        .collect();
    Ok(AlignmentResult {
        confusion: confusion(&pairs),
        match_rate: match_rate(&pairs),
        time_match_rate: time_match_rate(reference, processes),
        per_label,
        trace_coverage,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use ProcessLabel::*;

    fn seg(label: ProcessLabel, start: Millis, end: Millis) -> ReferenceSegment {
        ReferenceSegment {
            session_id: "s".into(),
            label,
            start,
            end,
            source: SegmentSource::Synthetic,
        }
    }

    fn event(label: ProcessLabel, start: Millis, end: Millis) -> ProcessEvent {
        ProcessEvent {
            session_id: "s".into(),
            label,
            rule_id: label.to_string(),
            start,
            end,
            matched_action_ids: vec![],
        }
    }

    #[test]
    fn contained_event_pairs() {
        let a = align(&[seg(Orientation, 0, 10_000)], &[event(Orientation, 2_000, 8_000)]).unwrap();
        assert!(a[0].is_match());
        assert_eq!(match_rate(&a).value, 1.0);
    }

    #[test]
    fn segment_without_overlap_is_unpaired() {
        let a = align(&[seg(Orientation, 0, 10_000)], &[event(Orientation, 10_000, 12_000)]).unwrap();
        assert!(a[0].event.is_none());
        assert_eq!(a[0].predicted(), NoProcess);
    }

    #[test]
    fn half_right_is_half() {
        let refs = [seg(Orientation, 0, 10), seg(Planning, 10, 20)];
        let evs = [event(Orientation, 0, 10), event(Monitoring, 10, 20)];
        let a = align(&refs, &evs).unwrap();
        assert_eq!(match_rate(&a).value, 0.5);
    }

    #[test]
    fn event_spanning_two_segments_goes_to_larger_overlap() {
        let refs = [seg(Orientation, 0, 10), seg(Orientation, 10, 40)];
        let evs = [event(Orientation, 5, 30)];
        let a = align(&refs, &evs).unwrap();
        assert!(a[0].event.is_none());
        assert!(a[1].event.is_some());
    }

    #[test]
    fn overlapping_reference_rejected() {
        let refs = [seg(Orientation, 0, 10), seg(Planning, 5, 20)];
        assert!(matches!(
            align(&refs, &[]),
            Err(MetricsError::OverlappingSegments { .. })
        ));
    }

    #[test]
    fn zero_segments_is_undefined() {
        let r = match_rate(&[]);
        assert!(!r.defined);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn perfect_parser_scores_one() {
        let refs = [seg(Orientation, 0, 10), seg(Monitoring, 10, 20)];
        let evs = [event(Orientation, 0, 10), event(Monitoring, 10, 20)];
        let a = align(&refs, &evs).unwrap();
        let (sens, spec) = sensitivity_specificity(&a, Orientation).unwrap();
        assert_eq!((sens.value, spec.value), (1.0, 1.0));
    }

    #[test]
    fn absent_label_has_undefined_sensitivity() {
        let refs = [seg(Orientation, 0, 10)];
        let a = align(&refs, &[event(Orientation, 0, 10)]).unwrap();
        let (sens, spec) = sensitivity_specificity(&a, Evaluation).unwrap();
        assert!(!sens.defined);
        assert_eq!(spec.value, 1.0);
        assert_eq!(
            sensitivity_specificity(&a, NoProcess),
            Err(MetricsError::NoProcessLabel)
        );
    }

    #[test]
    fn time_rate_counts_covered_time() {
        let refs = [seg(Orientation, 0, 100)];
        let evs = [event(Orientation, 0, 30), event(Orientation, 20, 50), event(Planning, 50, 100)];
        assert_eq!(time_match_rate(&refs, &evs).value, 0.5);
    }

    #[test]
    fn confusion_sums_to_segment_count() {
        let refs = [seg(Orientation, 0, 10), seg(Planning, 10, 20), seg(Planning, 30, 40)];
        let evs = [event(Orientation, 0, 10), event(Monitoring, 10, 20)];
        let a = align(&refs, &evs).unwrap();
        let m = confusion(&a);
        let total: usize = m.values().flat_map(|row| row.values()).sum();
        assert_eq!(total, 3);
        assert_eq!(m[&Planning][&NoProcess], 1);
    }
}
