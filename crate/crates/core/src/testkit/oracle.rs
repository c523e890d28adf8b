//! Slow reference implementations used to check the real ones.
//!
//! Each oracle recomputes its answer from the definition, by exhaustive
//! enumeration where possible, and shares no code with the module it checks.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::action::{ActionLabel, ActionRecord};
use crate::event::Millis;
use crate::metrics::ReferenceSegment;
use crate::process::ProcessEvent;
use crate::rules::{Guard, Ordering, PatternRule, ProcessLabel};

/// Idle intervals `[start, end)` of at least `threshold` between session
/// start, consecutive records and `session_end`.
pub fn gap_scan(records: &[ActionRecord], threshold: Millis, session_end: Option<Millis>) -> Vec<(Millis, Millis)> {
    let mut boundaries = vec![(0, 0)];
    boundaries.extend(records.iter().map(|r| (r.start, r.end)));
    let mut gaps = Vec::new();
    let mut reach = 0;
    for w in 1..boundaries.len() {
        reach = reach.max(boundaries[w - 1].1);
        let (start, _) = boundaries[w];
        if start >= reach && start - reach >= threshold {
            gaps.push((reach, start));
        }
    }
    if let Some(end) = session_end {
        let last = boundaries.iter().map(|b| b.1).max().unwrap_or(0);
        if end >= last && end - last >= threshold {
            gaps.push((last, end));
        }
    }
    gaps
}

fn preference(rules: &[PatternRule]) -> Vec<usize> {
    let mut keyed: Vec<(i64, i64, usize)> = rules
        .iter()
        .enumerate()
        .map(|(i, r)| (-i64::from(r.priority), -(r.elements.len() as i64), i))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|k| k.2).collect()
}

/// All k-element subsets of `pool`, in lexicographic order.
fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn same_multiset(a: &[ActionLabel], b: &[ActionLabel]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    a == b
}

fn guards_ok(rule: &PatternRule, actions: &[ActionRecord], positions: &[usize]) -> bool {
    // element i binds to the i-th occurrence of its label in position order
    let mut bound = Vec::new();
    let mut taken = vec![false; positions.len()];
    for label in &rule.elements {
        let slot = (0..positions.len()).find(|&j| !taken[j] && actions[positions[j]].label == *label);
        let Some(j) = slot else { return false };
        taken[j] = true;
        bound.push(&actions[positions[j]]);
    }
    rule.guards.iter().all(|g| match *g {
        Guard::MinDwell { element, min_ms } => bound[element].end - bound[element].start > min_ms,
        Guard::PageClass { element, class } => bound[element].page_class == Some(class),
    })
}

/// Greedy left-to-right parsing recomputed by enumerating, at every anchor,
/// every rule and every candidate position set.
pub fn brute_force_parse(actions: &[ActionRecord], rules: &[PatternRule], window: usize) -> Vec<ProcessEvent> {
    let order = preference(rules);
    let mut used = vec![false; actions.len()];
    let mut out = Vec::new();
    for anchor in 0..actions.len() {
        if used[anchor] || actions[anchor].label == ActionLabel::OffTask {
            continue;
        }
        let stop = (anchor + 1..actions.len())
            .find(|&p| actions[p].label == ActionLabel::OffTask)
            .unwrap_or(actions.len());
        let mut found: Option<(usize, Vec<usize>)> = None;
        for &ri in &order {
            let rule = &rules[ri];
            let k = rule.elements.len();
            let candidates: Vec<Vec<usize>> = match rule.ordering {
                Ordering::Ordered => {
                    if anchor + k <= stop {
                        vec![(anchor..anchor + k).collect()]
                    } else {
                        Vec::new()
                    }
                }
                Ordering::OrderFree => {
                    let pool: Vec<usize> = (anchor + 1..stop.min(anchor + window)).collect();
                    combinations(&pool, k.saturating_sub(1))
                        .into_iter()
                        .map(|mut c| {
                            c.insert(0, anchor);
                            c
                        })
                        .collect()
                }
            };
            for positions in candidates {
                if positions.iter().any(|&p| used[p]) {
                    continue;
                }
                let labels: Vec<ActionLabel> = positions.iter().map(|&p| actions[p].label).collect();
                let shape_ok = match rule.ordering {
                    Ordering::Ordered => labels == rule.elements,
                    Ordering::OrderFree => same_multiset(&labels, &rule.elements),
                };
                if shape_ok && guards_ok(rule, actions, &positions) {
                    found = Some((ri, positions));
                    break;
                }
            }
            if found.is_some() {
                break;
            }
        }
        if let Some((ri, positions)) = found {
            for &p in &positions {
                used[p] = true;
            }
            let rule = &rules[ri];
            out.push(ProcessEvent {
                session_id: actions[anchor].session_id.clone(),
                label: rule.label,
                rule_id: rule.rule_id.clone(),
                start: positions.iter().map(|&p| actions[p].start).min().unwrap(),
                end: positions.iter().map(|&p| actions[p].end).max().unwrap(),
                matched_action_ids: positions.iter().map(|&p| actions[p].id).collect(),
            });
        }
    }
    out
}

/// Coverage as (covered, eligible) counts by comparing id sets.
pub fn coverage_counts(actions: &[ActionRecord], processes: &[ProcessEvent]) -> (usize, usize) {
    let mut covered = 0;
    let mut eligible = 0;
    for a in actions {
        if a.label == ActionLabel::OffTask {
            continue;
        }
        eligible += 1;
        if processes.iter().any(|p| p.matched_action_ids.contains(&a.id)) {
            covered += 1;
        }
    }
    (covered, eligible)
}

fn overlap(s: &ReferenceSegment, e: &ProcessEvent) -> Millis {
    let s_end = if s.end == s.start { s.start + 1 } else { s.end };
    let e_end = if e.end == e.start { e.start + 1 } else { e.end };
    let lo = s.start.max(e.start);
    let hi = s_end.min(e_end);
    hi.saturating_sub(lo)
}

/// Preference key of a pair: larger overlap first, then earlier event start,
/// then earlier segment, then earlier event.
type Key = (core::cmp::Reverse<Millis>, Millis, usize, usize);

fn key(reference: &[ReferenceSegment], processes: &[ProcessEvent], s: usize, e: usize) -> Key {
    (
        core::cmp::Reverse(overlap(&reference[s], &processes[e])),
        processes[e].start,
        s,
        e,
    )
}

fn edges(reference: &[ReferenceSegment], processes: &[ProcessEvent]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, seg) in reference.iter().enumerate() {
        for (e, ev) in processes.iter().enumerate() {
            if seg.session_id == ev.session_id && overlap(seg, ev) > 0 {
                out.push((s, e));
            }
        }
    }
    out
}

/// Enumerates every pairing and returns the one whose pair keys, sorted
/// best first, are lexicographically best. Exponential; keep inputs small.
pub fn exhaustive_alignment(reference: &[ReferenceSegment], processes: &[ProcessEvent]) -> Vec<Option<usize>> {
    let edges = edges(reference, processes);
    let mut best: Option<(Vec<Key>, Vec<Option<usize>>)> = None;
    let mut current = vec![None; reference.len()];
    let mut taken = BTreeSet::new();
    enumerate(reference, processes, &edges, 0, &mut current, &mut taken, &mut best);
    best.map(|b| b.1).unwrap_or(current)
}

fn enumerate(
    reference: &[ReferenceSegment],
    processes: &[ProcessEvent],
    edges: &[(usize, usize)],
    from: usize,
    current: &mut Vec<Option<usize>>,
    taken: &mut BTreeSet<usize>,
    best: &mut Option<(Vec<Key>, Vec<Option<usize>>)>,
) {
    if from == edges.len() {
        let mut keys: Vec<Key> = current
            .iter()
            .enumerate()
            .filter_map(|(s, e)| e.map(|e| key(reference, processes, s, e)))
            .collect();
        keys.sort();
        let better = match best {
            None => true,
            Some((b, _)) => lex_better(&keys, b),
        };
        if better {
            *best = Some((keys, current.clone()));
        }
        return;
    }
    enumerate(reference, processes, edges, from + 1, current, taken, best);
    let (s, e) = edges[from];
    if current[s].is_none() && !taken.contains(&e) {
        current[s] = Some(e);
        taken.insert(e);
        enumerate(reference, processes, edges, from + 1, current, taken, best);
        taken.remove(&e);
        current[s] = None;
    }
}

/// `a` beats `b` if at the first difference `a` has the better key, or `b`
/// runs out first.
fn lex_better(a: &[Key], b: &[Key]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    a.len() > b.len()
}

/// Segment-proposing deferred acceptance with the same strict preferences.
pub fn gale_shapley_alignment(reference: &[ReferenceSegment], processes: &[ProcessEvent]) -> Vec<Option<usize>> {
    let mut prefs: Vec<Vec<usize>> = (0..reference.len())
        .map(|s| {
            let mut list: Vec<usize> = (0..processes.len())
                .filter(|&e| reference[s].session_id == processes[e].session_id && overlap(&reference[s], &processes[e]) > 0)
                .collect();
            list.sort_by_key(|&e| key(reference, processes, s, e));
            list
        })
        .collect();
    let mut holder: Vec<Option<usize>> = vec![None; processes.len()];
    let mut free: Vec<usize> = (0..reference.len()).rev().collect();
    while let Some(s) = free.pop() {
        if prefs[s].is_empty() {
            continue;
        }
        let e = prefs[s].remove(0);
        match holder[e] {
            None => holder[e] = Some(s),
            Some(other) => {
                if key(reference, processes, s, e) < key(reference, processes, other, e) {
                    holder[e] = Some(s);
                    free.push(other);
                } else {
                    free.push(s);
                }
            }
        }
    }
    let mut out = vec![None; reference.len()];
    for (e, s) in holder.iter().enumerate() {
        if let Some(s) = s {
            out[*s] = Some(e);
        }
    }
    out
}

/// Full confusion matrix over `ProcessLabel::ALL`, rows reference labels,
/// columns parsed labels (NO_PROCESS when unpaired).
pub fn confusion_matrix(
    reference: &[ReferenceSegment],
    processes: &[ProcessEvent],
    pairing: &[Option<usize>],
) -> Vec<Vec<usize>> {
    let n = ProcessLabel::ALL.len();
    let idx = |l: ProcessLabel| ProcessLabel::ALL.iter().position(|x| *x == l).unwrap();
    let mut m = vec![vec![0usize; n]; n];
    for (s, seg) in reference.iter().enumerate() {
        let predicted = pairing[s].map_or(ProcessLabel::NoProcess, |e| processes[e].label);
        m[idx(seg.label)][idx(predicted)] += 1;
    }
    m
}

/// Metrics read off a confusion matrix: match rate and, per label,
/// `(sensitivity, specificity)` with `None` for a zero denominator.
pub struct MatrixMetrics {
    pub match_rate: Option<f64>,
    pub per_label: Vec<(ProcessLabel, Option<f64>, Option<f64>)>,
}

pub fn metrics_from_matrix(m: &[Vec<usize>]) -> MatrixMetrics {
    let n = m.len();
    let total: usize = m.iter().flatten().sum();
    let diagonal: usize = (0..n).map(|i| m[i][i]).sum();
    let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    let per_label = ProcessLabel::ALL
        .iter()
        .enumerate()
        .filter(|(_, l)| **l != ProcessLabel::NoProcess)
        .map(|(i, &l)| {
            let tp = m[i][i];
            let row: usize = m[i].iter().sum();
            let col: usize = m.iter().map(|r| r[i]).sum();
            let fn_ = row - tp;
            let fp = col - tp;
            let tn = total - tp - fn_ - fp;
            (l, ratio(tp, tp + fn_), ratio(tn, tn + fp))
        })
        .collect();
    MatrixMetrics {
        match_rate: ratio(diagonal, total),
        per_label,
    }
}
