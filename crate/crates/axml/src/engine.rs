//! Event detection: matches primitive and composite event specifications
//! against occurrence windows and selects the firing rules in order.
//!
//! Windowing: And/Or specs are matched over the current cascade round's
//! batch; any spec containing Seq is matched over the full session history,
//! since sequence only means anything across time. Each window entry
//! carries the snapshot its target is matched against: the pre-mutation
//! state for Delete/Move (the node no longer exists afterwards), the
//! post-mutation state for Add/Update.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::model::{CompositeOp, EventKind, EventOccurrence, EventSpec, NodeAddress};
use crate::path::{eval_path, PathExpr};
use crate::store::Snapshot;
use crate::xml::RuleFile;

/// One occurrence plus the document state it is matched against.
#[derive(Debug, Clone)]
pub struct WindowEntry {
    pub occ: EventOccurrence,
    pub snapshot: Snapshot,
}

impl WindowEntry {
    pub fn new(occ: EventOccurrence, snapshot: Snapshot) -> WindowEntry {
        WindowEntry { occ, snapshot }
    }
}

/// The matching window for one cascade round.
#[derive(Debug, Clone, Default)]
pub struct EventWindow {
    /// This round's occurrences, ordered by seq.
    pub batch: Vec<WindowEntry>,
    /// Every occurrence since the session started, ordered by seq; the
    /// batch is its suffix.
    pub history: Vec<WindowEntry>,
    pub session_start_seq: u64,
}

/// A rule whose event specification matched the window.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleActivation {
    pub rule_id: String,
    /// Seq values of the occurrences used by the match.
    pub triggering: Vec<u64>,
    /// Target of the highest-seq occurrence used by the match.
    pub binding: NodeAddress,
}

/// True iff the occurrence has the right kind and its target is selected
/// by the spec's path (absent path matches any node of that kind).
pub fn matches_primitive(
    kind: EventKind,
    target: Option<&PathExpr>,
    entry: &WindowEntry,
) -> bool {
    if entry.occ.kind != kind {
        return false;
    }
    let Some(expr) = target else {
        return true;
    };
    let Some(doc) = entry.snapshot.doc(&entry.occ.target.doc_id) else {
        return false;
    };
    eval_path(expr, doc).contains(&entry.occ.target.path)
}

/// Matches a spec against an ordered entry list, returning the seq values
/// of the occurrences used, or None. Or takes the first matching operand;
/// And needs every operand anywhere in the list; Seq needs its operands to
/// match over segments with strictly increasing seq values left to right.
pub fn match_spec(spec: &EventSpec, entries: &[WindowEntry]) -> Option<Vec<u64>> {
    match spec {
        EventSpec::Primitive { kind, target } => entries
            .iter()
            .rev()
            .find(|e| matches_primitive(*kind, target.as_ref(), e))
            .map(|e| vec![e.occ.seq]),
        EventSpec::Composite { op, operands } => match op {
            CompositeOp::Or => operands.iter().find_map(|o| match_spec(o, entries)),
            CompositeOp::And => {
                let mut used = Vec::new();
                for operand in operands {
                    used.extend(match_spec(operand, entries)?);
                }
                used.sort_unstable();
                used.dedup();
                Some(used)
            }
            CompositeOp::Seq => match_seq(operands, entries),
        },
    }
}

fn match_seq(operands: &[EventSpec], entries: &[WindowEntry]) -> Option<Vec<u64>> {
    let (first, rest) = operands.split_first()?;
    if rest.is_empty() {
        return match_spec(first, entries);
    }
    // earliest split that lets the head match its prefix and the tail the rest
    for split in 1..entries.len() {
        if let Some(mut head) = match_spec(first, &entries[..split]) {
            if let Some(tail) = match_seq(rest, &entries[split..]) {
                head.extend(tail);
                head.sort_unstable();
                head.dedup();
                return Some(head);
            }
        }
    }
    None
}

/// Convenience boolean form of `match_spec`.
pub fn matches(spec: &EventSpec, entries: &[WindowEntry]) -> bool {
    match_spec(spec, entries).is_some()
}

/// Activations for exactly the rules whose event spec matches, in
/// rule-file order; at most one activation per rule per window.
pub fn select_rules(rule_base: &RuleFile, window: &EventWindow) -> Vec<RuleActivation> {
    let activate = |rule: &crate::model::Rule| -> Option<RuleActivation> {
        let entries = if rule.event.contains_seq() {
            &window.history
        } else {
            &window.batch
        };
        let used = match_spec(&rule.event, entries)?;
        let max_seq = *used.iter().max()?;
        let binding = entries
            .iter()
            .find(|e| e.occ.seq == max_seq)
            .map(|e| e.occ.target.clone())?;
        Some(RuleActivation {
            rule_id: rule.id.clone(),
            triggering: used,
            binding,
        })
    };
    #[cfg(feature = "parallel")]
    let hits: Vec<Option<RuleActivation>> = rule_base.rules.par_iter().map(activate).collect();
    #[cfg(not(feature = "parallel"))]
    let hits: Vec<Option<RuleActivation>> = rule_base.rules.iter().map(activate).collect();
    hits.into_iter().flatten().collect()
}

/// Sequential twin of `select_rules`, kept as the benchmark baseline.
pub fn select_rules_seq(rule_base: &RuleFile, window: &EventWindow) -> Vec<RuleActivation> {
    rule_base
        .rules
        .iter()
        .filter_map(|rule| {
            let entries = if rule.event.contains_seq() {
                &window.history
            } else {
                &window.batch
            };
            let used = match_spec(&rule.event, entries)?;
            let max_seq = *used.iter().max()?;
            let binding = entries
                .iter()
                .find(|e| e.occ.seq == max_seq)
                .map(|e| e.occ.target.clone())?;
            Some(RuleActivation {
                rule_id: rule.id.clone(),
                triggering: used,
                binding,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Origin, Rule};
    use crate::path::parse_path;
    use crate::xml::{parse_document, parse_rule};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn snap(docs: &[(&str, &str)]) -> Snapshot {
        let mut map = BTreeMap::new();
        for (id, xml) in docs {
            map.insert(
                id.to_string(),
                Arc::new(parse_document(xml.as_bytes()).unwrap()),
            );
        }
        Snapshot { docs: map }
    }

    fn entry(seq: u64, kind: EventKind, doc_id: &str, path: Vec<usize>, s: &Snapshot) -> WindowEntry {
        WindowEntry::new(
            EventOccurrence {
                seq,
                kind,
                target: NodeAddress::new(doc_id, path),
                origin: Origin::User,
                cascade_depth: 0,
            },
            s.clone(),
        )
    }

    fn prim(kind: EventKind) -> EventSpec {
        EventSpec::primitive(kind)
    }

    fn comp(op: CompositeOp, operands: Vec<EventSpec>) -> EventSpec {
        EventSpec::Composite { op, operands }
    }

    #[test]
    fn primitive_target_matching() {
        let s = snap(&[("X", "<doc name='X'><Paragraphe/></doc>")]);
        let spec_target = parse_path("/doc[@name='X']").unwrap();
        let e = entry(1, EventKind::Update, "X", vec![], &s);
        assert!(matches_primitive(EventKind::Update, Some(&spec_target), &e));
        assert!(!matches_primitive(EventKind::Delete, Some(&spec_target), &e));
        let nothing = parse_path("/nope").unwrap();
        assert!(!matches_primitive(EventKind::Update, Some(&nothing), &e));
        assert!(matches_primitive(EventKind::Update, None, &e));
    }

    #[test]
    fn and_needs_every_operand() {
        let s = snap(&[("d", "<a/>")]);
        let spec = comp(CompositeOp::And, vec![prim(EventKind::Delete), prim(EventKind::Add)]);
        let both = vec![
            entry(1, EventKind::Delete, "d", vec![], &s),
            entry(2, EventKind::Add, "d", vec![], &s),
        ];
        assert!(matches(&spec, &both));
        assert!(!matches(&spec, &both[..1]));
    }

    #[test]
    fn seq_is_order_sensitive() {
        let s = snap(&[("d", "<a/>")]);
        let spec = comp(CompositeOp::Seq, vec![prim(EventKind::Update), prim(EventKind::Delete)]);
        let wrong = vec![
            entry(5, EventKind::Delete, "d", vec![], &s),
            entry(6, EventKind::Update, "d", vec![], &s),
        ];
        assert!(!matches(&spec, &wrong));
        let right = vec![
            entry(5, EventKind::Update, "d", vec![], &s),
            entry(6, EventKind::Delete, "d", vec![], &s),
        ];
        assert!(matches(&spec, &right));
    }

    fn rule(id: &str, xml_event: &str) -> Rule {
        let xml = format!(
            r#"<rule id="{id}">{xml_event}<action kind="delete" target="/x"/></rule>"#
        );
        parse_rule(&parse_document(xml.as_bytes()).unwrap()).unwrap()
    }

    #[test]
    fn selection_in_file_order_once_per_rule() {
        let s = snap(&[("X", "<doc name='X'/>")]);
        let base = RuleFile {
            rules: vec![
                rule("r1", r#"<event kind="update" target="/doc[@name='X']"/>"#),
                rule("r2", r#"<event kind="delete"/>"#),
            ],
        };
        let batch = vec![
            entry(1, EventKind::Update, "X", vec![], &s),
            entry(2, EventKind::Update, "X", vec![], &s),
        ];
        let window = EventWindow {
            history: batch.clone(),
            batch,
            session_start_seq: 1,
        };
        let acts = select_rules(&base, &window);
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].rule_id, "r1");
        assert_eq!(acts[0].binding, NodeAddress::root("X"));
        assert_eq!(acts[0].triggering, vec![2]);
        assert_eq!(acts, select_rules_seq(&base, &window));

        let empty = RuleFile::default();
        assert!(select_rules(&empty, &window).is_empty());
    }

    #[test]
    fn seq_rules_use_session_history() {
        let s = snap(&[("d", "<a/>")]);
        let base = RuleFile {
            rules: vec![rule(
                "r1",
                r#"<composite op="seq"><event kind="add"/><event kind="delete"/></composite>"#,
            )],
        };
        let old = entry(1, EventKind::Add, "d", vec![], &s);
        let new = entry(2, EventKind::Delete, "d", vec![], &s);
        let window = EventWindow {
            batch: vec![new.clone()],
            history: vec![old, new],
            session_start_seq: 1,
        };
        let acts = select_rules(&base, &window);
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].triggering, vec![1, 2]);
    }
}
