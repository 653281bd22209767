//! Shared generators and independent oracles for the integration suites.
//!
//! The oracles here deliberately restate definitions naively (enumerate and
//! test, brute-force recursion, structural diff) so that the optimized
//! implementations are checked against something written from first
//! principles rather than against themselves.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use axml::engine::WindowEntry;
use axml::model::{CompositeOp, PathQuery};
use axml::path::{Axis, NameTest, PathExpr, Predicate, Step};
use axml::store::Snapshot;
use axml::xml::{parse_document, serialize_rule};
use axml::{
    Action, ActionOp, Condition, DocMeta, DocTree, Element, EventKind, EventOccurrence,
    EventSpec, Link, Node, NodeAddress, Origin, Rule,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tree(xml: &str) -> DocTree {
    parse_document(xml.as_bytes()).expect("well-formed test document")
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Element names used for generated content. None of them is an alias of
/// `rule`/`rules`, so embedded-rule extraction never touches them.
pub const NAME_POOL: &[&str] = &["a", "b", "c", "d", "doc", "sec", "p", "q"];

pub const KINDS: [EventKind; 4] = [
    EventKind::Update,
    EventKind::Add,
    EventKind::Move,
    EventKind::Delete,
];

pub fn gen_name(rng: &mut ChaCha8Rng) -> String {
    NAME_POOL[rng.gen_range(0..NAME_POOL.len())].to_string()
}

/// A random element tree with at most `budget` elements (at least one).
pub fn gen_element(rng: &mut ChaCha8Rng, budget: &mut usize) -> Element {
    *budget = budget.saturating_sub(1);
    let mut elem = Element::new(gen_name(rng));
    if rng.gen_bool(0.3) {
        elem.set_attr("name", gen_name(rng));
    }
    if rng.gen_bool(0.2) {
        elem.set_attr("id", format!("n{}", rng.gen_range(0..6)));
    }
    if rng.gen_bool(0.25) {
        elem.children.push(Node::Text(gen_name(rng)));
    }
    let fanout = rng.gen_range(0..4).min(*budget);
    for _ in 0..fanout {
        if *budget == 0 {
            break;
        }
        let child = gen_element(rng, budget);
        elem.children.push(Node::Element(child));
    }
    elem
}

pub fn gen_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> DocTree {
    let mut budget = rng.gen_range(1..=max_nodes);
    DocTree::new(gen_element(rng, &mut budget))
}

pub fn gen_step(rng: &mut ChaCha8Rng) -> Step {
    let name = if rng.gen_bool(0.2) {
        NameTest::Wildcard
    } else {
        NameTest::Name(gen_name(rng))
    };
    let predicate = match rng.gen_range(0..8) {
        0 => Some(Predicate::AttrEq {
            name: "name".into(),
            value: gen_name(rng),
        }),
        1 => Some(Predicate::TextEq {
            value: gen_name(rng),
        }),
        2 => Some(Predicate::Position(rng.gen_range(1..4))),
        _ => None,
    };
    let axis = if rng.gen_bool(0.35) {
        Axis::Descendant
    } else {
        Axis::Child
    };
    Step {
        axis,
        name,
        predicate,
    }
}

pub fn gen_path(rng: &mut ChaCha8Rng, max_steps: usize) -> PathExpr {
    let n = rng.gen_range(1..=max_steps);
    PathExpr {
        steps: (0..n).map(|_| gen_step(rng)).collect(),
    }
}

/// A random event spec of nesting depth at most `max_depth` (>= 1).
pub fn gen_spec(rng: &mut ChaCha8Rng, max_depth: usize) -> EventSpec {
    if max_depth <= 1 || rng.gen_bool(0.4) {
        let kind = KINDS[rng.gen_range(0..4)];
        let target = if rng.gen_bool(0.4) {
            Some(gen_path(rng, 2))
        } else {
            None
        };
        EventSpec::Primitive { kind, target }
    } else {
        let op = match rng.gen_range(0..3) {
            0 => CompositeOp::And,
            1 => CompositeOp::Or,
            _ => CompositeOp::Seq,
        };
        let arity = rng.gen_range(2..=3);
        EventSpec::Composite {
            op,
            operands: (0..arity).map(|_| gen_spec(rng, max_depth - 1)).collect(),
        }
    }
}

/// A random occurrence window over `docs`, at most `max_len` entries.
/// Every entry carries the same snapshot; the matcher only consults the
/// snapshot attached to each entry, so this is a valid window.
pub fn gen_window(
    rng: &mut ChaCha8Rng,
    docs: &BTreeMap<String, Arc<DocTree>>,
    max_len: usize,
) -> Vec<WindowEntry> {
    let snapshot = Snapshot { docs: docs.clone() };
    let ids: Vec<&String> = docs.keys().collect();
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|i| {
            let doc_id = ids[rng.gen_range(0..ids.len())].clone();
            let doc = snapshot.doc(&doc_id).unwrap();
            let addrs = all_addresses(doc);
            let path = addrs[rng.gen_range(0..addrs.len())].clone();
            WindowEntry::new(
                EventOccurrence {
                    seq: i as u64 + 1,
                    kind: KINDS[rng.gen_range(0..4)],
                    target: NodeAddress::new(doc_id, path),
                    origin: Origin::User,
                    cascade_depth: 0,
                },
                snapshot.clone(),
            )
        })
        .collect()
}

pub fn gen_rule(rng: &mut ChaCha8Rng, id: &str) -> Rule {
    let n_queries = rng.gen_range(0..3);
    let condition = Condition {
        queries: (0..n_queries)
            .map(|_| PathQuery {
                scope: if rng.gen_bool(0.5) {
                    Some(format!("d{}", rng.gen_range(0..4)))
                } else {
                    None
                },
                expr: gen_path(rng, 3),
            })
            .collect(),
    };
    let n_ops = rng.gen_range(1..3);
    let ops = (0..n_ops).map(|_| gen_action_op(rng)).collect();
    Rule {
        id: id.to_string(),
        event: gen_spec(rng, 3),
        condition,
        action: Action { ops },
    }
}

pub fn gen_action_op(rng: &mut ChaCha8Rng) -> ActionOp {
    let kind = KINDS[rng.gen_range(0..4)];
    let payload = match kind {
        EventKind::Add | EventKind::Update => {
            let mut budget = 3;
            Some(gen_element(rng, &mut budget))
        }
        _ => None,
    };
    let destination = match kind {
        EventKind::Move => Some(gen_path(rng, 2)),
        _ => None,
    };
    ActionOp {
        kind,
        target: gen_path(rng, 3),
        payload,
        destination,
    }
}

pub fn gen_meta(rng: &mut ChaCha8Rng, id: &str) -> DocMeta {
    DocMeta {
        doc_id: id.to_string(),
        name: gen_name(rng),
        created: format!(
            "200{}-0{}-1{}",
            rng.gen_range(0..4),
            rng.gen_range(1..10),
            rng.gen_range(0..10)
        ),
        version: rng.gen_range(1..9),
        author: gen_name(rng),
    }
}

pub fn gen_address(rng: &mut ChaCha8Rng, doc_ids: &[String]) -> NodeAddress {
    let doc_id = doc_ids[rng.gen_range(0..doc_ids.len())].clone();
    let depth = rng.gen_range(0..3);
    NodeAddress::new(doc_id, (0..depth).map(|_| rng.gen_range(0..3)).collect())
}

pub fn gen_link(rng: &mut ChaCha8Rng, id: &str, doc_ids: &[String]) -> Link {
    let n_dest = rng.gen_range(1..=3);
    Link {
        link_id: id.to_string(),
        origin: gen_address(rng, doc_ids),
        destinations: (0..n_dest).map(|_| gen_address(rng, doc_ids)).collect(),
    }
}

/// Appends each rule, in its canonical serialized form, as the last child
/// of a randomly chosen content element. Rules are never nested inside a
/// previously embedded rule subtree.
pub fn embed_rules(base: &DocTree, rules: &[Rule], rng: &mut ChaCha8Rng) -> DocTree {
    let mut doc = base.clone();
    let mut rule_sites: Vec<Vec<usize>> = Vec::new();
    for rule in rules {
        let candidates: Vec<Vec<usize>> = all_addresses(&doc)
            .into_iter()
            .filter(|a| !rule_sites.iter().any(|s| a.starts_with(s)))
            .collect();
        let parent = candidates[rng.gen_range(0..candidates.len())].clone();
        let elem = doc.resolve_element_mut(&parent).unwrap();
        elem.children.push(Node::Element(serialize_rule(rule).root));
        let mut site = parent;
        site.push(elem.children.len() - 1);
        rule_sites.push(site);
    }
    doc
}

/// Inserts the rules back at the recorded removal sites (original-tree
/// addresses, document order); inverse of extraction when the embedded
/// subtrees were canonical serialized rules.
pub fn reinsert(stripped: &DocTree, sites: &[Vec<usize>], rules: &[Rule]) -> DocTree {
    let mut doc = stripped.clone();
    for (site, rule) in sites.iter().zip(rules) {
        let (idx, parent) = site.split_last().expect("rule site is never the root");
        let elem = doc.resolve_element_mut(parent).unwrap();
        elem.children
            .insert(*idx, Node::Element(serialize_rule(rule).root));
    }
    doc
}

// ---------------------------------------------------------------------------
// Path-evaluation oracle: enumerate every element address and test it
// against the expression by definition.
// ---------------------------------------------------------------------------

/// Every element address of the document, in document order. The root is
/// the empty path.
pub fn all_addresses(doc: &DocTree) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    fn walk(elem: &Element, path: &[usize], out: &mut Vec<Vec<usize>>) {
        for (i, child) in elem.children.iter().enumerate() {
            if let Node::Element(e) = child {
                let mut p = path.to_vec();
                p.push(i);
                out.push(p.clone());
                walk(e, &p, out);
            }
        }
    }
    walk(&doc.root, &[], &mut out);
    out
}

fn oracle_step_test(doc: &DocTree, addr: &[usize], step: &Step) -> bool {
    let Some(elem) = doc.resolve_element(addr) else {
        return false;
    };
    let name_ok = match &step.name {
        NameTest::Wildcard => true,
        NameTest::Name(n) => &elem.name == n,
    };
    if !name_ok {
        return false;
    }
    match &step.predicate {
        None => true,
        Some(Predicate::AttrEq { name, value }) => elem.attr(name) == Some(value.as_str()),
        Some(Predicate::TextEq { value }) => elem.text() == *value,
        Some(Predicate::Position(n)) => {
            // 1-based rank among the parent's element children that pass
            // this step's name test; the root is always at position 1.
            let Some((&last, parent_path)) = addr.split_last() else {
                return *n == 1;
            };
            let parent = doc.resolve_element(parent_path).unwrap();
            let mut rank = 0;
            for (i, child) in parent.children.iter().enumerate() {
                if let Node::Element(e) = child {
                    let passes = match &step.name {
                        NameTest::Wildcard => true,
                        NameTest::Name(nm) => &e.name == nm,
                    };
                    if passes {
                        rank += 1;
                    }
                    if i == last {
                        return passes && rank == *n;
                    }
                }
            }
            false
        }
    }
}

/// True iff `addr` is selected by `expr`: there must be a chain of
/// strictly lengthening prefixes of `addr`, one per step, starting from the
/// virtual document node, where Child lengthens by exactly one level and
/// Descendant by at least one, each prefix passing its step's test, and the
/// last prefix being `addr` itself.
pub fn oracle_selects(expr: &PathExpr, doc: &DocTree, addr: &[usize]) -> bool {
    // lengths are prefix lengths; the virtual document node is "before"
    // length 0 (the root element)
    fn rec(steps: &[Step], doc: &DocTree, addr: &[usize], from: Option<usize>) -> bool {
        let Some((step, rest)) = steps.split_first() else {
            return from == Some(addr.len());
        };
        let candidates: Vec<usize> = match (step.axis, from) {
            (Axis::Child, None) => vec![0],
            (Axis::Child, Some(l)) => vec![l + 1],
            (Axis::Descendant, None) => (0..=addr.len()).collect(),
            (Axis::Descendant, Some(l)) => ((l + 1)..=addr.len()).collect(),
        };
        for len in candidates {
            if len > addr.len() {
                continue;
            }
            if oracle_step_test(doc, &addr[..len], step) && rec(rest, doc, addr, Some(len)) {
                return true;
            }
        }
        false
    }
    rec(&expr.steps, doc, addr, None)
}

pub fn oracle_eval_path(expr: &PathExpr, doc: &DocTree) -> Vec<Vec<usize>> {
    all_addresses(doc)
        .into_iter()
        .filter(|a| oracle_selects(expr, doc, a))
        .collect()
}

// ---------------------------------------------------------------------------
// Composite-matcher oracle: naive recursion over the definition.
// ---------------------------------------------------------------------------

fn oracle_primitive(kind: EventKind, target: Option<&PathExpr>, entry: &WindowEntry) -> bool {
    if entry.occ.kind != kind {
        return false;
    }
    let Some(expr) = target else { return true };
    let Some(doc) = entry.snapshot.doc(&entry.occ.target.doc_id) else {
        return false;
    };
    oracle_selects(expr, doc, &entry.occ.target.path)
}

/// Recursive-definition matcher: Or is any operand over the whole window;
/// And is every operand over the whole window; Seq splits the window into
/// ordered contiguous segments, one per operand, trying every split.
pub fn oracle_matches(spec: &EventSpec, entries: &[WindowEntry]) -> bool {
    match spec {
        EventSpec::Primitive { kind, target } => entries
            .iter()
            .any(|e| oracle_primitive(*kind, target.as_ref(), e)),
        EventSpec::Composite { op, operands } => match op {
            CompositeOp::Or => operands.iter().any(|o| oracle_matches(o, entries)),
            CompositeOp::And => operands.iter().all(|o| oracle_matches(o, entries)),
            CompositeOp::Seq => oracle_seq(operands, entries),
        },
    }
}

fn oracle_seq(operands: &[EventSpec], entries: &[WindowEntry]) -> bool {
    match operands {
        [] => false,
        [single] => oracle_matches(single, entries),
        [head, rest @ ..] => (1..entries.len()).any(|split| {
            oracle_matches(head, &entries[..split]) && oracle_seq(rest, &entries[split..])
        }),
    }
}

// ---------------------------------------------------------------------------
// Tree-diff oracle: structural diff returning removal sites (addresses in
// the original tree of subtrees absent from the stripped tree).
// ---------------------------------------------------------------------------

/// Structural diff of two trees where the second is the first minus some
/// whole subtrees. Returns the original-tree addresses of the removed
/// subtrees, in document order. Panics if the stripped tree is not
/// derivable from the original that way.
pub fn tree_diff(original: &DocTree, stripped: &DocTree) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    assert_eq!(original.root.name, stripped.root.name, "root changed");
    assert_eq!(original.root.attributes, stripped.root.attributes);
    diff_children(&original.root, &stripped.root, &[], &mut out);
    out
}

fn shallow_match(a: &Node, b: &Node) -> bool {
    match (a, b) {
        (Node::Text(x), Node::Text(y)) => x == y,
        (Node::Element(x), Node::Element(y)) => {
            x.name == y.name && x.attributes == y.attributes
        }
        _ => false,
    }
}

fn diff_children(orig: &Element, stripped: &Element, path: &[usize], out: &mut Vec<Vec<usize>>) {
    let mut j = 0;
    for (i, oc) in orig.children.iter().enumerate() {
        let mut addr = path.to_vec();
        addr.push(i);
        if j < stripped.children.len() && shallow_match(oc, &stripped.children[j]) {
            if let (Node::Element(oe), Node::Element(se)) = (oc, &stripped.children[j]) {
                diff_children(oe, se, &addr, out);
            }
            j += 1;
        } else {
            out.push(addr);
        }
    }
    assert_eq!(j, stripped.children.len(), "stripped tree has extra nodes");
}

// ---------------------------------------------------------------------------
// Brute-force referential-integrity resolver.
// ---------------------------------------------------------------------------

/// Resolves every link endpoint directly against the document map.
/// Returns (dangling_external, dangling_internal), each sorted.
pub fn brute_force_integrity(
    docs: &BTreeMap<String, Arc<DocTree>>,
    links: &[Link],
) -> (Vec<(String, String)>, Vec<(String, NodeAddress)>) {
    let mut external = Vec::new();
    let mut internal = Vec::new();
    for link in links {
        let endpoints = std::iter::once(&link.origin).chain(link.destinations.iter());
        for addr in endpoints {
            match docs.get(&addr.doc_id) {
                None => external.push((link.link_id.clone(), addr.doc_id.clone())),
                Some(doc) => {
                    if !doc.resolves(&addr.path) {
                        internal.push((link.link_id.clone(), addr.clone()));
                    }
                }
            }
        }
    }
    external.sort();
    external.dedup();
    internal.sort_by(|a, b| (&a.0, &a.1.doc_id, &a.1.path).cmp(&(&b.0, &b.1.doc_id, &b.1.path)));
    internal.dedup();
    (external, internal)
}
