//! Core value types: the ECA rule algebra, document trees, addresses, links,
//! mutations and event occurrences. Everything here is immutable after
//! construction and free of I/O.

use std::fmt;

use crate::path::PathExpr;

/// Maximum nesting depth allowed in a composite event specification.
pub const MAX_SPEC_DEPTH: usize = 8;

/// The four primitive mutation kinds. `Move` relocates a subtree to another
/// parent; `Delete` destroys it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Update,
    Add,
    Move,
    Delete,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Update => "update",
            EventKind::Add => "add",
            EventKind::Move => "move",
            EventKind::Delete => "delete",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        match s {
            "update" => Some(EventKind::Update),
            "add" => Some(EventKind::Add),
            "move" => Some(EventKind::Move),
            "delete" => Some(EventKind::Delete),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Composite event operators. `Seq` is order-sensitive; `And`/`Or` are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompositeOp {
    And,
    Or,
    Seq,
}

impl CompositeOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CompositeOp::And => "and",
            CompositeOp::Or => "or",
            CompositeOp::Seq => "seq",
        }
    }

    pub fn parse(s: &str) -> Option<CompositeOp> {
        match s {
            "and" => Some(CompositeOp::And),
            "or" => Some(CompositeOp::Or),
            "seq" => Some(CompositeOp::Seq),
            _ => None,
        }
    }
}

/// An event pattern: a primitive mutation kind with an optional target path,
/// or a composite built from And/Or/Seq over at least two operands.
#[derive(Debug, Clone, PartialEq)]
pub enum EventSpec {
    Primitive {
        kind: EventKind,
        target: Option<PathExpr>,
    },
    Composite {
        op: CompositeOp,
        operands: Vec<EventSpec>,
    },
}

impl EventSpec {
    pub fn primitive(kind: EventKind) -> EventSpec {
        EventSpec::Primitive { kind, target: None }
    }

    pub fn depth(&self) -> usize {
        match self {
            EventSpec::Primitive { .. } => 1,
            EventSpec::Composite { operands, .. } => {
                1 + operands.iter().map(EventSpec::depth).max().unwrap_or(0)
            }
        }
    }

    /// True if any `Seq` operator occurs anywhere in the spec. Seq-bearing
    /// specs are matched against the full session history instead of the
    /// current round's batch.
    pub fn contains_seq(&self) -> bool {
        match self {
            EventSpec::Primitive { .. } => false,
            EventSpec::Composite { op, operands } => {
                *op == CompositeOp::Seq || operands.iter().any(EventSpec::contains_seq)
            }
        }
    }
}

/// One path query of a condition, optionally scoped to a single document.
#[derive(Debug, Clone, PartialEq)]
pub struct PathQuery {
    pub scope: Option<String>,
    pub expr: PathExpr,
}

/// A conjunction of path queries. Satisfied iff every query returns a
/// non-empty node set; the empty conjunction is vacuously true.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Condition {
    pub queries: Vec<PathQuery>,
}

/// A single operation of an action. Shares the payload/destination
/// requirements of `MutationOp`, but addresses nodes by path expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOp {
    pub kind: EventKind,
    pub target: PathExpr,
    pub payload: Option<Element>,
    pub destination: Option<PathExpr>,
}

/// The action part of a rule: one or more operations, executed in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub ops: Vec<ActionOp>,
}

/// An ECA rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub id: String,
    pub event: EventSpec,
    pub condition: Condition,
    pub action: Action,
}

/// A stable node address: a document id plus a child-index path from the
/// document root. The empty path addresses the root element itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeAddress {
    pub doc_id: String,
    pub path: Vec<usize>,
}

impl NodeAddress {
    pub fn new(doc_id: impl Into<String>, path: Vec<usize>) -> NodeAddress {
        NodeAddress {
            doc_id: doc_id.into(),
            path,
        }
    }

    pub fn root(doc_id: impl Into<String>) -> NodeAddress {
        NodeAddress::new(doc_id, Vec::new())
    }

    /// `doc_id#/i/j/k` form; a bare doc id addresses the root.
    pub fn to_href(&self) -> String {
        if self.path.is_empty() {
            self.doc_id.clone()
        } else {
            let frag: String = self.path.iter().map(|i| format!("/{i}")).collect();
            format!("{}#{}", self.doc_id, frag)
        }
    }

    pub fn parse_href(href: &str) -> Option<NodeAddress> {
        let (doc, frag) = match href.split_once('#') {
            Some((d, f)) => (d, f),
            None => (href, ""),
        };
        if doc.is_empty() {
            return None;
        }
        if frag.is_empty() {
            return Some(NodeAddress::root(doc));
        }
        let mut path = Vec::new();
        if !frag.starts_with('/') {
            return None;
        }
        for part in frag[1..].split('/') {
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            path.push(part.parse().ok()?);
        }
        Some(NodeAddress::new(doc, path))
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_href())
    }
}

/// A child of an element: nested element or text run.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Element(Element),
    Text(String),
}

/// An ordered element with attributes and mixed children. Attribute names
/// are unique per element; attribute order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<Node>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Element {
        Element {
            name: name.into(),
            attributes: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_attr(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        let value = value.into();
        match self.attributes.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.attributes.push((name, value)),
        }
    }

    pub fn child_elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|c| match c {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    /// Concatenation of the direct text children.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for c in &self.children {
            if let Node::Text(t) = c {
                out.push_str(t);
            }
        }
        out
    }
}

/// A whole document: a single root element.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTree {
    pub root: Element,
}

impl AsRef<DocTree> for DocTree {
    fn as_ref(&self) -> &DocTree {
        self
    }
}

impl DocTree {
    pub fn new(root: Element) -> DocTree {
        DocTree { root }
    }

    /// Resolve a non-empty child-index path to a node. The empty path
    /// addresses the root element; use `resolve_element` for it.
    pub fn resolve(&self, path: &[usize]) -> Option<&Node> {
        let mut elem = &self.root;
        for (i, &idx) in path.iter().enumerate() {
            let node = elem.children.get(idx)?;
            if i + 1 == path.len() {
                return Some(node);
            }
            match node {
                Node::Element(e) => elem = e,
                Node::Text(_) => return None,
            }
        }
        None
    }

    /// Resolve a path to an element; the empty path yields the root.
    pub fn resolve_element(&self, path: &[usize]) -> Option<&Element> {
        let mut elem = &self.root;
        for &idx in path {
            match elem.children.get(idx)? {
                Node::Element(e) => elem = e,
                Node::Text(_) => return None,
            }
        }
        Some(elem)
    }

    pub fn resolve_element_mut(&mut self, path: &[usize]) -> Option<&mut Element> {
        let mut elem = &mut self.root;
        for &idx in path {
            match elem.children.get_mut(idx)? {
                Node::Element(e) => elem = e,
                Node::Text(_) => return None,
            }
        }
        Some(elem)
    }

    /// True if the path resolves to any node (the empty path always does).
    pub fn resolves(&self, path: &[usize]) -> bool {
        if path.is_empty() {
            return true;
        }
        self.resolve(path).is_some()
    }
}

/// Registry metadata for one stored document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocMeta {
    pub doc_id: String,
    pub name: String,
    /// ISO-8601 date, `YYYY-MM-DD`.
    pub created: String,
    pub version: u32,
    pub author: String,
}

/// A stored link: one origin and one or more destinations.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub link_id: String,
    pub origin: NodeAddress,
    pub destinations: Vec<NodeAddress>,
}

/// One mutation submitted to the store, by a user or a rule action.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationOp {
    pub kind: EventKind,
    pub target: NodeAddress,
    pub payload: Option<Element>,
    pub destination: Option<NodeAddress>,
}

/// Who raised an occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    User,
    Rule(String),
}

/// The timestamped fact that a mutation happened to a node.
#[derive(Debug, Clone, PartialEq)]
pub struct EventOccurrence {
    pub seq: u64,
    pub kind: EventKind,
    pub target: NodeAddress,
    pub origin: Origin,
    pub cascade_depth: u32,
}

/// One event-log record. Occurrences stay in the log even when a vetoed
/// cascade is rolled back; they are marked instead of erased.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub occ: EventOccurrence,
    pub rolled_back: bool,
}

/// Stable codes for rule-validation violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    BadId,
    CompositeArity,
    DepthExceeded,
    MissingPayload,
    MissingDestination,
    EmptyAction,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::BadId => "BAD_ID",
            ViolationCode::CompositeArity => "COMPOSITE_ARITY",
            ViolationCode::DepthExceeded => "DEPTH_EXCEEDED",
            ViolationCode::MissingPayload => "MISSING_PAYLOAD",
            ViolationCode::MissingDestination => "MISSING_DESTINATION",
            ViolationCode::EmptyAction => "EMPTY_ACTION",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

/// The list of violated invariants; empty means the rule is valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_code(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, detail: impl Into<String>) {
        self.violations.push(Violation {
            code,
            detail: detail.into(),
        });
    }
}

fn valid_rule_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Structural validation of a rule. Never aborts; every violated invariant
/// is reported with its stable code.
pub fn validate_rule(rule: &Rule) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !valid_rule_id(&rule.id) {
        report.push(
            ViolationCode::BadId,
            format!("rule id {:?} must match [A-Za-z0-9_-]+", rule.id),
        );
    }
    validate_spec(&rule.event, 1, &mut report);
    if rule.action.ops.is_empty() {
        report.push(ViolationCode::EmptyAction, "action has no operations");
    }
    for (i, op) in rule.action.ops.iter().enumerate() {
        match op.kind {
            EventKind::Add | EventKind::Update => {
                if op.payload.is_none() {
                    report.push(
                        ViolationCode::MissingPayload,
                        format!("action op {i} ({}) requires a payload", op.kind),
                    );
                }
            }
            EventKind::Move => {
                if op.destination.is_none() {
                    report.push(
                        ViolationCode::MissingDestination,
                        format!("action op {i} (move) requires a destination"),
                    );
                }
            }
            EventKind::Delete => {}
        }
    }
    report
}

fn validate_spec(spec: &EventSpec, depth: usize, report: &mut ValidationReport) {
    if depth > MAX_SPEC_DEPTH {
        report.push(
            ViolationCode::DepthExceeded,
            format!("event nesting exceeds {MAX_SPEC_DEPTH}"),
        );
        return;
    }
    if let EventSpec::Composite { operands, op } = spec {
        if operands.len() < 2 {
            report.push(
                ViolationCode::CompositeArity,
                format!("{} composite has {} operand(s), needs >= 2", op.as_str(), operands.len()),
            );
        }
        for operand in operands {
            validate_spec(operand, depth + 1, report);
        }
    }
}

/// Normalization error: only raised when the input exceeds the depth bound.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("DEPTH_EXCEEDED: event nesting exceeds {MAX_SPEC_DEPTH}")]
pub struct DepthExceeded;

/// Flattens nested same-operator And/Or composites. Seq is order-sensitive
/// and never flattened. The result matches exactly the same occurrence
/// histories as the input.
pub fn normalize_event_spec(spec: &EventSpec) -> Result<EventSpec, DepthExceeded> {
    if spec.depth() > MAX_SPEC_DEPTH {
        return Err(DepthExceeded);
    }
    Ok(normalize_inner(spec))
}

fn normalize_inner(spec: &EventSpec) -> EventSpec {
    match spec {
        EventSpec::Primitive { .. } => spec.clone(),
        EventSpec::Composite { op, operands } => {
            let mut flat = Vec::new();
            for operand in operands {
                let n = normalize_inner(operand);
                match n {
                    EventSpec::Composite {
                        op: inner_op,
                        operands: inner,
                    } if inner_op == *op && *op != CompositeOp::Seq => {
                        flat.extend(inner);
                    }
                    other => flat.push(other),
                }
            }
            EventSpec::Composite {
                op: *op,
                operands: flat,
            }
        }
    }
}
