//! Codecs between the store's XML file formats and the core value types,
//! plus embedded-rule acquisition from client documents.
//!
//! Canonical element names are English (`rule`, `event`, `composite`,
//! `condition`, `query`, `action`); a fixed set of French aliases is
//! accepted at parse time and mapped 1:1.

use crate::model::{
    validate_rule, Action, ActionOp, Condition, DocMeta, DocTree, Element, EventKind,
    EventOccurrence, EventSpec, CompositeOp, Link, LogEntry, Node, NodeAddress, Origin,
    PathQuery, Rule, ValidationReport,
};
use crate::path::parse_path;
use crate::xml::parser::{parse_document, serialize_document, Malformed};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error(transparent)]
    Malformed(#[from] Malformed),
    #[error("SCHEMA({path}): {reason}")]
    Schema { path: String, reason: String },
    #[error("DUPLICATE_RULE_ID: {0}")]
    DuplicateRuleId(String),
    #[error("DUPLICATE_LINK_ID: {0}")]
    DuplicateLinkId(String),
    #[error("DUPLICATE_DOC_ID: {0}")]
    DuplicateDocId(String),
    #[error("BAD_HREF: {0}")]
    BadHref(String),
    #[error("NO_DESTINATION: link {0}")]
    NoDestination(String),
    #[error("BAD_DATE: {0}")]
    BadDate(String),
    #[error("BAD_VERSION: {0}")]
    BadVersion(String),
    #[error("invalid rule: {}", format_report(.0))]
    Invalid(ValidationReport),
}

fn format_report(report: &ValidationReport) -> String {
    report
        .violations
        .iter()
        .map(|v| format!("{} ({})", v.code, v.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> CodecError {
    CodecError::Schema {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Maps the paper's French element names onto the canonical schema.
pub fn canonical_name(name: &str) -> &str {
    match name {
        "REGLE" | "Règle" | "règle" => "rule",
        "règles" | "REGLES" => "rules",
        "événement" | "Événement" | "evenement" => "event",
        "Condition" => "condition",
        "requête" | "Requête" => "query",
        "Action" => "action",
        "Origine" | "origine" => "origin",
        "Destination" => "destination",
        other => other,
    }
}

fn child_elements<'a>(elem: &'a Element, path: &str) -> Result<Vec<&'a Element>, CodecError> {
    let mut out = Vec::new();
    for child in &elem.children {
        match child {
            Node::Element(e) => out.push(e),
            Node::Text(t) if t.trim().is_empty() => {}
            Node::Text(t) => {
                return Err(schema(path, format!("unexpected text {:?}", t.trim())));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// rules

fn parse_event_spec(elem: &Element, path: &str) -> Result<EventSpec, CodecError> {
    match canonical_name(&elem.name) {
        "event" => {
            let kind = elem
                .attr("kind")
                .ok_or_else(|| schema(path, "event requires a kind attribute"))?;
            let kind = EventKind::parse(kind)
                .ok_or_else(|| schema(path, format!("unknown event kind {kind:?}")))?;
            let target = match elem.attr("target") {
                Some(t) => Some(
                    parse_path(t).map_err(|e| schema(path, format!("bad target: {e}")))?,
                ),
                None => None,
            };
            if !child_elements(elem, path)?.is_empty() {
                return Err(schema(path, "event elements have no children"));
            }
            Ok(EventSpec::Primitive { kind, target })
        }
        "composite" => {
            let op = elem
                .attr("op")
                .ok_or_else(|| schema(path, "composite requires an op attribute"))?;
            let op = CompositeOp::parse(op)
                .ok_or_else(|| schema(path, format!("unknown composite op {op:?}")))?;
            let mut operands = Vec::new();
            for (i, child) in child_elements(elem, path)?.into_iter().enumerate() {
                let child_path = format!("{path}/{}[{i}]", canonical_name(&child.name));
                operands.push(parse_event_spec(child, &child_path)?);
            }
            Ok(EventSpec::Composite { op, operands })
        }
        other => Err(schema(path, format!("expected event or composite, got {other:?}"))),
    }
}

fn parse_condition(elem: &Element, path: &str, cond: &mut Condition) -> Result<(), CodecError> {
    for (i, child) in child_elements(elem, path)?.into_iter().enumerate() {
        let child_path = format!("{path}/query[{i}]");
        if canonical_name(&child.name) != "query" {
            return Err(schema(&child_path, format!("expected query, got {:?}", child.name)));
        }
        let text = child.text();
        let expr = parse_path(text.trim())
            .map_err(|e| schema(&child_path, format!("bad query path: {e}")))?;
        cond.queries.push(PathQuery {
            scope: child.attr("doc").map(str::to_string),
            expr,
        });
    }
    Ok(())
}

fn parse_action_op(elem: &Element, path: &str) -> Result<ActionOp, CodecError> {
    let kind = elem
        .attr("kind")
        .ok_or_else(|| schema(path, "action requires a kind attribute"))?;
    let kind = EventKind::parse(kind)
        .ok_or_else(|| schema(path, format!("unknown action kind {kind:?}")))?;
    let target = elem
        .attr("target")
        .ok_or_else(|| schema(path, "action requires a target attribute"))?;
    let target = parse_path(target).map_err(|e| schema(path, format!("bad target: {e}")))?;
    let destination = match elem.attr("destination") {
        Some(d) => {
            Some(parse_path(d).map_err(|e| schema(path, format!("bad destination: {e}")))?)
        }
        None => None,
    };
    let mut payload = None;
    for child in child_elements(elem, path)? {
        if canonical_name(&child.name) != "payload" {
            return Err(schema(path, format!("unexpected {:?} in action", child.name)));
        }
        if payload.is_some() {
            return Err(schema(path, "action has more than one payload"));
        }
        let inner = child_elements(child, path)?;
        if inner.len() != 1 {
            return Err(schema(path, "payload must contain exactly one element"));
        }
        payload = Some(inner[0].clone());
    }
    Ok(ActionOp {
        kind,
        target,
        payload,
        destination,
    })
}

/// Parses a rule from its element tree. The root must be `rule` (or a paper
/// alias). The parsed rule passes `validate_rule`; semantic violations are
/// propagated as `Invalid`.
pub fn parse_rule(tree: &DocTree) -> Result<Rule, CodecError> {
    parse_rule_element(&tree.root, "/rule")
}

fn parse_rule_element(root: &Element, path: &str) -> Result<Rule, CodecError> {
    if canonical_name(&root.name) != "rule" {
        return Err(schema(path, format!("expected rule root, got {:?}", root.name)));
    }
    let id = root
        .attr("id")
        .ok_or_else(|| schema(path, "rule requires an id attribute"))?
        .to_string();
    let mut event: Option<EventSpec> = None;
    let mut condition = Condition::default();
    let mut ops = Vec::new();
    for (i, child) in child_elements(root, path)?.into_iter().enumerate() {
        let name = canonical_name(&child.name);
        let child_path = format!("{path}/{name}[{i}]");
        match name {
            "event" | "composite" => {
                if event.is_some() {
                    return Err(schema(&child_path, "rule has more than one event specification"));
                }
                event = Some(parse_event_spec(child, &child_path)?);
            }
            "condition" => parse_condition(child, &child_path, &mut condition)?,
            "action" => ops.push(parse_action_op(child, &child_path)?),
            other => return Err(schema(&child_path, format!("unknown element {other:?}"))),
        }
    }
    let event = event.ok_or_else(|| schema(path, "rule has no event specification"))?;
    let rule = Rule {
        id,
        event,
        condition,
        action: Action { ops },
    };
    let report = validate_rule(&rule);
    if !report.is_valid() {
        return Err(CodecError::Invalid(report));
    }
    Ok(rule)
}

fn event_spec_element(spec: &EventSpec) -> Element {
    match spec {
        EventSpec::Primitive { kind, target } => {
            let mut e = Element::new("event");
            e.set_attr("kind", kind.as_str());
            if let Some(t) = target {
                e.set_attr("target", t.to_string());
            }
            e
        }
        EventSpec::Composite { op, operands } => {
            let mut e = Element::new("composite");
            e.set_attr("op", op.as_str());
            for operand in operands {
                e.children.push(Node::Element(event_spec_element(operand)));
            }
            e
        }
    }
}

/// Serializes a valid rule into its canonical element tree. The event
/// specification is normalized first, so same-operator And/Or nests come
/// out flat.
pub fn serialize_rule(rule: &Rule) -> DocTree {
    let mut root = Element::new("rule");
    root.set_attr("id", rule.id.clone());
    let spec = crate::model::normalize_event_spec(&rule.event).unwrap_or_else(|_| rule.event.clone());
    root.children.push(Node::Element(event_spec_element(&spec)));
    if !rule.condition.queries.is_empty() {
        let mut cond = Element::new("condition");
        for query in &rule.condition.queries {
            let mut q = Element::new("query");
            if let Some(scope) = &query.scope {
                q.set_attr("doc", scope.clone());
            }
            q.children.push(Node::Text(query.expr.to_string()));
            cond.children.push(Node::Element(q));
        }
        root.children.push(Node::Element(cond));
    }
    for op in &rule.action.ops {
        let mut a = Element::new("action");
        a.set_attr("kind", op.kind.as_str());
        a.set_attr("target", op.target.to_string());
        if let Some(d) = &op.destination {
            a.set_attr("destination", d.to_string());
        }
        if let Some(p) = &op.payload {
            let mut payload = Element::new("payload");
            payload.children.push(Node::Element(p.clone()));
            a.children.push(Node::Element(payload));
        }
        root.children.push(Node::Element(a));
    }
    DocTree::new(root)
}

/// An ordered rule base; order is firing order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleFile {
    pub rules: Vec<Rule>,
}

impl RuleFile {
    pub fn find(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }
}

pub fn parse_rule_file(bytes: &[u8]) -> Result<RuleFile, CodecError> {
    let doc = parse_document(bytes)?;
    if canonical_name(&doc.root.name) != "rules" {
        return Err(schema("/", format!("expected rules root, got {:?}", doc.root.name)));
    }
    let mut file = RuleFile::default();
    for (i, child) in child_elements(&doc.root, "/rules")?.into_iter().enumerate() {
        let rule = parse_rule_element(child, &format!("/rules/rule[{i}]"))?;
        if file.find(&rule.id).is_some() {
            return Err(CodecError::DuplicateRuleId(rule.id));
        }
        file.rules.push(rule);
    }
    Ok(file)
}

pub fn serialize_rule_file(file: &RuleFile) -> String {
    let mut root = Element::new("rules");
    for rule in &file.rules {
        root.children.push(Node::Element(serialize_rule(rule).root));
    }
    serialize_document(&DocTree::new(root))
}

// ---------------------------------------------------------------------------
// links

pub fn parse_link_file(bytes: &[u8]) -> Result<Vec<Link>, CodecError> {
    let doc = parse_document(bytes)?;
    if canonical_name(&doc.root.name) != "links" {
        return Err(schema("/", format!("expected links root, got {:?}", doc.root.name)));
    }
    let mut links: Vec<Link> = Vec::new();
    for (i, child) in child_elements(&doc.root, "/links")?.into_iter().enumerate() {
        let path = format!("/links/link[{i}]");
        if canonical_name(&child.name) != "link" {
            return Err(schema(&path, format!("expected link, got {:?}", child.name)));
        }
        let link_id = child
            .attr("id")
            .ok_or_else(|| schema(&path, "link requires an id attribute"))?
            .to_string();
        if links.iter().any(|l| l.link_id == link_id) {
            return Err(CodecError::DuplicateLinkId(link_id));
        }
        let mut origin = None;
        let mut destinations = Vec::new();
        for endpoint in child_elements(child, &path)? {
            let href = endpoint
                .attr("href")
                .ok_or_else(|| schema(&path, "endpoint requires an href attribute"))?;
            let addr = NodeAddress::parse_href(href)
                .ok_or_else(|| CodecError::BadHref(href.to_string()))?;
            match canonical_name(&endpoint.name) {
                "origin" => {
                    if origin.is_some() {
                        return Err(schema(&path, "link has more than one origin"));
                    }
                    origin = Some(addr);
                }
                "destination" => destinations.push(addr),
                other => return Err(schema(&path, format!("unknown element {other:?}"))),
            }
        }
        let origin = origin.ok_or_else(|| schema(&path, "link has no origin"))?;
        if destinations.is_empty() {
            return Err(CodecError::NoDestination(link_id));
        }
        links.push(Link {
            link_id,
            origin,
            destinations,
        });
    }
    Ok(links)
}

pub fn serialize_link_file(links: &[Link]) -> String {
    let mut root = Element::new("links");
    for link in links {
        let mut l = Element::new("link");
        l.set_attr("id", link.link_id.clone());
        let mut o = Element::new("origin");
        o.set_attr("href", link.origin.to_href());
        l.children.push(Node::Element(o));
        for dest in &link.destinations {
            let mut d = Element::new("destination");
            d.set_attr("href", dest.to_href());
            l.children.push(Node::Element(d));
        }
        root.children.push(Node::Element(l));
    }
    serialize_document(&DocTree::new(root))
}

// ---------------------------------------------------------------------------
// registry

fn valid_iso_date(s: &str) -> bool {
    let bytes = s.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| s[r].bytes().all(|b| b.is_ascii_digit());
    if !digits(0..4) || !digits(5..7) || !digits(8..10) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

pub fn parse_registry(bytes: &[u8]) -> Result<Vec<DocMeta>, CodecError> {
    let doc = parse_document(bytes)?;
    if canonical_name(&doc.root.name) != "documents" {
        return Err(schema("/", format!("expected documents root, got {:?}", doc.root.name)));
    }
    let mut metas: Vec<DocMeta> = Vec::new();
    for (i, child) in child_elements(&doc.root, "/documents")?.into_iter().enumerate() {
        let path = format!("/documents/document[{i}]");
        if canonical_name(&child.name) != "document" {
            return Err(schema(&path, format!("expected document, got {:?}", child.name)));
        }
        let doc_id = child
            .attr("id")
            .ok_or_else(|| schema(&path, "document requires an id attribute"))?
            .to_string();
        if metas.iter().any(|m| m.doc_id == doc_id) {
            return Err(CodecError::DuplicateDocId(doc_id));
        }
        let mut name = None;
        let mut created = None;
        let mut version = None;
        let mut author = None;
        for field in child_elements(child, &path)? {
            let text = field.text();
            match canonical_name(&field.name) {
                "name" => name = Some(text),
                "created" => created = Some(text),
                "version" => version = Some(text),
                "author" => author = Some(text),
                other => return Err(schema(&path, format!("unknown field {other:?}"))),
            }
        }
        let created = created.ok_or_else(|| schema(&path, "missing created"))?;
        if !valid_iso_date(&created) {
            return Err(CodecError::BadDate(created));
        }
        let version_text = version.ok_or_else(|| schema(&path, "missing version"))?;
        let version: u32 = version_text
            .parse()
            .map_err(|_| CodecError::BadVersion(version_text.clone()))?;
        if version == 0 {
            return Err(CodecError::BadVersion(version_text));
        }
        metas.push(DocMeta {
            doc_id,
            name: name.ok_or_else(|| schema(&path, "missing name"))?,
            created,
            version,
            author: author.ok_or_else(|| schema(&path, "missing author"))?,
        });
    }
    Ok(metas)
}

pub fn serialize_registry(metas: &[DocMeta]) -> String {
    let mut root = Element::new("documents");
    for meta in metas {
        let mut d = Element::new("document");
        d.set_attr("id", meta.doc_id.clone());
        for (field, value) in [
            ("name", meta.name.clone()),
            ("created", meta.created.clone()),
            ("version", meta.version.to_string()),
            ("author", meta.author.clone()),
        ] {
            let mut f = Element::new(field);
            if !value.is_empty() {
                f.children.push(Node::Text(value));
            }
            root_child_push(&mut d, f);
        }
        root.children.push(Node::Element(d));
    }
    serialize_document(&DocTree::new(root))
}

fn root_child_push(parent: &mut Element, child: Element) {
    parent.children.push(Node::Element(child));
}

// ---------------------------------------------------------------------------
// event log

pub fn parse_log(bytes: &[u8]) -> Result<Vec<LogEntry>, CodecError> {
    let doc = parse_document(bytes)?;
    if canonical_name(&doc.root.name) != "log" {
        return Err(schema("/", format!("expected log root, got {:?}", doc.root.name)));
    }
    let mut entries: Vec<LogEntry> = Vec::new();
    for (i, child) in child_elements(&doc.root, "/log")?.into_iter().enumerate() {
        let path = format!("/log/occurrence[{i}]");
        if canonical_name(&child.name) != "occurrence" {
            return Err(schema(&path, format!("expected occurrence, got {:?}", child.name)));
        }
        let attr = |name: &str| {
            child
                .attr(name)
                .map(str::to_string)
                .ok_or_else(|| schema(&path, format!("missing attribute {name:?}")))
        };
        let seq: u64 = attr("seq")?
            .parse()
            .map_err(|_| schema(&path, "bad seq"))?;
        let kind = EventKind::parse(&attr("kind")?)
            .ok_or_else(|| schema(&path, "bad kind"))?;
        let target = NodeAddress::parse_href(&attr("target")?)
            .ok_or_else(|| CodecError::BadHref(attr("target").unwrap_or_default()))?;
        let origin_text = attr("origin")?;
        let origin = if origin_text == "user" {
            Origin::User
        } else if let Some(id) = origin_text.strip_prefix("rule:") {
            Origin::Rule(id.to_string())
        } else {
            return Err(schema(&path, format!("bad origin {origin_text:?}")));
        };
        let cascade_depth: u32 = attr("depth")?
            .parse()
            .map_err(|_| schema(&path, "bad depth"))?;
        if let Some(prev) = entries.last() {
            if seq <= prev.occ.seq {
                return Err(schema(&path, "seq values must be strictly increasing"));
            }
        }
        entries.push(LogEntry {
            occ: EventOccurrence {
                seq,
                kind,
                target,
                origin,
                cascade_depth,
            },
            rolled_back: child.attr("rolled-back") == Some("true"),
        });
    }
    Ok(entries)
}

pub fn serialize_log(entries: &[LogEntry]) -> String {
    let mut root = Element::new("log");
    for entry in entries {
        let mut o = Element::new("occurrence");
        o.set_attr("seq", entry.occ.seq.to_string());
        o.set_attr("kind", entry.occ.kind.as_str());
        o.set_attr("target", entry.occ.target.to_href());
        o.set_attr(
            "origin",
            match &entry.occ.origin {
                Origin::User => "user".to_string(),
                Origin::Rule(id) => format!("rule:{id}"),
            },
        );
        o.set_attr("depth", entry.occ.cascade_depth.to_string());
        if entry.rolled_back {
            o.set_attr("rolled-back", "true");
        }
        root.children.push(Node::Element(o));
    }
    serialize_document(&DocTree::new(root))
}

// ---------------------------------------------------------------------------
// acquisition

/// The result of locating, extracting and stripping embedded rules from a
/// client document.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    /// Rules parsed from removed subtrees, in document order.
    pub rules: Vec<Rule>,
    /// The document with every rule subtree removed.
    pub stripped_doc: DocTree,
    /// Paths (in the original tree) where rule subtrees stood.
    pub removal_sites: Vec<Vec<usize>>,
    /// Per-site parse errors; extraction continues past them.
    pub errors: Vec<(Vec<usize>, CodecError)>,
}

fn is_rule_element(elem: &Element) -> bool {
    matches!(canonical_name(&elem.name), "rule" | "rules")
}

/// Removes every maximal `rule`/`rules` subtree (any depth below the root)
/// and parses each removed rule. A document with no embedded rules comes
/// back unchanged with an empty rule list.
pub fn extract_embedded_rules(doc: &DocTree) -> Result<AcquisitionResult, CodecError> {
    if is_rule_element(&doc.root) {
        return Err(schema("/", "document root is itself a rule element"));
    }
    let mut result = AcquisitionResult {
        rules: Vec::new(),
        stripped_doc: doc.clone(),
        removal_sites: Vec::new(),
        errors: Vec::new(),
    };
    let mut stripped_root = Element {
        name: doc.root.name.clone(),
        attributes: doc.root.attributes.clone(),
        children: Vec::new(),
    };
    strip_element(&doc.root, &mut stripped_root, &mut Vec::new(), &mut result);
    result.stripped_doc = DocTree::new(stripped_root);
    Ok(result)
}

fn strip_element(
    original: &Element,
    stripped: &mut Element,
    path: &mut Vec<usize>,
    result: &mut AcquisitionResult,
) {
    for (i, child) in original.children.iter().enumerate() {
        path.push(i);
        match child {
            Node::Element(e) if is_rule_element(e) => {
                result.removal_sites.push(path.clone());
                collect_rules(e, path, result);
            }
            Node::Element(e) => {
                let mut copy = Element {
                    name: e.name.clone(),
                    attributes: e.attributes.clone(),
                    children: Vec::new(),
                };
                strip_element(e, &mut copy, path, result);
                stripped.children.push(Node::Element(copy));
            }
            Node::Text(t) => stripped.children.push(Node::Text(t.clone())),
        }
        path.pop();
    }
}

fn collect_rules(elem: &Element, path: &[usize], result: &mut AcquisitionResult) {
    match canonical_name(&elem.name) {
        "rule" => match parse_rule_element(elem, "/rule") {
            Ok(rule) => result.rules.push(rule),
            Err(e) => result.errors.push((path.to_vec(), e)),
        },
        "rules" => {
            for child in elem.child_elements() {
                collect_rules(child, path, result);
            }
        }
        _ => result
            .errors
            .push((path.to_vec(), schema("/rules", "expected rule inside rules container"))),
    }
}
