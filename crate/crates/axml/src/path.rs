//! Restricted path-selector language used for event targets, condition
//! queries and action targets.
//!
//! Grammar: `('/' | '//') step (('/' | '//') step)*` where a step is an
//! element name or `*` with an optional predicate of one of three forms:
//! `[@attr='lit']`, `[text()='lit']`, `[n]` (1-based position among the
//! step's name-matched siblings).

use std::collections::BTreeMap;
use std::fmt;

use crate::model::{Condition, DocTree, Element, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Child,
    Descendant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NameTest {
    Name(String),
    Wildcard,
}

impl NameTest {
    fn matches(&self, name: &str) -> bool {
        match self {
            NameTest::Name(n) => n == name,
            NameTest::Wildcard => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    AttrEq { name: String, value: String },
    TextEq { value: String },
    Position(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub axis: Axis,
    pub name: NameTest,
    pub predicate: Option<Predicate>,
}

/// A parsed path expression. Always absolute: evaluation starts at the
/// virtual document node whose single child is the root element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathExpr {
    pub steps: Vec<Step>,
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            f.write_str(match step.axis {
                Axis::Child => "/",
                Axis::Descendant => "//",
            })?;
            match &step.name {
                NameTest::Name(n) => f.write_str(n)?,
                NameTest::Wildcard => f.write_str("*")?,
            }
            match &step.predicate {
                None => {}
                Some(Predicate::AttrEq { name, value }) => {
                    write!(f, "[@{name}='{value}']")?;
                }
                Some(Predicate::TextEq { value }) => write!(f, "[text()='{value}']")?,
                Some(Predicate::Position(p)) => write!(f, "[{p}]")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("PATH_SYNTAX at {pos}: {reason}")]
pub struct PathSyntax {
    pub pos: usize,
    pub reason: String,
}

fn err(pos: usize, reason: impl Into<String>) -> PathSyntax {
    PathSyntax {
        pos,
        reason: reason.into(),
    }
}

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
}

struct PathParser<'a> {
    chars: Vec<char>,
    pos: usize,
    text: &'a str,
}

impl<'a> PathParser<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn name(&mut self) -> Result<String, PathSyntax> {
        let start = self.pos;
        match self.peek() {
            Some(c) if is_name_start(c) => self.pos += 1,
            _ => return Err(err(start, "expected name")),
        }
        while matches!(self.peek(), Some(c) if is_name_char(c)) {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn literal(&mut self) -> Result<String, PathSyntax> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(err(self.pos, "expected quoted literal")),
        };
        self.pos += 1;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == quote {
                let lit: String = self.chars[start..self.pos].iter().collect();
                self.pos += 1;
                return Ok(lit);
            }
            self.pos += 1;
        }
        Err(err(start, "unterminated literal"))
    }

    fn predicate(&mut self) -> Result<Predicate, PathSyntax> {
        let pred = if self.eat('@') {
            let name = self.name()?;
            if !self.eat('=') {
                return Err(err(self.pos, "expected '=' in attribute predicate"));
            }
            let value = self.literal()?;
            Predicate::AttrEq { name, value }
        } else if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            let digits: String = self.chars[start..self.pos].iter().collect();
            let n: usize = digits
                .parse()
                .map_err(|_| err(start, "position out of range"))?;
            if n == 0 {
                return Err(err(start, "position predicate must be >= 1"));
            }
            Predicate::Position(n)
        } else {
            // text()='lit'
            let start = self.pos;
            let name = self.name()?;
            if name != "text" || !self.eat('(') || !self.eat(')') {
                return Err(err(start, "expected @attr, position, or text()"));
            }
            if !self.eat('=') {
                return Err(err(self.pos, "expected '=' after text()"));
            }
            Predicate::TextEq {
                value: self.literal()?,
            }
        };
        if !self.eat(']') {
            return Err(err(self.pos, "expected ']'"));
        }
        Ok(pred)
    }

    fn step(&mut self) -> Result<Step, PathSyntax> {
        let axis = if self.eat('/') {
            Axis::Descendant
        } else {
            Axis::Child
        };
        let name = if self.eat('*') {
            NameTest::Wildcard
        } else {
            NameTest::Name(self.name()?)
        };
        let predicate = if self.eat('[') {
            Some(self.predicate()?)
        } else {
            None
        };
        Ok(Step {
            axis,
            name,
            predicate,
        })
    }

    fn parse(&mut self) -> Result<PathExpr, PathSyntax> {
        if !self.eat('/') {
            return Err(err(0, "path must start with '/' or '//'"));
        }
        let mut steps = vec![self.step()?];
        while self.eat('/') {
            steps.push(self.step()?);
        }
        if self.pos != self.chars.len() {
            return Err(err(
                self.pos,
                format!("unexpected trailing input in {:?}", self.text),
            ));
        }
        Ok(PathExpr { steps })
    }
}

pub fn parse_path(text: &str) -> Result<PathExpr, PathSyntax> {
    PathParser {
        chars: text.chars().collect(),
        pos: 0,
        text,
    }
    .parse()
}

/// Evaluates a path over one document. Returns element paths (child-index
/// vectors) in document order, duplicate-free.
pub fn eval_path(expr: &PathExpr, doc: &DocTree) -> Vec<Vec<usize>> {
    // context set starts as {virtual document node}, represented by None
    let mut context: Vec<Option<Vec<usize>>> = vec![None];
    for step in &expr.steps {
        let mut next: Vec<Vec<usize>> = Vec::new();
        for ctx in &context {
            match step.axis {
                Axis::Child => {
                    collect_children(doc, ctx.as_deref(), step, &mut next);
                }
                Axis::Descendant => {
                    collect_descendants(doc, ctx.as_deref(), step, &mut next);
                }
            }
        }
        next.sort();
        next.dedup();
        context = next.into_iter().map(Some).collect();
    }
    context.into_iter().flatten().collect()
}

fn collect_children(doc: &DocTree, ctx: Option<&[usize]>, step: &Step, out: &mut Vec<Vec<usize>>) {
    match ctx {
        None => {
            // document node: single child, the root element
            if step_matches(doc, &[], step) {
                out.push(Vec::new());
            }
        }
        Some(path) => {
            let Some(elem) = doc.resolve_element(path) else {
                return;
            };
            for (i, child) in elem.children.iter().enumerate() {
                if matches!(child, Node::Element(_)) {
                    let mut p = path.to_vec();
                    p.push(i);
                    if step_matches(doc, &p, step) {
                        out.push(p);
                    }
                }
            }
        }
    }
}

fn collect_descendants(
    doc: &DocTree,
    ctx: Option<&[usize]>,
    step: &Step,
    out: &mut Vec<Vec<usize>>,
) {
    // descendant-or-self within children: `//n` from a context node selects
    // every element strictly below it; from the document node the root
    // element is included.
    match ctx {
        None => {
            if step_matches(doc, &[], step) {
                out.push(Vec::new());
            }
            descend(doc, &doc.root, &[], step, out);
        }
        Some(path) => {
            if let Some(elem) = doc.resolve_element(path) {
                descend(doc, elem, path, step, out);
            }
        }
    }
}

fn descend(doc: &DocTree, elem: &Element, path: &[usize], step: &Step, out: &mut Vec<Vec<usize>>) {
    for (i, child) in elem.children.iter().enumerate() {
        if let Node::Element(e) = child {
            let mut p = path.to_vec();
            p.push(i);
            if step_matches(doc, &p, step) {
                out.push(p.clone());
            }
            descend(doc, e, &p, step, out);
        }
    }
}

fn step_matches(doc: &DocTree, path: &[usize], step: &Step) -> bool {
    let Some(elem) = doc.resolve_element(path) else {
        return false;
    };
    if !step.name.matches(&elem.name) {
        return false;
    }
    match &step.predicate {
        None => true,
        Some(Predicate::AttrEq { name, value }) => elem.attr(name) == Some(value.as_str()),
        Some(Predicate::TextEq { value }) => elem.text() == *value,
        Some(Predicate::Position(n)) => position_among_matches(doc, path, &step.name) == *n,
    }
}

/// 1-based index of the element among its parent's children that pass this
/// step's name test. The root is always at position 1.
fn position_among_matches(doc: &DocTree, path: &[usize], name: &NameTest) -> usize {
    let Some((&last, parent_path)) = path.split_last() else {
        return 1;
    };
    let parent = doc
        .resolve_element(parent_path)
        .expect("parent of a resolved path resolves");
    let mut pos = 0;
    for (i, child) in parent.children.iter().enumerate() {
        if let Node::Element(e) = child {
            if name.matches(&e.name) {
                pos += 1;
            }
            if i == last {
                return pos;
            }
        }
    }
    pos
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("UNKNOWN_DOC: {0}")]
pub struct UnknownDoc(pub String);

/// Conjunction semantics: true iff every query returns a non-empty node set
/// over its scoped document, or over every stored document when unscoped.
/// The empty query list is vacuously true.
pub fn eval_condition<D: AsRef<DocTree>>(
    cond: &Condition,
    docs: &BTreeMap<String, D>,
) -> Result<bool, UnknownDoc> {
    for query in &cond.queries {
        let non_empty = match &query.scope {
            Some(doc_id) => {
                let doc = docs
                    .get(doc_id)
                    .ok_or_else(|| UnknownDoc(doc_id.clone()))?;
                !eval_path(&query.expr, doc.as_ref()).is_empty()
            }
            None => docs
                .values()
                .any(|doc| !eval_path(&query.expr, doc.as_ref()).is_empty()),
        };
        if !non_empty {
            return Ok(false);
        }
    }
    Ok(true)
}
