//! Minimal XML parser and serializer for the store's formats.
//!
//! Supported: elements, attributes (single or double quoted), character
//! data with the five predefined entities, comments, an optional
//! declaration and DOCTYPE (both skipped). Not supported: namespaces,
//! CDATA sections, user-defined entities, processing instructions beyond
//! the declaration. Every input yields a `DocTree` or a `Malformed` error;
//! parsing never panics.

use std::fmt::Write as _;

use crate::model::{DocTree, Element, Node};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("MALFORMED({line},{col}): {reason}")]
pub struct Malformed {
    pub line: u32,
    pub col: u32,
    pub reason: String,
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Parser<'a> {
    fn new(input: &'a [u8]) -> Parser<'a> {
        Parser {
            input,
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn err(&self, reason: impl Into<String>) -> Malformed {
        Malformed {
            line: self.line,
            col: self.col,
            reason: reason.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        self.input[self.pos..].starts_with(s.as_bytes())
    }

    fn bump_byte(&mut self) {
        if let Some(b) = self.peek() {
            self.pos += 1;
            if b == b'\n' {
                self.line += 1;
                self.col = 1;
            } else if b & 0xc0 != 0x80 {
                // count characters, not UTF-8 continuation bytes
                self.col += 1;
            }
        }
    }

    fn bump_n(&mut self, n: usize) {
        for _ in 0..n {
            self.bump_byte();
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.bump_byte();
        }
    }

    /// Reads one char (validated UTF-8) without consuming.
    fn peek_char(&self) -> Result<Option<char>, Malformed> {
        if self.pos >= self.input.len() {
            return Ok(None);
        }
        let rest = &self.input[self.pos..];
        let len = utf8_len(rest[0]).ok_or_else(|| self.err("invalid UTF-8"))?;
        if rest.len() < len {
            return Err(self.err("truncated UTF-8 sequence"));
        }
        let s = std::str::from_utf8(&rest[..len]).map_err(|_| self.err("invalid UTF-8"))?;
        Ok(s.chars().next())
    }

    fn name(&mut self) -> Result<String, Malformed> {
        let mut out = String::new();
        match self.peek_char()? {
            Some(c) if is_name_start(c) => {
                out.push(c);
                self.bump_n(c.len_utf8());
            }
            _ => return Err(self.err("expected name")),
        }
        while let Some(c) = self.peek_char()? {
            if is_name_char(c) {
                out.push(c);
                self.bump_n(c.len_utf8());
            } else {
                break;
            }
        }
        Ok(out)
    }

    fn expect(&mut self, b: u8) -> Result<(), Malformed> {
        if self.peek() == Some(b) {
            self.bump_byte();
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", b as char)))
        }
    }

    fn entity(&mut self) -> Result<char, Malformed> {
        // positioned at '&'
        self.bump_byte();
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b == b';' {
                let name = std::str::from_utf8(&self.input[start..self.pos])
                    .map_err(|_| self.err("invalid UTF-8 in entity"))?;
                let c = match name {
                    "amp" => '&',
                    "lt" => '<',
                    "gt" => '>',
                    "apos" => '\'',
                    "quot" => '"',
                    other => return Err(self.err(format!("unknown entity &{other};"))),
                };
                self.bump_byte();
                return Ok(c);
            }
            if self.pos - start > 8 {
                break;
            }
            self.bump_byte();
        }
        Err(self.err("unterminated entity reference"))
    }

    fn attr_value(&mut self) -> Result<String, Malformed> {
        let quote = match self.peek() {
            Some(q @ (b'"' | b'\'')) => q,
            _ => return Err(self.err("expected quoted attribute value")),
        };
        self.bump_byte();
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated attribute value")),
                Some(b) if b == quote => {
                    self.bump_byte();
                    return Ok(out);
                }
                Some(b'<') => return Err(self.err("'<' in attribute value")),
                Some(b'&') => out.push(self.entity()?),
                Some(_) => {
                    let c = self
                        .peek_char()?
                        .ok_or_else(|| self.err("unexpected end of input"))?;
                    out.push(c);
                    self.bump_n(c.len_utf8());
                }
            }
        }
    }

    fn comment(&mut self) -> Result<(), Malformed> {
        // positioned after "<!--"
        while self.pos < self.input.len() {
            if self.starts_with("-->") {
                self.bump_n(3);
                return Ok(());
            }
            self.bump_byte();
        }
        Err(self.err("unterminated comment"))
    }

    fn doctype(&mut self) -> Result<(), Malformed> {
        // positioned after "<!DOCTYPE"; skip to matching '>', allowing one
        // bracketed internal subset
        let mut in_subset = false;
        while let Some(b) = self.peek() {
            match b {
                b'[' => in_subset = true,
                b']' => in_subset = false,
                b'>' if !in_subset => {
                    self.bump_byte();
                    return Ok(());
                }
                _ => {}
            }
            self.bump_byte();
        }
        Err(self.err("unterminated DOCTYPE"))
    }

    fn misc(&mut self) -> Result<(), Malformed> {
        loop {
            self.skip_ws();
            if self.starts_with("<!--") {
                self.bump_n(4);
                self.comment()?;
            } else if self.starts_with("<?") {
                self.bump_n(2);
                while self.pos < self.input.len() && !self.starts_with("?>") {
                    self.bump_byte();
                }
                if !self.starts_with("?>") {
                    return Err(self.err("unterminated processing instruction"));
                }
                self.bump_n(2);
            } else if self.starts_with("<!DOCTYPE") {
                self.bump_n(9);
                self.doctype()?;
            } else {
                return Ok(());
            }
        }
    }

    fn element(&mut self) -> Result<Element, Malformed> {
        self.expect(b'<')?;
        let name = self.name()?;
        let mut elem = Element::new(name);
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'>') => {
                    self.bump_byte();
                    break;
                }
                Some(b'/') => {
                    self.bump_byte();
                    self.expect(b'>')?;
                    return Ok(elem);
                }
                Some(_) => {
                    let attr = self.name()?;
                    if elem.attr(&attr).is_some() {
                        return Err(self.err(format!("duplicate attribute {attr:?}")));
                    }
                    self.skip_ws();
                    self.expect(b'=')?;
                    self.skip_ws();
                    let value = self.attr_value()?;
                    elem.attributes.push((attr, value));
                }
                None => return Err(self.err("unterminated start tag")),
            }
        }
        // content
        let mut text = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err(format!("unclosed element <{}>", elem.name))),
                Some(b'<') => {
                    if !text.is_empty() {
                        elem.children.push(Node::Text(std::mem::take(&mut text)));
                    }
                    if self.starts_with("</") {
                        self.bump_n(2);
                        let close = self.name()?;
                        if close != elem.name {
                            return Err(self.err(format!(
                                "mismatched close tag </{}> for <{}>",
                                close, elem.name
                            )));
                        }
                        self.skip_ws();
                        self.expect(b'>')?;
                        return Ok(elem);
                    } else if self.starts_with("<!--") {
                        self.bump_n(4);
                        self.comment()?;
                    } else if self.starts_with("<![CDATA[") {
                        return Err(self.err("CDATA sections are not supported"));
                    } else if self.starts_with("<!") || self.starts_with("<?") {
                        return Err(self.err("markup declaration inside element content"));
                    } else {
                        let child = self.element()?;
                        elem.children.push(Node::Element(child));
                    }
                }
                Some(b'&') => text.push(self.entity()?),
                Some(b'>') => {
                    text.push('>');
                    self.bump_byte();
                }
                Some(_) => {
                    let c = self
                        .peek_char()?
                        .ok_or_else(|| self.err("unexpected end of input"))?;
                    text.push(c);
                    self.bump_n(c.len_utf8());
                }
            }
        }
    }

    fn document(&mut self) -> Result<DocTree, Malformed> {
        // optional UTF-8 BOM
        if self.input.starts_with(&[0xef, 0xbb, 0xbf]) {
            self.bump_n(3);
        }
        self.misc()?;
        if self.peek() != Some(b'<') {
            return Err(self.err("expected root element"));
        }
        let root = self.element()?;
        self.misc()?;
        if self.pos != self.input.len() {
            return Err(self.err("content after root element"));
        }
        Ok(DocTree::new(root))
    }
}

fn utf8_len(b: u8) -> Option<usize> {
    match b {
        0x00..=0x7f => Some(1),
        0xc2..=0xdf => Some(2),
        0xe0..=0xef => Some(3),
        0xf0..=0xf4 => Some(4),
        _ => None,
    }
}

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
}

/// Parses a byte sequence into an element tree, preserving child order,
/// attribute order and text runs.
pub fn parse_document(bytes: &[u8]) -> Result<DocTree, Malformed> {
    Parser::new(bytes).document()
}

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
}

fn write_element(elem: &Element, out: &mut String) {
    let _ = write!(out, "<{}", elem.name);
    for (name, value) in &elem.attributes {
        let _ = write!(out, " {name}=\"");
        escape_attr(value, out);
        out.push('"');
    }
    if elem.children.is_empty() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    for child in &elem.children {
        match child {
            Node::Element(e) => write_element(e, out),
            Node::Text(t) => escape_text(t, out),
        }
    }
    let _ = write!(out, "</{}>", elem.name);
}

/// Serializes one element subtree, without a declaration.
pub fn serialize_element(elem: &Element) -> String {
    let mut out = String::new();
    write_element(elem, &mut out);
    out
}

/// Serializes a whole document with an XML declaration and trailing newline.
pub fn serialize_document(doc: &DocTree) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    write_element(&doc.root, &mut out);
    out.push('\n');
    out
}
