//! The file-backed all-XML storage layer: document base, link base, rule
//! base, metadata indexes and the append-only event log.
//!
//! Layout under the store root: `registry.xml`, `rules.xml`, `links.xml`,
//! `log.xml`, `docs/<doc_id>.xml`, all in the codec formats. Files are
//! flushed atomically (write-temp-then-rename). One writer at a time;
//! readers work on immutable snapshots that survive later mutations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::model::{
    validate_rule, DocMeta, DocTree, EventKind, EventOccurrence, Link, LogEntry,
    MutationOp, Node, NodeAddress, Origin, Rule, ValidationReport,
};
use crate::xml::{
    parse_document, parse_link_file, parse_log, parse_registry, parse_rule_file,
    serialize_document, serialize_link_file, serialize_log, serialize_registry,
    serialize_rule_file, RuleFile,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("IO: {0}")]
    Io(#[from] std::io::Error),
    #[error("STORE_CORRUPT({file}): {reason}")]
    StoreCorrupt { file: String, reason: String },
    #[error("STORE_LOCKED: {0}")]
    StoreLocked(String),
    #[error("DUPLICATE_DOC_ID: {0}")]
    DuplicateDocId(String),
    #[error("DUPLICATE_RULE_ID: {0}")]
    DuplicateRuleId(String),
    #[error("DUPLICATE_LINK_ID: {0}")]
    DuplicateLinkId(String),
    #[error("UNKNOWN_DOC: {0}")]
    UnknownDoc(String),
    #[error("UNKNOWN_RULE: {0}")]
    UnknownRule(String),
    #[error("UNKNOWN_LINK: {0}")]
    UnknownLink(String),
    #[error("UNRESOLVED_TARGET: {0}")]
    UnresolvedTarget(NodeAddress),
    #[error("UNRESOLVED_DESTINATION: {0}")]
    UnresolvedDestination(NodeAddress),
    #[error("MOVE_INTO_SELF: {target} into {destination}")]
    MoveIntoSelf {
        target: NodeAddress,
        destination: NodeAddress,
    },
    #[error("UNRESOLVED_ENDPOINT: {0}")]
    UnresolvedEndpoint(NodeAddress),
    #[error("MISSING_PAYLOAD: {0} requires a payload")]
    MissingPayload(EventKind),
    #[error("MISSING_DESTINATION: move requires a destination")]
    MissingDestination,
    #[error("EMPTY_CRITERIA: search requires at least one criterion")]
    EmptyCriteria,
    #[error("invalid rule: {codes}", codes = .0.violations.iter().map(|v| v.code.as_str()).collect::<Vec<_>>().join(","))]
    InvalidRule(ValidationReport),
}

fn corrupt(file: impl Into<String>, reason: impl std::fmt::Display) -> StoreError {
    StoreError::StoreCorrupt {
        file: file.into(),
        reason: reason.to_string(),
    }
}

/// An immutable view of the document base. Cloning is cheap; mutations in
/// the store after a snapshot is taken do not affect it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub docs: BTreeMap<String, Arc<DocTree>>,
}

impl Snapshot {
    pub fn doc(&self, doc_id: &str) -> Option<&DocTree> {
        self.docs.get(doc_id).map(|d| d.as_ref())
    }
}

/// Metadata indexes, exactly the inversion of the registry fields.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Indexes {
    pub by_name: BTreeMap<String, BTreeSet<String>>,
    pub by_author: BTreeMap<String, BTreeSet<String>>,
    pub by_created: BTreeMap<String, BTreeSet<String>>,
}

impl Indexes {
    fn build(registry: &BTreeMap<String, DocMeta>) -> Indexes {
        let mut idx = Indexes::default();
        for meta in registry.values() {
            idx.insert(meta);
        }
        idx
    }

    fn insert(&mut self, meta: &DocMeta) {
        self.by_name
            .entry(meta.name.clone())
            .or_default()
            .insert(meta.doc_id.clone());
        self.by_author
            .entry(meta.author.clone())
            .or_default()
            .insert(meta.doc_id.clone());
        self.by_created
            .entry(meta.created.clone())
            .or_default()
            .insert(meta.doc_id.clone());
    }

    fn remove(&mut self, meta: &DocMeta) {
        for (map, key) in [
            (&mut self.by_name, &meta.name),
            (&mut self.by_author, &meta.author),
            (&mut self.by_created, &meta.created),
        ] {
            if let Some(set) = map.get_mut(key) {
                set.remove(&meta.doc_id);
                if set.is_empty() {
                    map.remove(key);
                }
            }
        }
    }
}

/// A dangling-endpoint report. Empty iff every link endpoint resolves.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntegrityReport {
    /// Links whose endpoint address no longer resolves inside an existing doc.
    pub dangling_internal: Vec<(String, NodeAddress)>,
    /// Links pointing at a document that is missing entirely.
    pub dangling_external: Vec<(String, String)>,
}

impl IntegrityReport {
    pub fn is_empty(&self) -> bool {
        self.dangling_internal.is_empty() && self.dangling_external.is_empty()
    }
}

/// Conjunction of search criteria over the registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchCriteria {
    pub name: Option<String>,
    pub author: Option<String>,
    pub created_from: Option<String>,
    pub created_to: Option<String>,
    pub version: Option<u32>,
}

impl SearchCriteria {
    pub fn is_empty(&self) -> bool {
        self.name.is_none()
            && self.author.is_none()
            && self.created_from.is_none()
            && self.created_to.is_none()
            && self.version.is_none()
    }
}

/// Deep copy of the mutable store state, for veto rollback.
#[derive(Debug, Clone)]
pub struct StoreState {
    docs: BTreeMap<String, Arc<DocTree>>,
    registry: BTreeMap<String, DocMeta>,
    links: Vec<Link>,
    rules: RuleFile,
}

pub struct Store {
    root: PathBuf,
    docs: BTreeMap<String, Arc<DocTree>>,
    registry: BTreeMap<String, DocMeta>,
    links: Vec<Link>,
    rules: RuleFile,
    log: Vec<LogEntry>,
    indexes: Indexes,
    next_seq: u64,
    dirty_docs: BTreeSet<String>,
    removed_docs: BTreeSet<String>,
    dirty_meta: bool,
}

impl Store {
    /// Creates a fresh empty store at `path` and writes its files.
    pub fn init(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = path.as_ref().to_path_buf();
        fs::create_dir_all(root.join("docs"))?;
        let mut store = Store {
            root,
            docs: BTreeMap::new(),
            registry: BTreeMap::new(),
            links: Vec::new(),
            rules: RuleFile::default(),
            log: Vec::new(),
            indexes: Indexes::default(),
            next_seq: 1,
            dirty_docs: BTreeSet::new(),
            removed_docs: BTreeSet::new(),
            dirty_meta: true,
        };
        store.flush()?;
        Ok(store)
    }

    /// Opens an existing store, loading every file up front.
    pub fn open(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = path.as_ref().to_path_buf();
        let read = |name: &str| -> Result<Vec<u8>, StoreError> {
            fs::read(root.join(name)).map_err(|e| corrupt(name, e))
        };
        let registry_list =
            parse_registry(&read("registry.xml")?).map_err(|e| corrupt("registry.xml", e))?;
        let rules = parse_rule_file(&read("rules.xml")?).map_err(|e| corrupt("rules.xml", e))?;
        let links = parse_link_file(&read("links.xml")?).map_err(|e| corrupt("links.xml", e))?;
        let log = parse_log(&read("log.xml")?).map_err(|e| corrupt("log.xml", e))?;

        let mut registry = BTreeMap::new();
        let mut docs = BTreeMap::new();
        for meta in registry_list {
            let file = format!("docs/{}.xml", meta.doc_id);
            let tree = parse_document(&read(&file)?).map_err(|e| corrupt(&file, e))?;
            docs.insert(meta.doc_id.clone(), Arc::new(tree));
            registry.insert(meta.doc_id.clone(), meta);
        }
        let indexes = Indexes::build(&registry);
        let next_seq = log.last().map(|e| e.occ.seq + 1).unwrap_or(1);
        Ok(Store {
            root,
            docs,
            registry,
            links,
            rules,
            log,
            indexes,
            next_seq,
            dirty_docs: BTreeSet::new(),
            removed_docs: BTreeSet::new(),
            dirty_meta: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes every dirty file atomically.
    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.flush_inner(true)
    }

    /// Writes temp files but stops before any rename. The previous on-disk
    /// state stays intact and readable; used to exercise the crash-safety
    /// contract.
    #[doc(hidden)]
    pub fn flush_without_commit(&mut self) -> Result<(), StoreError> {
        self.flush_inner(false)
    }

    fn flush_inner(&mut self, commit: bool) -> Result<(), StoreError> {
        let registry_list: Vec<DocMeta> = self.registry.values().cloned().collect();
        write_atomic(
            &self.root.join("registry.xml"),
            serialize_registry(&registry_list).as_bytes(),
            commit,
        )?;
        write_atomic(
            &self.root.join("rules.xml"),
            serialize_rule_file(&self.rules).as_bytes(),
            commit,
        )?;
        write_atomic(
            &self.root.join("links.xml"),
            serialize_link_file(&self.links).as_bytes(),
            commit,
        )?;
        write_atomic(
            &self.root.join("log.xml"),
            serialize_log(&self.log).as_bytes(),
            commit,
        )?;
        for doc_id in self.dirty_docs.clone() {
            if let Some(tree) = self.docs.get(&doc_id) {
                write_atomic(
                    &self.root.join("docs").join(format!("{doc_id}.xml")),
                    serialize_document(tree).as_bytes(),
                    commit,
                )?;
            }
        }
        if commit {
            for doc_id in &self.removed_docs {
                let path = self.root.join("docs").join(format!("{doc_id}.xml"));
                if path.exists() {
                    fs::remove_file(path)?;
                }
            }
            self.dirty_docs.clear();
            self.removed_docs.clear();
            self.dirty_meta = false;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            docs: self.docs.clone(),
        }
    }

    /// Captures docs, registry, links and rules for a later `restore`.
    /// The event log is excluded: rolled-back occurrences stay logged.
    pub fn state_snapshot(&self) -> StoreState {
        StoreState {
            docs: self.docs.clone(),
            registry: self.registry.clone(),
            links: self.links.clone(),
            rules: self.rules.clone(),
        }
    }

    pub fn restore(&mut self, state: StoreState) {
        // every doc present before or after may differ on disk
        let mut touched: BTreeSet<String> = self.docs.keys().cloned().collect();
        touched.extend(state.docs.keys().cloned());
        self.docs = state.docs;
        self.registry = state.registry;
        self.links = state.links;
        self.rules = state.rules;
        self.indexes = Indexes::build(&self.registry);
        for doc_id in touched {
            if self.docs.contains_key(&doc_id) {
                self.dirty_docs.insert(doc_id.clone());
                self.removed_docs.remove(&doc_id);
            } else {
                self.removed_docs.insert(doc_id.clone());
                self.dirty_docs.remove(&doc_id);
            }
        }
        self.dirty_meta = true;
    }

    /// Marks the log entries with the given seq values as rolled back.
    pub fn mark_rolled_back(&mut self, seqs: &[u64]) {
        for entry in &mut self.log {
            if seqs.contains(&entry.occ.seq) {
                entry.rolled_back = true;
            }
        }
        self.dirty_meta = true;
    }

    fn append_occurrence(
        &mut self,
        kind: EventKind,
        target: NodeAddress,
        origin: Origin,
        cascade_depth: u32,
    ) -> EventOccurrence {
        let occ = EventOccurrence {
            seq: self.next_seq,
            kind,
            target,
            origin,
            cascade_depth,
        };
        self.next_seq += 1;
        self.log.push(LogEntry {
            occ: occ.clone(),
            rolled_back: false,
        });
        self.dirty_meta = true;
        occ
    }

    // -- documents ---------------------------------------------------------

    pub fn registry(&self) -> &BTreeMap<String, DocMeta> {
        &self.registry
    }

    pub fn doc(&self, doc_id: &str) -> Option<&DocTree> {
        self.docs.get(doc_id).map(|d| d.as_ref())
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn indexes(&self) -> &Indexes {
        &self.indexes
    }

    /// Rebuilds the indexes from the registry; used by consistency checks.
    pub fn rebuilt_indexes(&self) -> Indexes {
        Indexes::build(&self.registry)
    }

    /// Stores a new document and logs an Add occurrence on its root.
    pub fn put_document(
        &mut self,
        meta: DocMeta,
        tree: DocTree,
    ) -> Result<EventOccurrence, StoreError> {
        if self.registry.contains_key(&meta.doc_id) {
            return Err(StoreError::DuplicateDocId(meta.doc_id));
        }
        let doc_id = meta.doc_id.clone();
        self.indexes.insert(&meta);
        self.registry.insert(doc_id.clone(), meta);
        self.docs.insert(doc_id.clone(), Arc::new(tree));
        self.dirty_docs.insert(doc_id.clone());
        self.removed_docs.remove(&doc_id);
        self.dirty_meta = true;
        Ok(self.append_occurrence(
            EventKind::Add,
            NodeAddress::root(doc_id),
            Origin::User,
            0,
        ))
    }

    fn bump_version(&mut self, doc_id: &str) {
        if let Some(meta) = self.registry.get_mut(doc_id) {
            meta.version += 1;
        }
    }

    fn remove_document(&mut self, doc_id: &str) {
        if let Some(meta) = self.registry.remove(doc_id) {
            self.indexes.remove(&meta);
        }
        self.docs.remove(doc_id);
        self.dirty_docs.remove(doc_id);
        self.removed_docs.insert(doc_id.to_string());
        self.dirty_meta = true;
    }

    /// Applies one mutation and logs the matching occurrence.
    ///
    /// Update replaces the target subtree with the payload; Add appends the
    /// payload as last child of the target element; Move detaches the target
    /// subtree and appends it under the destination element; Delete removes
    /// the target subtree, or the whole document when targeting its root.
    /// Moving a document root is not supported and reports the target as
    /// unresolved. The target document's version increments.
    pub fn apply_mutation(
        &mut self,
        op: &MutationOp,
        origin: Origin,
        cascade_depth: u32,
    ) -> Result<EventOccurrence, StoreError> {
        let doc_id = op.target.doc_id.clone();
        if !self.docs.contains_key(&doc_id) {
            return Err(StoreError::UnresolvedTarget(op.target.clone()));
        }
        match op.kind {
            EventKind::Update => {
                let payload = op
                    .payload
                    .clone()
                    .ok_or(StoreError::MissingPayload(EventKind::Update))?;
                let tree = Arc::make_mut(self.docs.get_mut(&doc_id).expect("checked"));
                if op.target.path.is_empty() {
                    tree.root = payload;
                } else {
                    let (parent_path, last) = split_parent(&op.target.path);
                    let parent = tree
                        .resolve_element_mut(parent_path)
                        .ok_or_else(|| StoreError::UnresolvedTarget(op.target.clone()))?;
                    if last >= parent.children.len() {
                        return Err(StoreError::UnresolvedTarget(op.target.clone()));
                    }
                    parent.children[last] = Node::Element(payload);
                }
                self.dirty_docs.insert(doc_id.clone());
                self.bump_version(&doc_id);
            }
            EventKind::Add => {
                let payload = op
                    .payload
                    .clone()
                    .ok_or(StoreError::MissingPayload(EventKind::Add))?;
                let tree = Arc::make_mut(self.docs.get_mut(&doc_id).expect("checked"));
                let parent = tree
                    .resolve_element_mut(&op.target.path)
                    .ok_or_else(|| StoreError::UnresolvedTarget(op.target.clone()))?;
                parent.children.push(Node::Element(payload));
                self.dirty_docs.insert(doc_id.clone());
                self.bump_version(&doc_id);
            }
            EventKind::Delete => {
                if op.target.path.is_empty() {
                    self.remove_document(&doc_id);
                } else {
                    let tree = Arc::make_mut(self.docs.get_mut(&doc_id).expect("checked"));
                    let (parent_path, last) = split_parent(&op.target.path);
                    let parent = tree
                        .resolve_element_mut(parent_path)
                        .ok_or_else(|| StoreError::UnresolvedTarget(op.target.clone()))?;
                    if last >= parent.children.len() {
                        return Err(StoreError::UnresolvedTarget(op.target.clone()));
                    }
                    parent.children.remove(last);
                    self.dirty_docs.insert(doc_id.clone());
                    self.bump_version(&doc_id);
                }
            }
            EventKind::Move => {
                let dest = op
                    .destination
                    .clone()
                    .ok_or(StoreError::MissingDestination)?;
                if op.target.path.is_empty() {
                    return Err(StoreError::UnresolvedTarget(op.target.clone()));
                }
                if dest.doc_id == doc_id && dest.path.starts_with(&op.target.path) {
                    return Err(StoreError::MoveIntoSelf {
                        target: op.target.clone(),
                        destination: dest,
                    });
                }
                // both endpoints must resolve before anything is detached
                if !self
                    .docs
                    .get(&doc_id)
                    .map(|t| t.resolves(&op.target.path))
                    .unwrap_or(false)
                {
                    return Err(StoreError::UnresolvedTarget(op.target.clone()));
                }
                let dest_ok = self
                    .docs
                    .get(&dest.doc_id)
                    .map(|t| t.resolve_element(&dest.path).is_some())
                    .unwrap_or(false);
                if !dest_ok {
                    return Err(StoreError::UnresolvedDestination(dest));
                }
                let detached = {
                    let tree = Arc::make_mut(self.docs.get_mut(&doc_id).expect("checked"));
                    let (parent_path, last) = split_parent(&op.target.path);
                    let parent = tree.resolve_element_mut(parent_path).expect("resolved");
                    parent.children.remove(last)
                };
                // destination indexes may shift when both live in one doc
                let dest_path = if dest.doc_id == doc_id {
                    adjust_after_removal(&dest.path, &op.target.path)
                        .ok_or_else(|| StoreError::UnresolvedDestination(dest.clone()))?
                } else {
                    dest.path.clone()
                };
                let dest_tree =
                    Arc::make_mut(self.docs.get_mut(&dest.doc_id).expect("checked above"));
                let parent = dest_tree
                    .resolve_element_mut(&dest_path)
                    .ok_or_else(|| StoreError::UnresolvedDestination(dest.clone()))?;
                parent.children.push(detached);
                self.dirty_docs.insert(doc_id.clone());
                self.dirty_docs.insert(dest.doc_id.clone());
                self.bump_version(&doc_id);
                if dest.doc_id != doc_id {
                    self.bump_version(&dest.doc_id);
                }
            }
        }
        Ok(self.append_occurrence(op.kind, op.target.clone(), origin, cascade_depth))
    }

    // -- links --------------------------------------------------------------

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    fn endpoint_resolves(&self, addr: &NodeAddress) -> bool {
        self.docs
            .get(&addr.doc_id)
            .map(|t| t.resolves(&addr.path))
            .unwrap_or(false)
    }

    pub fn add_link(&mut self, link: Link) -> Result<(), StoreError> {
        if self.links.iter().any(|l| l.link_id == link.link_id) {
            return Err(StoreError::DuplicateLinkId(link.link_id));
        }
        for endpoint in std::iter::once(&link.origin).chain(&link.destinations) {
            if !self.endpoint_resolves(endpoint) {
                return Err(StoreError::UnresolvedEndpoint(endpoint.clone()));
            }
        }
        self.links.push(link);
        self.dirty_meta = true;
        Ok(())
    }

    pub fn remove_link(&mut self, link_id: &str) -> Result<Link, StoreError> {
        let pos = self
            .links
            .iter()
            .position(|l| l.link_id == link_id)
            .ok_or_else(|| StoreError::UnknownLink(link_id.to_string()))?;
        self.dirty_meta = true;
        Ok(self.links.remove(pos))
    }

    pub fn links_from(&self, addr: &NodeAddress) -> Vec<&Link> {
        self.links.iter().filter(|l| &l.origin == addr).collect()
    }

    pub fn links_to(&self, addr: &NodeAddress) -> Vec<&Link> {
        self.links
            .iter()
            .filter(|l| l.destinations.contains(addr))
            .collect()
    }

    /// Pure dangling-endpoint check; origin first, then destinations, in
    /// link order.
    pub fn check_referential_integrity(&self) -> IntegrityReport {
        #[cfg(feature = "parallel")]
        let parts: Vec<IntegrityReport> = self
            .links
            .par_iter()
            .map(|link| self.check_link(link))
            .collect();
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<IntegrityReport> =
            self.links.iter().map(|link| self.check_link(link)).collect();
        merge_reports(parts)
    }

    /// Sequential twin of `check_referential_integrity`; the benchmark
    /// baseline and the fallback when the parallel feature is off.
    pub fn check_referential_integrity_seq(&self) -> IntegrityReport {
        merge_reports(self.links.iter().map(|link| self.check_link(link)).collect())
    }

    fn check_link(&self, link: &Link) -> IntegrityReport {
        let mut report = IntegrityReport::default();
        for endpoint in std::iter::once(&link.origin).chain(&link.destinations) {
            match self.docs.get(&endpoint.doc_id) {
                None => report
                    .dangling_external
                    .push((link.link_id.clone(), endpoint.doc_id.clone())),
                Some(tree) => {
                    if !tree.resolves(&endpoint.path) {
                        report
                            .dangling_internal
                            .push((link.link_id.clone(), endpoint.clone()));
                    }
                }
            }
        }
        report
    }

    /// Removes every link with an unresolvable endpoint. Emits no events.
    pub fn prune_dangling_links(&mut self) -> Vec<Link> {
        let report = self.check_referential_integrity();
        let mut bad: BTreeSet<&String> = report.dangling_external.iter().map(|(l, _)| l).collect();
        bad.extend(report.dangling_internal.iter().map(|(l, _)| l));
        if bad.is_empty() {
            return Vec::new();
        }
        let bad: BTreeSet<String> = bad.into_iter().cloned().collect();
        let mut pruned = Vec::new();
        self.links.retain(|l| {
            if bad.contains(&l.link_id) {
                pruned.push(l.clone());
                false
            } else {
                true
            }
        });
        self.dirty_meta = true;
        pruned
    }

    // -- rule base ----------------------------------------------------------

    pub fn rules(&self) -> &RuleFile {
        &self.rules
    }

    fn require_valid(rule: &Rule) -> Result<(), StoreError> {
        let report = validate_rule(rule);
        if report.is_valid() {
            Ok(())
        } else {
            Err(StoreError::InvalidRule(report))
        }
    }

    pub fn add_rule(&mut self, rule: Rule) -> Result<(), StoreError> {
        Self::require_valid(&rule)?;
        if self.rules.find(&rule.id).is_some() {
            return Err(StoreError::DuplicateRuleId(rule.id));
        }
        self.rules.rules.push(rule);
        self.dirty_meta = true;
        Ok(())
    }

    pub fn remove_rule(&mut self, id: &str) -> Result<Rule, StoreError> {
        let pos = self
            .rules
            .rules
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| StoreError::UnknownRule(id.to_string()))?;
        self.dirty_meta = true;
        Ok(self.rules.rules.remove(pos))
    }

    /// Replaces the rule in place; file position (firing order) is kept.
    pub fn modify_rule(&mut self, id: &str, new: Rule) -> Result<(), StoreError> {
        Self::require_valid(&new)?;
        if new.id != id && self.rules.find(&new.id).is_some() {
            return Err(StoreError::DuplicateRuleId(new.id));
        }
        let slot = self
            .rules
            .rules
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or_else(|| StoreError::UnknownRule(id.to_string()))?;
        *slot = new;
        self.dirty_meta = true;
        Ok(())
    }

    pub fn list_rules(&self) -> &[Rule] {
        &self.rules.rules
    }

    // -- search --------------------------------------------------------------

    /// Conjunction of criteria, served from the indexes; result sorted by
    /// doc id.
    pub fn search(&self, criteria: &SearchCriteria) -> Result<Vec<DocMeta>, StoreError> {
        if criteria.is_empty() {
            return Err(StoreError::EmptyCriteria);
        }
        let mut candidates: Option<BTreeSet<String>> = None;
        let mut narrow = |set: BTreeSet<String>| {
            candidates = Some(match candidates.take() {
                None => set,
                Some(prev) => prev.intersection(&set).cloned().collect(),
            });
        };
        if let Some(name) = &criteria.name {
            narrow(self.indexes.by_name.get(name).cloned().unwrap_or_default());
        }
        if let Some(author) = &criteria.author {
            narrow(
                self.indexes
                    .by_author
                    .get(author)
                    .cloned()
                    .unwrap_or_default(),
            );
        }
        if criteria.created_from.is_some() || criteria.created_to.is_some() {
            let lo = criteria.created_from.clone().unwrap_or_default();
            let mut set = BTreeSet::new();
            for (date, ids) in self.indexes.by_created.range(lo..) {
                if let Some(hi) = &criteria.created_to {
                    if date > hi {
                        break;
                    }
                }
                set.extend(ids.iter().cloned());
            }
            narrow(set);
        }
        let candidates = match candidates {
            Some(c) => c,
            // version-only search scans every doc id
            None => self.registry.keys().cloned().collect(),
        };
        Ok(candidates
            .into_iter()
            .filter_map(|id| self.registry.get(&id))
            .filter(|m| criteria.version.map_or(true, |v| m.version == v))
            .cloned()
            .collect())
    }
}

fn merge_reports(parts: Vec<IntegrityReport>) -> IntegrityReport {
    let mut out = IntegrityReport::default();
    for part in parts {
        out.dangling_internal.extend(part.dangling_internal);
        out.dangling_external.extend(part.dangling_external);
    }
    out
}

fn split_parent(path: &[usize]) -> (&[usize], usize) {
    let (last, parent) = path.split_last().expect("non-empty path");
    (parent, *last)
}

/// Shifts `path` to account for the removal of the node at `removed`.
/// Returns None if `path` was inside the removed subtree.
pub fn adjust_after_removal(path: &[usize], removed: &[usize]) -> Option<Vec<usize>> {
    if path.starts_with(removed) {
        return None;
    }
    let (rem_last, rem_parent) = removed.split_last().expect("non-empty removal path");
    let mut out = path.to_vec();
    if path.len() > rem_parent.len() && path[..rem_parent.len()] == *rem_parent {
        let idx = path[rem_parent.len()];
        if idx > *rem_last {
            out[rem_parent.len()] = idx - 1;
        }
    }
    Some(out)
}

fn write_atomic(path: &Path, contents: &[u8], commit: bool) -> Result<(), StoreError> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("file");
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    if commit {
        fs::rename(&tmp, path)?;
    }
    Ok(())
}

/// Exclusive store lock, realized as `<root>/.lock` created with
/// create-new semantics and removed on drop.
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(root: &Path) -> Result<StoreLock, StoreError> {
        let path = root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(
                StoreError::StoreLocked(root.display().to_string()),
            ),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
