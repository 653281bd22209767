//! The execution pipeline: apply mutations, detect events, select rules,
//! evaluate conditions and execute actions, cascading with a depth bound,
//! then enforce the configured link-integrity policy.

use std::collections::BTreeSet;

use crate::engine::{select_rules, EventWindow, RuleActivation, WindowEntry};
use crate::model::{
    Action, DocMeta, DocTree, Element, EventKind, EventOccurrence, MutationOp, Node, NodeAddress,
    Origin,
};
use crate::path::{eval_condition, eval_path, PathExpr};
use crate::store::{adjust_after_removal, IntegrityReport, Store, StoreError};
use crate::xml::{extract_embedded_rules, AcquisitionResult, CodecError, Malformed, RuleFile};

/// What happens to dangling links after a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkPolicy {
    /// Delete links with unresolvable endpoints, emitting no events.
    Prune,
    /// Attach the integrity report to the trace and leave the links alone.
    #[default]
    Report,
    /// Roll the entire cascade back if the report is non-empty.
    Veto,
}

impl LinkPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkPolicy::Prune => "prune",
            LinkPolicy::Report => "report",
            LinkPolicy::Veto => "veto",
        }
    }

    pub fn parse(s: &str) -> Option<LinkPolicy> {
        match s {
            "prune" => Some(LinkPolicy::Prune),
            "report" => Some(LinkPolicy::Report),
            "veto" => Some(LinkPolicy::Veto),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecConfig {
    pub max_cascade_depth: u32,
    pub max_rules_per_round: usize,
    pub link_policy: LinkPolicy,
}

impl Default for ExecConfig {
    fn default() -> ExecConfig {
        ExecConfig {
            max_cascade_depth: 16,
            max_rules_per_round: 256,
            link_policy: LinkPolicy::Report,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed,
    DepthExceeded,
    Vetoed,
    Failed(String),
}

impl Outcome {
    fn as_str(&self) -> &str {
        match self {
            Outcome::Completed => "completed",
            Outcome::DepthExceeded => "depth-exceeded",
            Outcome::Vetoed => "vetoed",
            Outcome::Failed(_) => "failed",
        }
    }
}

/// Summary of one mutation applied by a rule action.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedOp {
    pub rule_id: String,
    pub kind: EventKind,
    pub target: NodeAddress,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundRecord {
    pub depth: u32,
    pub occurrences: Vec<EventOccurrence>,
    pub activations: Vec<RuleActivation>,
    /// Per-activation condition outcome, in activation order.
    pub condition_results: Vec<(String, bool)>,
    pub applied: Vec<AppliedOp>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub rounds: Vec<RoundRecord>,
    pub outcome: Outcome,
    pub integrity: Option<IntegrityReport>,
    /// Link ids removed by the Prune policy.
    pub pruned: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Malformed(#[from] Malformed),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Result of ingesting one client file.
#[derive(Debug)]
pub struct ProcessResult {
    pub acquisition: AcquisitionResult,
    pub trace: ExecutionTrace,
    pub doc_id: String,
}

fn snapshot_for(kind: EventKind, pre: crate::store::Snapshot, post: crate::store::Snapshot)
    -> crate::store::Snapshot
{
    // deleted/moved nodes only exist in the pre-state
    match kind {
        EventKind::Delete | EventKind::Move => pre,
        EventKind::Add | EventKind::Update => post,
    }
}

/// Evaluates a path over every stored document, doc ids in order.
fn eval_over_store(expr: &PathExpr, snapshot: &crate::store::Snapshot) -> Vec<NodeAddress> {
    let mut out = Vec::new();
    for (doc_id, doc) in &snapshot.docs {
        for path in eval_path(expr, doc) {
            out.push(NodeAddress::new(doc_id.clone(), path));
        }
    }
    out
}

/// Executes one action for a fired rule. Each op's target path is evaluated
/// against the current snapshot; every matched node gets one mutation,
/// applied in document order, each seeing the previous op's effects. An op
/// whose target set is empty is a no-op. Per-op store errors are recorded
/// and execution continues.
pub fn execute_action(
    store: &mut Store,
    rule_id: &str,
    action: &Action,
    depth: u32,
) -> (Vec<WindowEntry>, Vec<AppliedOp>, Vec<String>) {
    let mut entries = Vec::new();
    let mut applied = Vec::new();
    let mut errors = Vec::new();
    for op in &action.ops {
        let snapshot = store.snapshot();
        let mut targets: Vec<Option<NodeAddress>> =
            eval_over_store(&op.target, &snapshot).into_iter().map(Some).collect();
        for i in 0..targets.len() {
            let Some(addr) = targets[i].clone() else {
                continue; // invalidated by an earlier mutation of this op
            };
            let destination = match (&op.destination, op.kind) {
                (Some(expr), EventKind::Move) => {
                    // first node matched by the destination path, current state
                    match eval_over_store(expr, &store.snapshot()).into_iter().next() {
                        Some(d) => Some(d),
                        None => {
                            errors.push(format!(
                                "rule {rule_id}: destination {expr} matches nothing"
                            ));
                            continue;
                        }
                    }
                }
                _ => None,
            };
            let mutation = MutationOp {
                kind: op.kind,
                target: addr.clone(),
                payload: op.payload.clone(),
                destination,
            };
            let pre = store.snapshot();
            match store.apply_mutation(&mutation, Origin::Rule(rule_id.to_string()), depth) {
                Ok(occ) => {
                    let post = store.snapshot();
                    applied.push(AppliedOp {
                        rule_id: rule_id.to_string(),
                        kind: occ.kind,
                        target: occ.target.clone(),
                    });
                    entries.push(WindowEntry::new(occ, snapshot_for(op.kind, pre, post)));
                    invalidate_stale(&mut targets, i, op.kind, &addr);
                }
                Err(e) => errors.push(format!("rule {rule_id}: {e}")),
            }
        }
    }
    (entries, applied, errors)
}

/// After applying a mutation at `addr`, fixes up the not-yet-applied target
/// addresses: nodes inside a removed/replaced subtree are dropped, siblings
/// after a removed node shift down.
fn invalidate_stale(
    targets: &mut [Option<NodeAddress>],
    done: usize,
    kind: EventKind,
    addr: &NodeAddress,
) {
    for slot in targets.iter_mut().skip(done + 1) {
        let Some(t) = slot else { continue };
        if t.doc_id != addr.doc_id {
            continue;
        }
        match kind {
            EventKind::Add => {}
            EventKind::Update => {
                // the subtree below the replaced node is gone
                if t.path.len() > addr.path.len() && t.path.starts_with(&addr.path) {
                    *slot = None;
                }
            }
            EventKind::Delete | EventKind::Move => {
                if addr.path.is_empty() {
                    *slot = None;
                    continue;
                }
                match adjust_after_removal(&t.path, &addr.path) {
                    Some(new_path) => t.path = new_path,
                    None => *slot = None,
                }
            }
        }
    }
}

/// Runs one full cascade from a batch of user mutations.
pub fn run_cascade(
    store: &mut Store,
    initial_ops: &[MutationOp],
    config: &ExecConfig,
) -> Result<ExecutionTrace, ExecError> {
    let rules = store.rules().clone();
    run_cascade_with_rules(store, initial_ops, &rules, config)
}

/// Same as `run_cascade` with an explicit rule base (used when extracted
/// rules run transiently, without being installed).
pub fn run_cascade_with_rules(
    store: &mut Store,
    initial_ops: &[MutationOp],
    rules: &RuleFile,
    config: &ExecConfig,
) -> Result<ExecutionTrace, ExecError> {
    let pre_state = store.state_snapshot();
    let mut seed = Vec::new();
    for op in initial_ops {
        let pre = store.snapshot();
        match store.apply_mutation(op, Origin::User, 0) {
            Ok(occ) => {
                let post = store.snapshot();
                seed.push(WindowEntry::new(occ, snapshot_for(op.kind, pre, post)));
            }
            Err(e) => {
                let mut trace = ExecutionTrace {
                    rounds: vec![RoundRecord {
                        depth: 0,
                        occurrences: seed.iter().map(|w| w.occ.clone()).collect(),
                        ..Default::default()
                    }],
                    outcome: Outcome::Failed(e.to_string()),
                    integrity: None,
                    pruned: Vec::new(),
                };
                trace.rounds[0].errors.push(e.to_string());
                return Ok(trace);
            }
        }
    }
    Ok(cascade_rounds(store, seed, rules, config, pre_state))
}

/// The cascade loop proper, starting from pre-applied round-0 occurrences.
fn cascade_rounds(
    store: &mut Store,
    seed: Vec<WindowEntry>,
    rules: &RuleFile,
    config: &ExecConfig,
    pre_state: crate::store::StoreState,
) -> ExecutionTrace {
    let session_start_seq = seed.first().map(|w| w.occ.seq).unwrap_or(0);
    let mut history: Vec<WindowEntry> = Vec::new();
    let mut batch = seed;
    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut outcome = Outcome::Completed;
    let mut depth: u32 = 0;

    while !batch.is_empty() {
        history.extend(batch.iter().cloned());
        let mut round = RoundRecord {
            depth,
            occurrences: batch.iter().map(|w| w.occ.clone()).collect(),
            ..Default::default()
        };
        let window = EventWindow {
            batch: std::mem::take(&mut batch),
            history: history.clone(),
            session_start_seq,
        };
        let mut activations = select_rules(rules, &window);
        if activations.len() > config.max_rules_per_round {
            round.errors.push(format!(
                "activation cap: {} rules matched, keeping first {}",
                activations.len(),
                config.max_rules_per_round
            ));
            activations.truncate(config.max_rules_per_round);
        }
        // condition is evaluated immediately before its action, against the
        // state current at that moment
        let mut fireable: Vec<&RuleActivation> = Vec::new();
        let mut next = Vec::new();
        let mut fired_any = false;
        for activation in &activations {
            let rule = rules
                .find(&activation.rule_id)
                .expect("activation for a rule in the base");
            let satisfied = match eval_condition(&rule.condition, &store.snapshot().docs) {
                Ok(v) => v,
                Err(e) => {
                    round.errors.push(format!("rule {}: {e}", rule.id));
                    false
                }
            };
            round.condition_results.push((rule.id.clone(), satisfied));
            if !satisfied {
                continue;
            }
            fireable.push(activation);
            if depth + 1 > config.max_cascade_depth {
                continue; // cut: the bound forbids another round
            }
            fired_any = true;
            let (entries, applied, errors) =
                execute_action(store, &rule.id, &rule.action, depth + 1);
            next.extend(entries);
            round.applied.extend(applied);
            round.errors.extend(errors);
        }
        if !fireable.is_empty() && depth + 1 > config.max_cascade_depth {
            round.errors.push(format!(
                "cascade cut at depth {}: {} pending activation(s)",
                config.max_cascade_depth,
                fireable.len()
            ));
            round.activations = activations.clone();
            rounds.push(round);
            outcome = Outcome::DepthExceeded;
            break;
        }
        round.activations = activations;
        rounds.push(round);
        if !fired_any {
            break;
        }
        batch = next;
        depth += 1;
    }

    let mut trace = ExecutionTrace {
        rounds,
        outcome,
        integrity: None,
        pruned: Vec::new(),
    };
    apply_link_policy(store, &history, config, pre_state, &mut trace);
    trace
}

fn apply_link_policy(
    store: &mut Store,
    history: &[WindowEntry],
    config: &ExecConfig,
    pre_state: crate::store::StoreState,
    trace: &mut ExecutionTrace,
) {
    match config.link_policy {
        LinkPolicy::Prune => {
            trace.pruned = store
                .prune_dangling_links()
                .into_iter()
                .map(|l| l.link_id)
                .collect();
        }
        LinkPolicy::Report => {
            trace.integrity = Some(store.check_referential_integrity());
        }
        LinkPolicy::Veto => {
            let report = store.check_referential_integrity();
            if !report.is_empty() {
                store.restore(pre_state);
                let seqs: Vec<u64> = history.iter().map(|w| w.occ.seq).collect();
                store.mark_rolled_back(&seqs);
                trace.outcome = Outcome::Vetoed;
            }
            trace.integrity = Some(report);
        }
    }
}

/// Smallest free generated doc id, `doc-1`, `doc-2`, ...
fn generate_doc_id(store: &Store) -> String {
    let mut n = 1;
    loop {
        let id = format!("doc-{n}");
        if !store.registry().contains_key(&id) {
            return id;
        }
        n += 1;
    }
}

/// Ingests a client file: extracts embedded rules, stores the stripped
/// document, and runs the cascade seeded by the resulting Add occurrence.
/// Extracted rules run transiently unless `install` is set, in which case
/// they are appended to the persistent rule base first.
pub fn process_client_file(
    store: &mut Store,
    bytes: &[u8],
    config: &ExecConfig,
    install: bool,
) -> Result<ProcessResult, ExecError> {
    let doc = crate::xml::parse_document(bytes)?;
    let acquisition = extract_embedded_rules(&doc)?;
    let stripped = acquisition.stripped_doc.clone();

    let doc_id = match stripped.root.attr("id") {
        Some(id) if !id.is_empty() && !store.registry().contains_key(id) => id.to_string(),
        _ => generate_doc_id(store),
    };
    let meta = DocMeta {
        doc_id: doc_id.clone(),
        name: stripped
            .root
            .attr("name")
            .unwrap_or(doc_id.as_str())
            .to_string(),
        created: stripped
            .root
            .attr("created")
            .unwrap_or("1970-01-01")
            .to_string(),
        version: 1,
        author: stripped.root.attr("author").unwrap_or("").to_string(),
    };

    let mut exec_rules = store.rules().clone();
    let mut rule_errors = Vec::new();
    for rule in &acquisition.rules {
        if install {
            if let Err(e) = store.add_rule(rule.clone()) {
                rule_errors.push(format!("rule {}: {e}", rule.id));
            }
        } else if exec_rules.find(&rule.id).is_some() {
            rule_errors.push(format!("rule {}: DUPLICATE_RULE_ID", rule.id));
        } else {
            exec_rules.rules.push(rule.clone());
        }
    }
    if install {
        exec_rules = store.rules().clone();
    }

    let pre_state = store.state_snapshot();
    let pre = store.snapshot();
    let occ = store.put_document(meta, stripped)?;
    let post = store.snapshot();
    let seed = vec![WindowEntry::new(occ, snapshot_for(EventKind::Add, pre, post))];
    let mut trace = cascade_rounds(store, seed, &exec_rules, config, pre_state);
    if let Some(round0) = trace.rounds.first_mut() {
        round0.errors.splice(0..0, rule_errors);
    }
    Ok(ProcessResult {
        acquisition,
        trace,
        doc_id,
    })
}

// ---------------------------------------------------------------------------
// trace serialization

/// Serializes a trace to its XML form (`<trace>` with `<round>` children).
pub fn serialize_trace(trace: &ExecutionTrace) -> DocTree {
    let mut root = Element::new("trace");
    root.set_attr("outcome", trace.outcome.as_str());
    if let Outcome::Failed(reason) = &trace.outcome {
        root.set_attr("reason", reason.clone());
    }
    for round in &trace.rounds {
        let mut r = Element::new("round");
        r.set_attr("depth", round.depth.to_string());
        for occ in &round.occurrences {
            let mut o = Element::new("occurrence");
            o.set_attr("seq", occ.seq.to_string());
            o.set_attr("kind", occ.kind.as_str());
            o.set_attr("target", occ.target.to_href());
            o.set_attr(
                "origin",
                match &occ.origin {
                    Origin::User => "user".to_string(),
                    Origin::Rule(id) => format!("rule:{id}"),
                },
            );
            r.children.push(Node::Element(o));
        }
        for activation in &round.activations {
            let mut a = Element::new("activation");
            a.set_attr("rule", activation.rule_id.clone());
            a.set_attr("binding", activation.binding.to_href());
            a.set_attr(
                "triggering",
                activation
                    .triggering
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            );
            r.children.push(Node::Element(a));
        }
        for (rule_id, satisfied) in &round.condition_results {
            let mut c = Element::new("condition");
            c.set_attr("rule", rule_id.clone());
            c.set_attr("satisfied", if *satisfied { "true" } else { "false" });
            r.children.push(Node::Element(c));
        }
        for applied in &round.applied {
            let mut a = Element::new("applied");
            a.set_attr("rule", applied.rule_id.clone());
            a.set_attr("kind", applied.kind.as_str());
            a.set_attr("target", applied.target.to_href());
            r.children.push(Node::Element(a));
        }
        for error in &round.errors {
            let mut e = Element::new("error");
            e.children.push(Node::Text(error.clone()));
            r.children.push(Node::Element(e));
        }
        root.children.push(Node::Element(r));
    }
    if !trace.pruned.is_empty() {
        let mut p = Element::new("pruned");
        for link_id in &trace.pruned {
            let mut l = Element::new("link");
            l.set_attr("id", link_id.clone());
            p.children.push(Node::Element(l));
        }
        root.children.push(Node::Element(p));
    }
    if let Some(report) = &trace.integrity {
        let mut i = Element::new("integrity");
        for (link_id, doc_id) in &report.dangling_external {
            let mut d = Element::new("dangling-external");
            d.set_attr("link", link_id.clone());
            d.set_attr("doc", doc_id.clone());
            i.children.push(Node::Element(d));
        }
        for (link_id, addr) in &report.dangling_internal {
            let mut d = Element::new("dangling-internal");
            d.set_attr("link", link_id.clone());
            d.set_attr("target", addr.to_href());
            i.children.push(Node::Element(d));
        }
        root.children.push(Node::Element(i));
    }
    DocTree::new(root)
}

/// Seq values of every occurrence recorded in the trace.
pub fn trace_seqs(trace: &ExecutionTrace) -> BTreeSet<u64> {
    trace
        .rounds
        .iter()
        .flat_map(|r| r.occurrences.iter().map(|o| o.seq))
        .collect()
}
