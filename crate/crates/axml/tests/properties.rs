//! Property-based checks of the engine invariants: matcher equivalences,
//! path-evaluator ordering, codec round-trips, extraction conservation,
//! store index consistency, and rule validation.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

use axml::engine::{matches, WindowEntry};
use axml::model::{normalize_event_spec, validate_rule, CompositeOp, ViolationCode};
use axml::path::{eval_path, Axis};
use axml::store::Store;
use axml::xml::{
    extract_embedded_rules, parse_document, parse_link_file, parse_registry, parse_rule,
    parse_rule_file, serialize_document, serialize_link_file, serialize_registry,
    serialize_rule, serialize_rule_file, RuleFile,
};
use axml::{
    DocTree, Element, EventKind, EventSpec, MutationOp, Node, NodeAddress, Origin, Rule,
};

use common::*;

fn normalized(mut rule: Rule) -> Rule {
    rule.event = normalize_event_spec(&rule.event).expect("generated depth within bound");
    rule
}

fn spec_docs(rng: &mut rand_chacha::ChaCha8Rng) -> BTreeMap<String, Arc<DocTree>> {
    let mut docs = BTreeMap::new();
    for id in ["d1", "d2"] {
        docs.insert(id.to_string(), Arc::new(gen_tree(rng, 8)));
    }
    docs
}

proptest! {
    #[test]
    fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_document(&bytes);
    }

    #[test]
    fn document_roundtrip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let doc = gen_tree(&mut r, 20);
        let text = serialize_document(&doc);
        let back = parse_document(text.as_bytes()).expect("own output parses");
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn rule_roundtrip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rule = normalized(gen_rule(&mut r, "r1"));
        let back = parse_rule(&serialize_rule(&rule)).expect("own output parses");
        prop_assert_eq!(back, rule);
    }

    #[test]
    fn rule_file_roundtrip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(0..5);
        let rules = (0..n).map(|i| normalized(gen_rule(&mut r, &format!("r{i}")))).collect();
        let file = RuleFile { rules };
        let back = parse_rule_file(serialize_rule_file(&file).as_bytes()).expect("parses");
        prop_assert_eq!(back, file);
    }

    #[test]
    fn link_file_roundtrip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ids: Vec<String> = (0..4).map(|i| format!("d{i}")).collect();
        let n = r.gen_range(0..5);
        let links: Vec<_> = (0..n).map(|i| gen_link(&mut r, &format!("l{i}"), &ids)).collect();
        let back = parse_link_file(serialize_link_file(&links).as_bytes()).expect("parses");
        prop_assert_eq!(back, links);
    }

    #[test]
    fn registry_roundtrip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(0..5);
        let metas: Vec<_> = (0..n).map(|i| gen_meta(&mut r, &format!("d{i}"))).collect();
        let back = parse_registry(serialize_registry(&metas).as_bytes()).expect("parses");
        prop_assert_eq!(back, metas);
    }

    #[test]
    fn eval_path_sorted_dedup_and_oracle_equal(seed in any::<u64>()) {
        let mut r = rng(seed);
        let doc = gen_tree(&mut r, 30);
        let expr = gen_path(&mut r, 4);
        let got = eval_path(&expr, &doc);
        for pair in got.windows(2) {
            prop_assert!(pair[0] < pair[1], "not strictly increasing: {:?}", got);
        }
        prop_assert_eq!(got, oracle_eval_path(&expr, &doc));
    }

    #[test]
    fn descendant_axis_is_superset(seed in any::<u64>()) {
        let mut r = rng(seed);
        let doc = gen_tree(&mut r, 30);
        let expr = gen_path(&mut r, 4);
        let base = eval_path(&expr, &doc);
        let idx = r.gen_range(0..expr.steps.len());
        let mut widened = expr.clone();
        widened.steps[idx].axis = Axis::Descendant;
        let sup = eval_path(&widened, &doc);
        for addr in &base {
            prop_assert!(sup.contains(addr), "{:?} lost by widening step {}", addr, idx);
        }
    }

    #[test]
    fn matcher_equals_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let docs = spec_docs(&mut r);
        let spec = gen_spec(&mut r, 3);
        let window = gen_window(&mut r, &docs, 6);
        prop_assert_eq!(matches(&spec, &window), oracle_matches(&spec, &window));
    }

    #[test]
    fn normalize_preserves_matching(seed in any::<u64>()) {
        let mut r = rng(seed);
        let docs = spec_docs(&mut r);
        let spec = gen_spec(&mut r, 3);
        let norm = normalize_event_spec(&spec).expect("depth within bound");
        let renorm = normalize_event_spec(&norm).expect("depth within bound");
        prop_assert_eq!(&renorm, &norm, "normalize is not idempotent");
        let window = gen_window(&mut r, &docs, 6);
        prop_assert_eq!(matches(&norm, &window), matches(&spec, &window));
    }

    #[test]
    fn and_or_permutation_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let docs = spec_docs(&mut r);
        let spec = gen_spec(&mut r, 3);
        let EventSpec::Composite { op, operands } = &spec else {
            return Ok(());
        };
        if *op == CompositeOp::Seq {
            return Ok(());
        }
        let mut shuffled = operands.clone();
        shuffled.shuffle(&mut r);
        let permuted = EventSpec::Composite { op: *op, operands: shuffled };
        let window = gen_window(&mut r, &docs, 6);
        prop_assert_eq!(matches(&spec, &window), matches(&permuted, &window));
    }

    #[test]
    fn window_extension_monotone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let docs = spec_docs(&mut r);
        let spec = gen_spec(&mut r, 3);
        if spec.contains_seq() {
            return Ok(());
        }
        let mut window = gen_window(&mut r, &docs, 5);
        if !matches(&spec, &window) {
            return Ok(());
        }
        let extra = gen_window(&mut r, &docs, 1);
        window.extend(extra);
        prop_assert!(matches(&spec, &window), "match lost after window extension");
    }

    #[test]
    fn validate_flags_single_field_mutations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut rule = gen_rule(&mut r, "r1");
        prop_assert!(validate_rule(&rule).is_valid(), "generator must yield valid rules");
        let expected = match r.gen_range(0..4) {
            0 => {
                rule.id = "no spaces allowed".into();
                ViolationCode::BadId
            }
            1 => {
                rule.event = EventSpec::Composite {
                    op: CompositeOp::And,
                    operands: vec![EventSpec::primitive(EventKind::Add)],
                };
                ViolationCode::CompositeArity
            }
            2 => {
                rule.action.ops.clear();
                ViolationCode::EmptyAction
            }
            _ => {
                rule.action.ops[0] = axml::ActionOp {
                    kind: EventKind::Move,
                    target: gen_path(&mut r, 2),
                    payload: None,
                    destination: None,
                };
                ViolationCode::MissingDestination
            }
        };
        prop_assert!(validate_rule(&rule).has_code(expected), "expected {:?}", expected);
    }

    #[test]
    fn extraction_conserves_tree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let base = gen_tree(&mut r, 15);
        let k = r.gen_range(0..=5);
        let rules: Vec<Rule> =
            (0..k).map(|i| normalized(gen_rule(&mut r, &format!("e{i}")))).collect();
        let embedded = embed_rules(&base, &rules, &mut r);
        let got = extract_embedded_rules(&embedded).expect("root is not a rule");
        prop_assert!(got.errors.is_empty());
        prop_assert_eq!(got.rules.len(), k);
        // stripped tree carries no rule elements
        fn has_rule(e: &Element) -> bool {
            e.children.iter().any(|c| match c {
                Node::Element(el) => el.name == "rule" || el.name == "rules" || has_rule(el),
                _ => false,
            })
        }
        prop_assert!(!has_rule(&got.stripped_doc.root));
        // diff of stripped vs original is exactly the recorded removal sites
        prop_assert_eq!(tree_diff(&embedded, &got.stripped_doc), got.removal_sites.clone());
        // putting the extracted subtrees back reproduces the original
        let restored = reinsert(&got.stripped_doc, &got.removal_sites, &got.rules);
        prop_assert_eq!(restored, embedded);
    }

    #[test]
    fn store_indexes_and_log_consistent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::init(dir.path().join("s")).unwrap();
        for i in 0..3 {
            let id = format!("d{i}");
            store.put_document(gen_meta(&mut r, &id), gen_tree(&mut r, 10)).unwrap();
        }
        for _ in 0..r.gen_range(0..12) {
            if store.registry().is_empty() {
                break;
            }
            let op = gen_store_mutation(&mut r, &store);
            let _ = store.apply_mutation(&op, Origin::User, 0);
        }
        prop_assert_eq!(&store.rebuilt_indexes(), store.indexes());
        let seqs: Vec<u64> = store.log().iter().map(|e| e.occ.seq).collect();
        for pair in seqs.windows(2) {
            prop_assert_eq!(pair[1], pair[0] + 1, "log not append-only: {:?}", seqs);
        }
        let (ext, int) = brute_force_integrity(&store.snapshot().docs, store.links());
        let mut report = store.check_referential_integrity();
        report.dangling_external.sort();
        report.dangling_external.dedup();
        report.dangling_internal.sort_by(|a, b| {
            (&a.0, &a.1.doc_id, &a.1.path).cmp(&(&b.0, &b.1.doc_id, &b.1.path))
        });
        report.dangling_internal.dedup();
        prop_assert_eq!(report.dangling_external, ext);
        prop_assert_eq!(report.dangling_internal, int);
    }
}

/// A mutation aimed at (mostly) resolvable targets of the current store.
fn gen_store_mutation(r: &mut rand_chacha::ChaCha8Rng, store: &Store) -> MutationOp {
    let ids: Vec<String> = store.registry().keys().cloned().collect();
    let kind = KINDS[r.gen_range(0..4)];
    let pick = |r: &mut rand_chacha::ChaCha8Rng, store: &Store, ids: &[String]| {
        let id = &ids[r.gen_range(0..ids.len())];
        match store.doc(id) {
            Some(doc) => {
                let addrs = all_addresses(doc);
                NodeAddress::new(id.clone(), addrs[r.gen_range(0..addrs.len())].clone())
            }
            None => NodeAddress::root(id.clone()),
        }
    };
    let target = pick(r, store, &ids);
    MutationOp {
        kind,
        target,
        payload: match kind {
            EventKind::Add | EventKind::Update => {
                let mut budget = 3;
                Some(gen_element(r, &mut budget))
            }
            _ => None,
        },
        destination: match kind {
            EventKind::Move => Some(pick(r, store, &ids)),
            _ => None,
        },
    }
}

#[test]
fn seq_is_order_sensitive() {
    let docs = spec_docs(&mut rng(7));
    let snapshot = axml::store::Snapshot { docs };
    let entry = |seq, kind| {
        WindowEntry::new(
            axml::EventOccurrence {
                seq,
                kind,
                target: NodeAddress::root("d1"),
                origin: Origin::User,
                cascade_depth: 0,
            },
            snapshot.clone(),
        )
    };
    let seq = EventSpec::Composite {
        op: CompositeOp::Seq,
        operands: vec![
            EventSpec::primitive(EventKind::Update),
            EventSpec::primitive(EventKind::Delete),
        ],
    };
    let forward = [entry(1, EventKind::Update), entry(2, EventKind::Delete)];
    let backward = [entry(1, EventKind::Delete), entry(2, EventKind::Update)];
    assert!(matches(&seq, &forward));
    assert!(!matches(&seq, &backward));
}

#[test]
fn crash_between_temp_write_and_rename_keeps_previous_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s");
    let mut store = Store::init(&path).unwrap();
    let mut r = rng(3);
    store.put_document(gen_meta(&mut r, "d1"), tree("<doc><a/></doc>")).unwrap();
    store.flush().unwrap();
    let committed_doc = store.doc("d1").unwrap().clone();

    // further mutations written to temp files only: simulates a crash
    // after the temp write but before the rename
    store
        .apply_mutation(
            &MutationOp {
                kind: EventKind::Delete,
                target: NodeAddress::new("d1", vec![0]),
                payload: None,
                destination: None,
            },
            Origin::User,
            0,
        )
        .unwrap();
    store.flush_without_commit().unwrap();
    drop(store);

    let reopened = Store::open(&path).unwrap();
    assert_eq!(reopened.doc("d1").unwrap(), &committed_doc);
    assert_eq!(reopened.registry().len(), 1);
}
