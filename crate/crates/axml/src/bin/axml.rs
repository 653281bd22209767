//! Command-line surface over the active-XML repository: document, element,
//! rule and link management plus client-file processing.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use axml::exec::{
    process_client_file, run_cascade, serialize_trace, ExecConfig, ExecutionTrace, LinkPolicy,
};
use axml::model::{DocMeta, EventKind, MutationOp, NodeAddress, Origin};
use axml::path::{eval_path, parse_path};
use axml::store::{SearchCriteria, Store, StoreError, StoreLock};
use axml::xml::{
    parse_document, parse_rule, parse_rule_file, serialize_document,
    serialize_log, serialize_registry, serialize_rule, serialize_rule_file, RuleFile,
};
use axml::Link;

#[derive(Parser)]
#[command(name = "axml", about = "Active XML document repository", version)]
struct Cli {
    /// Store root directory (or env AXML_STORE)
    #[arg(long, global = true)]
    store: Option<PathBuf>,

    /// Output format: text or xml
    #[arg(long, global = true, default_value = "text")]
    format: String,

    /// Maximum cascade depth
    #[arg(long, global = true)]
    max_depth: Option<u32>,

    /// Maximum rule activations per round
    #[arg(long, global = true)]
    max_rules: Option<usize>,

    /// Link-integrity policy: prune, report, or veto
    #[arg(long, global = true)]
    link_policy: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty store
    Init { path: PathBuf },
    #[command(subcommand)]
    Doc(DocCmd),
    #[command(subcommand)]
    Elem(ElemCmd),
    #[command(subcommand)]
    Rule(RuleCmd),
    #[command(subcommand)]
    Link(LinkCmd),
    /// Ingest a client file: extract embedded rules, store it, run the cascade
    Process {
        file: PathBuf,
        /// Persist extracted rules in the rule base
        #[arg(long)]
        install_rules: bool,
    },
    /// Print the event log
    Log {
        #[arg(long)]
        since: Option<u64>,
    },
    /// Print a stored cascade trace
    Trace { run_id: u64 },
}

#[derive(Subcommand)]
enum DocCmd {
    /// Store a new document from a file
    Add {
        file: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        author: Option<String>,
        #[arg(long)]
        created: Option<String>,
    },
    /// Delete a document (runs through the cascade)
    Rm { id: String },
    /// Search the registry
    Search(SearchArgs),
    /// Print a stored document
    Get { id: String },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    author: Option<String>,
    #[arg(long)]
    created_from: Option<String>,
    #[arg(long)]
    created_to: Option<String>,
    #[arg(long)]
    version: Option<u32>,
}

#[derive(Subcommand)]
enum ElemCmd {
    /// Append a payload under the first element matched by the path
    Add {
        id: String,
        parent_path: String,
        payload_file: PathBuf,
    },
    /// Delete the first node matched by the path
    Rm { id: String, path: String },
    /// Move the first matched node under the first matched destination
    Mv {
        id: String,
        path: String,
        dest_path: String,
    },
    /// Replace the first matched node with the payload
    Update {
        id: String,
        path: String,
        payload_file: PathBuf,
    },
}

#[derive(Subcommand)]
enum RuleCmd {
    /// List the rule base in firing order
    List,
    /// Add rules from a file (single rule or rules file)
    Add { file: PathBuf },
    /// Remove a rule by id
    Rm { rid: String },
    /// Replace a rule in place by id
    Set { rid: String, file: PathBuf },
    /// Print rules embedded in a document without storing anything
    Extract { file: PathBuf },
}

#[derive(Subcommand)]
enum LinkCmd {
    /// Add a link: origin href then one or more destination hrefs
    Add {
        origin: String,
        #[arg(required = true)]
        destinations: Vec<String>,
        #[arg(long)]
        id: Option<String>,
    },
    /// Remove a link by id
    Rm { lid: String },
    /// Report dangling link endpoints
    Check,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Store(#[from] StoreError),
    #[error("{0}")]
    Exec(#[from] axml::exec::ExecError),
    #[error("{0}")]
    Codec(#[from] axml::xml::CodecError),
    #[error("{0}")]
    Malformed(#[from] axml::xml::Malformed),
    #[error("IO: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Store(StoreError::StoreCorrupt { .. }) => ExitCode::from(2),
            CliError::Exec(axml::exec::ExecError::Store(StoreError::StoreCorrupt { .. })) => {
                ExitCode::from(2)
            }
            _ => ExitCode::from(1),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn store_path(cli: &Cli) -> Result<PathBuf, CliError> {
    if let Some(p) = &cli.store {
        return Ok(p.clone());
    }
    std::env::var_os("AXML_STORE")
        .map(PathBuf::from)
        .ok_or_else(|| usage("no store: pass --store or set AXML_STORE"))
}

fn exec_config(cli: &Cli) -> Result<ExecConfig, CliError> {
    let mut config = ExecConfig::default();
    if let Some(d) = cli.max_depth {
        config.max_cascade_depth = d;
    }
    if let Some(r) = cli.max_rules {
        config.max_rules_per_round = r;
    }
    if let Some(p) = &cli.link_policy {
        config.link_policy =
            LinkPolicy::parse(p).ok_or_else(|| usage(format!("unknown link policy {p:?}")))?;
    }
    Ok(config)
}

fn xml_output(cli: &Cli) -> bool {
    cli.format == "xml"
}

/// Persists a trace under `<root>/traces/run-<n>.xml` and returns `n`.
fn save_trace(root: &Path, trace: &ExecutionTrace) -> Result<u64, CliError> {
    let dir = root.join("traces");
    fs::create_dir_all(&dir)?;
    let mut run_id = 1;
    while dir.join(format!("run-{run_id}.xml")).exists() {
        run_id += 1;
    }
    fs::write(
        dir.join(format!("run-{run_id}.xml")),
        serialize_document(&serialize_trace(trace)),
    )?;
    Ok(run_id)
}

fn print_trace(cli: &Cli, root: &Path, trace: &ExecutionTrace) -> Result<(), CliError> {
    let run_id = save_trace(root, trace)?;
    if xml_output(cli) {
        print!("{}", serialize_document(&serialize_trace(trace)));
    } else {
        println!("run {run_id}: outcome {:?}", trace.outcome);
        for round in &trace.rounds {
            println!(
                "  round {}: {} occurrence(s), {} activation(s), {} applied",
                round.depth,
                round.occurrences.len(),
                round.activations.len(),
                round.applied.len()
            );
            for (rule, ok) in &round.condition_results {
                println!("    condition {rule}: {}", if *ok { "true" } else { "false" });
            }
            for err in &round.errors {
                println!("    error: {err}");
            }
        }
        if let Some(report) = &trace.integrity {
            if report.is_empty() {
                println!("  links: ok");
            } else {
                for (l, d) in &report.dangling_external {
                    println!("  dangling external: link {l} -> doc {d}");
                }
                for (l, a) in &report.dangling_internal {
                    println!("  dangling internal: link {l} -> {a}");
                }
            }
        }
        if !trace.pruned.is_empty() {
            println!("  pruned links: {}", trace.pruned.join(", "));
        }
    }
    Ok(())
}

fn open_locked(cli: &Cli) -> Result<(Store, StoreLock), CliError> {
    let path = store_path(cli)?;
    let lock = StoreLock::acquire(&path)?;
    let store = Store::open(&path)?;
    Ok((store, lock))
}

/// First node matched by a path expression over one document.
fn first_match(store: &Store, doc_id: &str, path: &str) -> Result<NodeAddress, CliError> {
    let expr = parse_path(path).map_err(|e| usage(e.to_string()))?;
    let doc = store
        .doc(doc_id)
        .ok_or_else(|| CliError::Store(StoreError::UnknownDoc(doc_id.to_string())))?;
    eval_path(&expr, doc)
        .into_iter()
        .next()
        .map(|p| NodeAddress::new(doc_id, p))
        .ok_or_else(|| usage(format!("path {path} matches nothing in {doc_id}")))
}

fn read_payload(file: &Path) -> Result<axml::Element, CliError> {
    let doc = parse_document(&fs::read(file)?)?;
    Ok(doc.root)
}

fn today() -> String {
    // days since the epoch, civil-date conversion (Howard Hinnant's algorithm)
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let z = secs as i64 / 86400 + 719468;
    let era = z.div_euclid(146097);
    let doe = z.rem_euclid(146097);
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = if m <= 2 { y + 1 } else { y };
    format!("{y:04}-{m:02}-{d:02}")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Init { path } => {
            let mut store = Store::init(path)?;
            store.flush()?;
            println!("initialized store at {}", path.display());
            Ok(())
        }
        Command::Doc(cmd) => doc_cmd(&cli, cmd),
        Command::Elem(cmd) => elem_cmd(&cli, cmd),
        Command::Rule(cmd) => rule_cmd(&cli, cmd),
        Command::Link(cmd) => link_cmd(&cli, cmd),
        Command::Process {
            file,
            install_rules,
        } => {
            let (mut store, _lock) = open_locked(&cli)?;
            let config = exec_config(&cli)?;
            let bytes = fs::read(file)?;
            let result = process_client_file(&mut store, &bytes, &config, *install_rules)?;
            store.flush()?;
            if !xml_output(&cli) {
                println!(
                    "stored {} ({} rule(s) extracted, {} error(s))",
                    result.doc_id,
                    result.acquisition.rules.len(),
                    result.acquisition.errors.len()
                );
                for (site, err) in &result.acquisition.errors {
                    println!("  rule at {site:?}: {err}");
                }
            }
            print_trace(&cli, store.root(), &result.trace)
        }
        Command::Log { since } => {
            let (store, _lock) = open_locked(&cli)?;
            let entries: Vec<_> = store
                .log()
                .iter()
                .filter(|e| since.map_or(true, |s| e.occ.seq >= s))
                .cloned()
                .collect();
            if xml_output(&cli) {
                print!("{}", serialize_log(&entries));
            } else {
                for e in &entries {
                    println!(
                        "{} {} {} {} depth={}{}",
                        e.occ.seq,
                        e.occ.kind,
                        e.occ.target,
                        match &e.occ.origin {
                            Origin::User => "user".to_string(),
                            Origin::Rule(id) => format!("rule:{id}"),
                        },
                        e.occ.cascade_depth,
                        if e.rolled_back { " (rolled back)" } else { "" }
                    );
                }
            }
            Ok(())
        }
        Command::Trace { run_id } => {
            let path = store_path(&cli)?;
            let file = path.join("traces").join(format!("run-{run_id}.xml"));
            let bytes =
                fs::read(&file).map_err(|_| usage(format!("no trace for run {run_id}")))?;
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn doc_cmd(cli: &Cli, cmd: &DocCmd) -> Result<(), CliError> {
    match cmd {
        DocCmd::Add {
            file,
            id,
            name,
            author,
            created,
        } => {
            let (mut store, _lock) = open_locked(cli)?;
            let tree = parse_document(&fs::read(file)?)?;
            let doc_id = id
                .clone()
                .or_else(|| tree.root.attr("id").map(str::to_string))
                .unwrap_or_else(|| {
                    file.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "doc".to_string())
                });
            let meta = DocMeta {
                doc_id: doc_id.clone(),
                name: name
                    .clone()
                    .or_else(|| tree.root.attr("name").map(str::to_string))
                    .unwrap_or_else(|| doc_id.clone()),
                created: created.clone().unwrap_or_else(today),
                version: 1,
                author: author.clone().unwrap_or_default(),
            };
            store.put_document(meta, tree)?;
            store.flush()?;
            println!("stored {doc_id}");
            Ok(())
        }
        DocCmd::Rm { id } => {
            let (mut store, _lock) = open_locked(cli)?;
            if store.doc(id).is_none() {
                return Err(StoreError::UnknownDoc(id.clone()).into());
            }
            let config = exec_config(cli)?;
            let op = MutationOp {
                kind: EventKind::Delete,
                target: NodeAddress::root(id.clone()),
                payload: None,
                destination: None,
            };
            let trace = run_cascade(&mut store, &[op], &config)?;
            store.flush()?;
            print_trace(cli, store.root(), &trace)
        }
        DocCmd::Search(args) => {
            let (store, _lock) = open_locked(cli)?;
            let criteria = SearchCriteria {
                name: args.name.clone(),
                author: args.author.clone(),
                created_from: args.created_from.clone(),
                created_to: args.created_to.clone(),
                version: args.version,
            };
            let hits = store.search(&criteria)?;
            if xml_output(cli) {
                print!("{}", serialize_registry(&hits));
            } else {
                for meta in hits {
                    println!(
                        "{} name={} author={} created={} version={}",
                        meta.doc_id, meta.name, meta.author, meta.created, meta.version
                    );
                }
            }
            Ok(())
        }
        DocCmd::Get { id } => {
            let (store, _lock) = open_locked(cli)?;
            let doc = store
                .doc(id)
                .ok_or_else(|| CliError::Store(StoreError::UnknownDoc(id.clone())))?;
            print!("{}", serialize_document(doc));
            Ok(())
        }
    }
}

fn elem_cmd(cli: &Cli, cmd: &ElemCmd) -> Result<(), CliError> {
    let (mut store, _lock) = open_locked(cli)?;
    let config = exec_config(cli)?;
    let op = match cmd {
        ElemCmd::Add {
            id,
            parent_path,
            payload_file,
        } => MutationOp {
            kind: EventKind::Add,
            target: first_match(&store, id, parent_path)?,
            payload: Some(read_payload(payload_file)?),
            destination: None,
        },
        ElemCmd::Rm { id, path } => MutationOp {
            kind: EventKind::Delete,
            target: first_match(&store, id, path)?,
            payload: None,
            destination: None,
        },
        ElemCmd::Mv {
            id,
            path,
            dest_path,
        } => MutationOp {
            kind: EventKind::Move,
            target: first_match(&store, id, path)?,
            payload: None,
            destination: Some(first_match(&store, id, dest_path)?),
        },
        ElemCmd::Update {
            id,
            path,
            payload_file,
        } => MutationOp {
            kind: EventKind::Update,
            target: first_match(&store, id, path)?,
            payload: Some(read_payload(payload_file)?),
            destination: None,
        },
    };
    let trace = run_cascade(&mut store, &[op], &config)?;
    store.flush()?;
    print_trace(cli, store.root(), &trace)
}

fn rule_cmd(cli: &Cli, cmd: &RuleCmd) -> Result<(), CliError> {
    match cmd {
        RuleCmd::List => {
            let (store, _lock) = open_locked(cli)?;
            if xml_output(cli) {
                print!("{}", serialize_rule_file(store.rules()));
            } else {
                for rule in store.list_rules() {
                    println!("{}", rule.id);
                }
            }
            Ok(())
        }
        RuleCmd::Add { file } => {
            let (mut store, _lock) = open_locked(cli)?;
            for rule in read_rules(file)? {
                let id = rule.id.clone();
                store.add_rule(rule)?;
                println!("added rule {id}");
            }
            store.flush()?;
            Ok(())
        }
        RuleCmd::Rm { rid } => {
            let (mut store, _lock) = open_locked(cli)?;
            store.remove_rule(rid)?;
            store.flush()?;
            println!("removed rule {rid}");
            Ok(())
        }
        RuleCmd::Set { rid, file } => {
            let (mut store, _lock) = open_locked(cli)?;
            let rules = read_rules(file)?;
            let [rule] = rules.as_slice() else {
                return Err(usage("rule set expects a file with exactly one rule"));
            };
            store.modify_rule(rid, rule.clone())?;
            store.flush()?;
            println!("replaced rule {rid}");
            Ok(())
        }
        RuleCmd::Extract { file } => {
            // read-only by design: nothing is stored or executed
            let doc = parse_document(&fs::read(file)?)?;
            let result = axml::xml::extract_embedded_rules(&doc)?;
            if xml_output(cli) {
                print!(
                    "{}",
                    serialize_rule_file(&RuleFile {
                        rules: result.rules
                    })
                );
            } else {
                for rule in &result.rules {
                    println!(
                        "{}",
                        axml::xml::serialize_element(&serialize_rule(rule).root)
                    );
                }
                for (site, err) in &result.errors {
                    eprintln!("rule at {site:?}: {err}");
                }
            }
            Ok(())
        }
    }
}

/// Accepts either a single `<rule>` document or a `<rules>` file.
fn read_rules(file: &Path) -> Result<Vec<axml::Rule>, CliError> {
    let bytes = fs::read(file)?;
    let doc = parse_document(&bytes)?;
    if axml::xml::canonical_name(&doc.root.name) == "rules" {
        Ok(parse_rule_file(&bytes)?.rules)
    } else {
        Ok(vec![parse_rule(&doc)?])
    }
}

fn link_cmd(cli: &Cli, cmd: &LinkCmd) -> Result<(), CliError> {
    let (mut store, _lock) = open_locked(cli)?;
    match cmd {
        LinkCmd::Add {
            origin,
            destinations,
            id,
        } => {
            let origin = NodeAddress::parse_href(origin)
                .ok_or_else(|| usage(format!("BAD_HREF: {origin}")))?;
            let dests = destinations
                .iter()
                .map(|d| {
                    NodeAddress::parse_href(d).ok_or_else(|| usage(format!("BAD_HREF: {d}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let link_id = id.clone().unwrap_or_else(|| {
                let mut n = 1;
                loop {
                    let candidate = format!("l{n}");
                    if !store.links().iter().any(|l| l.link_id == candidate) {
                        break candidate;
                    }
                    n += 1;
                }
            });
            store.add_link(Link {
                link_id: link_id.clone(),
                origin,
                destinations: dests,
            })?;
            store.flush()?;
            println!("added link {link_id}");
            Ok(())
        }
        LinkCmd::Rm { lid } => {
            store.remove_link(lid)?;
            store.flush()?;
            println!("removed link {lid}");
            Ok(())
        }
        LinkCmd::Check => {
            let report = store.check_referential_integrity();
            if xml_output(cli) {
                let trace = ExecutionTrace {
                    rounds: Vec::new(),
                    outcome: axml::exec::Outcome::Completed,
                    integrity: Some(report),
                    pruned: Vec::new(),
                };
                print!("{}", serialize_document(&serialize_trace(&trace)));
            } else if report.is_empty() {
                println!("ok");
            } else {
                for (l, d) in &report.dangling_external {
                    println!("dangling external: link {l} -> doc {d}");
                }
                for (l, a) in &report.dangling_internal {
                    println!("dangling internal: link {l} -> {a}");
                }
            }
            Ok(())
        }
    }
}
