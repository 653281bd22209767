//! Active XML document repository.
//!
//! Documents, links and ECA (event-condition-action) rules are all stored as
//! XML files. Rules may be embedded inside client documents; the engine
//! extracts them, detects primitive and composite events raised by document
//! mutations, evaluates conditions as conjunctions of path queries, and
//! executes actions with bounded cascading while a link base tracks
//! referential integrity.

pub mod engine;
pub mod exec;
pub mod model;
pub mod path;
pub mod store;
pub mod xml;

pub use model::{
    Action, ActionOp, Condition, DocMeta, DocTree, Element, EventKind, EventOccurrence,
    EventSpec, Link, MutationOp, Node, NodeAddress, Origin, Rule,
};
