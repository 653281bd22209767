//! On-disk XML formats: well-formedness parsing and serialization of
//! document trees, plus the codecs for rules, rule files, link files, the
//! document registry, the event log, and embedded-rule acquisition.

mod codec;
mod parser;

pub use codec::{
    canonical_name, extract_embedded_rules, parse_link_file, parse_log, parse_registry,
    parse_rule, parse_rule_file, serialize_link_file, serialize_log, serialize_registry,
    serialize_rule, serialize_rule_file, AcquisitionResult, CodecError, RuleFile,
};
pub use parser::{parse_document, serialize_document, serialize_element, Malformed};
