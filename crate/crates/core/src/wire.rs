//! Monitoring wire format.
//!
//! One JSON object per line. A `structure` message names an executed
//! operation (host, application, fully qualified name) under a
//! producer-chosen hash; a `span` message carries the timing of one
//! execution and points back at its structure through that hash.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Operation names treated as object construction unless configured otherwise.
pub const DEFAULT_CONSTRUCTOR_NAMES: [&str; 2] = ["<init>", "new"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown record kind `{0}`")]
    UnknownKind(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("span ends before it starts ({end} < {start})")]
    EndBeforeStart { start: u64, end: u64 },
    #[error("fully qualified name `{0}` needs at least a class and an operation")]
    TooFewSegments(String),
    #[error("structure hash `{hash}` already registered for a different operation ({existing})")]
    HashCollision { hash: String, existing: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StructuralRecord {
    pub structure_hash: String,
    pub hostname: String,
    pub app_name: String,
    pub fqn: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DynamicRecord {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub start_nanos: u64,
    pub end_nanos: u64,
    pub structure_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MonitoringRecord {
    Structural(StructuralRecord),
    Dynamic(DynamicRecord),
}

impl MonitoringRecord {
    /// Serializes back into one wire line (without the trailing newline).
    pub fn to_line(&self) -> String {
        let value = match self {
            MonitoringRecord::Structural(s) => serde_json::json!({
                "kind": "structure",
                "structureHash": s.structure_hash,
                "hostname": s.hostname,
                "appName": s.app_name,
                "fqn": s.fqn,
            }),
            MonitoringRecord::Dynamic(d) => serde_json::json!({
                "kind": "span",
                "traceId": d.trace_id,
                "spanId": d.span_id,
                "parentSpanId": d.parent_span_id,
                "startNanos": d.start_nanos,
                "endNanos": d.end_nanos,
                "structureHash": d.structure_hash,
            }),
        };
        value.to_string()
    }
}

// Every field optional so that a missing one maps to `MissingField` rather
// than a generic serde message.
#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawRecord {
    kind: Option<String>,
    structure_hash: Option<String>,
    hostname: Option<String>,
    app_name: Option<String>,
    fqn: Option<String>,
    trace_id: Option<String>,
    span_id: Option<String>,
    #[serde(default)]
    parent_span_id: Option<String>,
    start_nanos: Option<u64>,
    end_nanos: Option<u64>,
}

fn required(value: Option<String>, field: &'static str) -> Result<String, WireError> {
    match value {
        None => Err(WireError::MissingField(field)),
        Some(v) if v.is_empty() => Err(WireError::InvalidField {
            field,
            reason: "must not be empty".into(),
        }),
        Some(v) => Ok(v),
    }
}

/// Parses and validates one wire message.
pub fn parse_record(line: &[u8]) -> Result<MonitoringRecord, WireError> {
    let raw: RawRecord =
        serde_json::from_slice(line).map_err(|e| WireError::Malformed(e.to_string()))?;
    let kind = raw.kind.ok_or(WireError::MissingField("kind"))?;
    match kind.as_str() {
        "structure" => {
            let fqn = required(raw.fqn, "fqn")?;
            if !fqn.contains('.') {
                return Err(WireError::TooFewSegments(fqn));
            }
            Ok(MonitoringRecord::Structural(StructuralRecord {
                structure_hash: required(raw.structure_hash, "structureHash")?,
                hostname: required(raw.hostname, "hostname")?,
                app_name: required(raw.app_name, "appName")?,
                fqn,
            }))
        }
        "span" => {
            let start = raw.start_nanos.ok_or(WireError::MissingField("startNanos"))?;
            let end = raw.end_nanos.ok_or(WireError::MissingField("endNanos"))?;
            if end < start {
                return Err(WireError::EndBeforeStart { start, end });
            }
            Ok(MonitoringRecord::Dynamic(DynamicRecord {
                trace_id: required(raw.trace_id, "traceId")?,
                span_id: required(raw.span_id, "spanId")?,
                parent_span_id: raw.parent_span_id.filter(|p| !p.is_empty()),
                start_nanos: start,
                end_nanos: end,
                structure_hash: required(raw.structure_hash, "structureHash")?,
            }))
        }
        other => Err(WireError::UnknownKind(other.to_string())),
    }
}

/// Parsed form of a fully qualified operation name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OperationIdentity {
    pub package_path: Vec<String>,
    pub class_name: String,
    pub operation_name: String,
    pub is_constructor: bool,
}

impl OperationIdentity {
    /// Joins the identity back into its dotted form.
    pub fn fqn(&self) -> String {
        let mut parts: Vec<&str> = self.package_path.iter().map(String::as_str).collect();
        parts.push(&self.class_name);
        parts.push(&self.operation_name);
        parts.join(".")
    }
}

/// Set of operation names that count as object construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructorNames(BTreeSet<String>);

impl ConstructorNames {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ConstructorNames(names.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, operation: &str) -> bool {
        self.0.contains(operation)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for ConstructorNames {
    fn default() -> Self {
        ConstructorNames::new(DEFAULT_CONSTRUCTOR_NAMES)
    }
}

/// Splits `pkg.sub.Class.operation` into its parts.
pub fn parse_fqn(fqn: &str, constructors: &ConstructorNames) -> Result<OperationIdentity, WireError> {
    let mut segments: Vec<&str> = fqn.split('.').collect();
    if segments.len() < 2 || segments.iter().any(|s| s.is_empty()) {
        return Err(WireError::TooFewSegments(fqn.to_string()));
    }
    let operation_name = segments.pop().unwrap_or_default().to_string();
    let class_name = segments.pop().unwrap_or_default().to_string();
    Ok(OperationIdentity {
        package_path: segments.into_iter().map(str::to_string).collect(),
        is_constructor: constructors.contains(&operation_name),
        class_name,
        operation_name,
    })
}

/// Thread-safe registry of seen structure hashes.
///
/// `insert` is an atomic check-and-insert so concurrent connections never
/// forward the same hash twice.
#[derive(Debug, Default)]
pub struct StructureRegistry {
    known: Mutex<HashMap<String, StructuralRecord>>,
}

impl StructureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `Ok(true)` the first time a hash is seen and `Ok(false)` for
    /// exact repeats. A repeat hash naming a different operation is rejected.
    pub fn insert(&self, record: &StructuralRecord) -> Result<bool, WireError> {
        let mut known = self.known.lock().unwrap_or_else(|e| e.into_inner());
        match known.get(&record.structure_hash) {
            Some(existing) if existing == record => Ok(false),
            Some(existing) => Err(WireError::HashCollision {
                hash: record.structure_hash.clone(),
                existing: format!("{}/{}/{}", existing.hostname, existing.app_name, existing.fqn),
            }),
            None => {
                known.insert(record.structure_hash.clone(), record.clone());
                Ok(true)
            }
        }
    }

    pub fn get(&self, hash: &str) -> Option<StructuralRecord> {
        self.known
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(hash)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.known.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shorthand for [`StructureRegistry::insert`].
pub fn dedup_structural(record: &StructuralRecord, registry: &StructureRegistry) -> Result<bool, WireError> {
    registry.insert(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn structure(hash: &str, fqn: &str) -> StructuralRecord {
        StructuralRecord {
            structure_hash: hash.into(),
            hostname: "host".into(),
            app_name: "app".into(),
            fqn: fqn.into(),
        }
    }

    #[test]
    fn parses_structure_message() {
        let line = br#"{"kind":"structure","structureHash":"h1","hostname":"web1","appName":"shop","fqn":"a.B.c"}"#;
        let rec = parse_record(line).unwrap();
        assert_eq!(
            rec,
            MonitoringRecord::Structural(StructuralRecord {
                structure_hash: "h1".into(),
                hostname: "web1".into(),
                app_name: "shop".into(),
                fqn: "a.B.c".into(),
            })
        );
    }

    #[test]
    fn parses_span_and_ignores_extra_fields() {
        let line = br#"{"kind":"span","traceId":"t","spanId":"s","parentSpanId":null,"startNanos":5,"endNanos":9,"structureHash":"h","extra":[1,2]}"#;
        match parse_record(line).unwrap() {
            MonitoringRecord::Dynamic(d) => {
                assert_eq!(d.parent_span_id, None);
                assert_eq!((d.start_nanos, d.end_nanos), (5, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_end_before_start() {
        let line = br#"{"kind":"span","traceId":"t","spanId":"s","startNanos":10,"endNanos":9,"structureHash":"h"}"#;
        assert_eq!(
            parse_record(line),
            Err(WireError::EndBeforeStart { start: 10, end: 9 })
        );
    }

    #[test]
    fn rejects_span_without_structure_hash() {
        let line = br#"{"kind":"span","traceId":"t","spanId":"s","startNanos":1,"endNanos":2}"#;
        assert_eq!(parse_record(line), Err(WireError::MissingField("structureHash")));
    }

    #[test]
    fn rejects_unknown_kind_and_garbage() {
        assert_eq!(
            parse_record(br#"{"kind":"metric"}"#),
            Err(WireError::UnknownKind("metric".into()))
        );
        assert!(matches!(parse_record(b"{not json"), Err(WireError::Malformed(_))));
        assert_eq!(parse_record(b"{}"), Err(WireError::MissingField("kind")));
    }

    #[test]
    fn structure_fqn_needs_a_dot() {
        let line = br#"{"kind":"structure","structureHash":"h","hostname":"x","appName":"y","fqn":"Single"}"#;
        assert!(matches!(parse_record(line), Err(WireError::TooFewSegments(_))));
    }

    #[test]
    fn fqn_with_packages_and_constructor() {
        let id = parse_fqn(
            "org.springframework.samples.petclinic.model.BaseEntity.<init>",
            &ConstructorNames::default(),
        )
        .unwrap();
        assert_eq!(
            id.package_path,
            ["org", "springframework", "samples", "petclinic", "model"]
        );
        assert_eq!(id.class_name, "BaseEntity");
        assert_eq!(id.operation_name, "<init>");
        assert!(id.is_constructor);
    }

    #[test]
    fn fqn_without_package() {
        let id = parse_fqn("A.b", &ConstructorNames::default()).unwrap();
        assert!(id.package_path.is_empty());
        assert_eq!((id.class_name.as_str(), id.operation_name.as_str()), ("A", "b"));
        assert!(!id.is_constructor);
    }

    #[test]
    fn fqn_with_one_segment_fails() {
        assert!(parse_fqn("Single", &ConstructorNames::default()).is_err());
        assert!(parse_fqn("a..b", &ConstructorNames::default()).is_err());
    }

    #[test]
    fn constructor_set_is_configurable() {
        let names = ConstructorNames::new(["create"]);
        assert!(parse_fqn("A.create", &names).unwrap().is_constructor);
        assert!(!parse_fqn("A.<init>", &names).unwrap().is_constructor);
    }

    #[test]
    fn dedup_repeats() {
        let registry = StructureRegistry::new();
        let rec = structure("h1", "a.B.c");
        assert!(dedup_structural(&rec, &registry).unwrap());
        let repeats = (0..999)
            .filter(|_| dedup_structural(&rec, &registry).unwrap())
            .count();
        assert_eq!(repeats, 0);
        assert_eq!(registry.len(), 1);
    }

    #[test]
    fn dedup_detects_collision() {
        let registry = StructureRegistry::new();
        registry.insert(&structure("h1", "a.B.c")).unwrap();
        assert!(matches!(
            registry.insert(&structure("h1", "a.B.d")),
            Err(WireError::HashCollision { .. })
        ));
        assert_eq!(registry.get("h1").unwrap().fqn, "a.B.c");
    }

    #[test]
    fn concurrent_dedup_forwards_each_hash_once() {
        let registry = std::sync::Arc::new(StructureRegistry::new());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let registry = registry.clone();
                std::thread::spawn(move || {
                    (0..100)
                        .filter(|i| registry.insert(&structure(&format!("h{i}"), "a.B.c")).unwrap())
                        .count()
                })
            })
            .collect();
        let inserted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(inserted, 100);
    }

    fn segment() -> impl Strategy<Value = String> {
        "[A-Za-z_<>$][A-Za-z0-9_<>$]{0,8}"
    }

    proptest! {
        #[test]
        fn parse_fqn_inverts_join(
            package in proptest::collection::vec(segment(), 0..5),
            class in segment(),
            op in segment(),
        ) {
            let joined = OperationIdentity {
                package_path: package.clone(),
                class_name: class.clone(),
                operation_name: op.clone(),
                is_constructor: false,
            }
            .fqn();
            let parsed = parse_fqn(&joined, &ConstructorNames::default()).unwrap();
            prop_assert_eq!(parsed.package_path, package);
            prop_assert_eq!(parsed.class_name, class);
            prop_assert_eq!(parsed.operation_name, op);
        }

        #[test]
        fn structure_stream_forwards_each_hash_at_most_once(
            hashes in proptest::collection::vec(0u8..20, 0..200)
        ) {
            let registry = StructureRegistry::new();
            let mut forwarded = Vec::new();
            for h in hashes {
                let rec = structure(&format!("h{h}"), &format!("p.C{h}.op"));
                if registry.insert(&rec).unwrap() {
                    forwarded.push(h);
                }
            }
            let unique: BTreeSet<_> = forwarded.iter().collect();
            prop_assert_eq!(unique.len(), forwarded.len());
        }

        #[test]
        fn line_round_trip(
            start in 0u64..1_000_000,
            len in 0u64..1_000,
            parent in proptest::option::of("[a-z0-9]{1,6}"),
        ) {
            let rec = MonitoringRecord::Dynamic(DynamicRecord {
                trace_id: "t".into(),
                span_id: "s".into(),
                parent_span_id: parent,
                start_nanos: start,
                end_nanos: start + len,
                structure_hash: "h".into(),
            });
            prop_assert_eq!(parse_record(rec.to_line().as_bytes()).unwrap(), rec);
        }
    }
}
