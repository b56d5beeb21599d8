//! Trace reconstruction from spans and derivation of class-to-class call
//! events.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::structure::ClassId;
use crate::wire::DynamicRecord;

/// Half-open time window `[start_nanos, end_nanos)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Window {
    pub start_nanos: u64,
    pub end_nanos: u64,
}

impl Window {
    pub fn new(start_nanos: u64, end_nanos: u64) -> Self {
        debug_assert!(start_nanos <= end_nanos);
        Window {
            start_nanos,
            end_nanos,
        }
    }

    pub fn contains(&self, nanos: u64) -> bool {
        self.start_nanos <= nanos && nanos < self.end_nanos
    }

    pub fn len_nanos(&self) -> u64 {
        self.end_nanos - self.start_nanos
    }
}

/// What a structure hash resolves to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedOperation {
    pub class_id: ClassId,
    pub operation_name: String,
    pub is_constructor: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Span {
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub trace_id: String,
    pub class_id: ClassId,
    pub operation_name: String,
    pub is_constructor: bool,
    pub start_nanos: u64,
    pub end_nanos: u64,
}

impl Span {
    pub fn from_record(record: DynamicRecord, op: ResolvedOperation) -> Self {
        Span {
            span_id: record.span_id,
            parent_span_id: record.parent_span_id,
            trace_id: record.trace_id,
            class_id: op.class_id,
            operation_name: op.operation_name,
            is_constructor: op.is_constructor,
            start_nanos: record.start_nanos,
            end_nanos: record.end_nanos,
        }
    }
}

/// A forest of spans sharing one trace id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Trace {
    pub trace_id: String,
    /// Ordered by start time, ties by span id.
    pub spans: Vec<Span>,
    /// Span ids with no parent inside this trace.
    pub roots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("trace `{trace_id}` has a parent cycle through span `{span_id}`")]
pub struct CycleError {
    pub trace_id: String,
    pub span_id: String,
}

impl Trace {
    /// Builds a trace from spans of one trace id. Duplicate span ids keep
    /// the earliest occurrence. Parents that are not part of `spans` make
    /// the child a root.
    pub fn build(trace_id: impl Into<String>, mut spans: Vec<Span>) -> Result<Trace, CycleError> {
        let trace_id = trace_id.into();
        spans.sort_by(|a, b| (a.start_nanos, &a.span_id).cmp(&(b.start_nanos, &b.span_id)));
        let mut seen = HashSet::new();
        spans.retain(|s| seen.insert(s.span_id.clone()));

        let index: HashMap<&str, usize> = spans
            .iter()
            .enumerate()
            .map(|(i, s)| (s.span_id.as_str(), i))
            .collect();
        let parent_of: Vec<Option<usize>> = spans
            .iter()
            .map(|s| s.parent_span_id.as_deref().and_then(|p| index.get(p).copied()))
            .collect();

        // 0 = unvisited, 1 = on current path, 2 = known acyclic
        let mut state = vec![0u8; spans.len()];
        for start in 0..spans.len() {
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                match state[i] {
                    2 => break,
                    1 => {
                        return Err(CycleError {
                            trace_id,
                            span_id: spans[i].span_id.clone(),
                        })
                    }
                    _ => {
                        state[i] = 1;
                        path.push(i);
                        cur = parent_of[i];
                    }
                }
            }
            for i in path {
                state[i] = 2;
            }
        }

        let roots = spans
            .iter()
            .zip(&parent_of)
            .filter(|(_, p)| p.is_none())
            .map(|(s, _)| s.span_id.clone())
            .collect();
        Ok(Trace {
            trace_id,
            spans,
            roots,
        })
    }

    /// Longest root-to-leaf chain, counted in spans.
    pub fn depth(&self) -> usize {
        let index: HashMap<&str, &Span> = self.spans.iter().map(|s| (s.span_id.as_str(), s)).collect();
        self.spans
            .iter()
            .map(|s| {
                let mut depth = 1;
                let mut cur = s;
                while let Some(parent) = cur.parent_span_id.as_deref().and_then(|p| index.get(p)) {
                    depth += 1;
                    cur = parent;
                }
                depth
            })
            .max()
            .unwrap_or(0)
    }
}

/// One observed operation call, attributed to classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CallEvent {
    /// Absent for root spans, whose caller was not observed.
    pub caller: Option<ClassId>,
    pub callee: ClassId,
    pub is_constructor_call: bool,
    pub timestamp: u64,
}

/// One event per span; the caller is the parent span's class.
pub fn derive_call_events(trace: &Trace) -> Vec<CallEvent> {
    let by_id: HashMap<&str, &Span> = trace.spans.iter().map(|s| (s.span_id.as_str(), s)).collect();
    trace
        .spans
        .iter()
        .map(|s| CallEvent {
            caller: s
                .parent_span_id
                .as_deref()
                .and_then(|p| by_id.get(p))
                .map(|p| p.class_id.clone()),
            callee: s.class_id.clone(),
            is_constructor_call: s.is_constructor,
            timestamp: s.start_nanos,
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Assembly {
    pub traces: Vec<Trace>,
    /// Traces dropped because their parent links form a cycle.
    pub invalid_traces: usize,
}

impl Assembly {
    pub fn span_count(&self) -> usize {
        self.traces.iter().map(|t| t.spans.len()).sum()
    }

    pub fn call_events(&self) -> Vec<CallEvent> {
        self.traces.iter().flat_map(derive_call_events).collect()
    }
}

fn group_into_traces(spans: impl IntoIterator<Item = Span>) -> Assembly {
    let mut groups: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    for span in spans {
        groups.entry(span.trace_id.clone()).or_default().push(span);
    }
    let mut out = Assembly::default();
    for (trace_id, spans) in groups {
        match Trace::build(trace_id, spans) {
            Ok(trace) => out.traces.push(trace),
            Err(err) => {
                tracing::warn!(%err, "dropping trace");
                out.invalid_traces += 1;
            }
        }
    }
    out
}

/// Groups spans starting inside `window` into traces. Spans outside the
/// window are ignored; orphans become additional roots.
pub fn assemble(spans: impl IntoIterator<Item = Span>, window: Window) -> Assembly {
    group_into_traces(spans.into_iter().filter(|s| window.contains(s.start_nanos)))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssemblyStats {
    pub spans: usize,
    pub traces: usize,
    /// Spans promoted to roots after their parent never showed up.
    pub orphans: usize,
    /// Spans whose structure hash stayed unknown past the grace tick.
    pub dropped_unresolved: usize,
    pub invalid_traces: usize,
    pub duplicate_spans: usize,
    /// Spans held back for one more tick.
    pub deferred: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    record: DynamicRecord,
    waited: u32,
}

/// Buffers live spans between ticks and turns each window into traces.
///
/// A span is kept for at most one extra tick when its structure hash is
/// still unknown or its parent has not arrived; after that it is dropped
/// (unknown structure) or promoted to a root (missing parent). Spans of a
/// trace arriving after its window was drained form a continuation trace
/// with the same id.
#[derive(Debug, Default)]
pub struct TraceAssembler {
    pending: Vec<Pending>,
}

impl TraceAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: DynamicRecord) {
        self.pending.push(Pending { record, waited: 0 });
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Drains every buffered span that started before `window.end_nanos`.
    /// Late spans from earlier windows are attributed to this one.
    pub fn drain_window<F>(&mut self, window: Window, resolve: F) -> (Assembly, AssemblyStats)
    where
        F: Fn(&str) -> Option<ResolvedOperation>,
    {
        let mut stats = AssemblyStats::default();
        let mut keep = Vec::new();
        let mut groups: BTreeMap<String, Vec<(Span, u32, String)>> = BTreeMap::new();

        for p in std::mem::take(&mut self.pending) {
            if p.record.start_nanos >= window.end_nanos {
                keep.push(p);
                continue;
            }
            match resolve(&p.record.structure_hash) {
                Some(op) => {
                    let hash = p.record.structure_hash.clone();
                    let span = Span::from_record(p.record, op);
                    groups
                        .entry(span.trace_id.clone())
                        .or_default()
                        .push((span, p.waited, hash));
                }
                None if p.waited >= 1 => stats.dropped_unresolved += 1,
                None => {
                    stats.deferred += 1;
                    keep.push(Pending {
                        record: p.record,
                        waited: p.waited + 1,
                    });
                }
            }
        }

        let mut ready = Vec::new();
        for (_, mut group) in groups {
            group.sort_by(|a, b| (a.0.start_nanos, &a.0.span_id).cmp(&(b.0.start_nanos, &b.0.span_id)));
            let mut ids = HashSet::new();
            group.retain(|(s, _, _)| {
                let fresh = ids.insert(s.span_id.clone());
                if !fresh {
                    stats.duplicate_spans += 1;
                }
                fresh
            });
            // Defer fresh orphans; removing one can orphan its children, so
            // repeat until stable.
            loop {
                let present: HashSet<&str> = group.iter().map(|(s, _, _)| s.span_id.as_str()).collect();
                let deferred: Vec<usize> = group
                    .iter()
                    .enumerate()
                    .filter(|(_, (s, waited, _))| {
                        *waited == 0
                            && s.parent_span_id
                                .as_deref()
                                .is_some_and(|p| !present.contains(p))
                    })
                    .map(|(i, _)| i)
                    .collect();
                if deferred.is_empty() {
                    break;
                }
                for i in deferred.into_iter().rev() {
                    let (span, _, hash) = group.remove(i);
                    stats.deferred += 1;
                    keep.push(Pending {
                        record: span_to_record(span, hash),
                        waited: 1,
                    });
                }
            }
            let present: HashSet<&str> = group.iter().map(|(s, _, _)| s.span_id.as_str()).collect();
            stats.orphans += group
                .iter()
                .filter(|(s, _, _)| {
                    s.parent_span_id
                        .as_deref()
                        .is_some_and(|p| !present.contains(p))
                })
                .count();
            ready.extend(group.into_iter().map(|(s, _, _)| s));
        }

        self.pending = keep;
        let assembly = group_into_traces(ready);
        stats.spans = assembly.span_count();
        stats.traces = assembly.traces.len();
        stats.invalid_traces = assembly.invalid_traces;
        (assembly, stats)
    }
}

fn span_to_record(span: Span, structure_hash: String) -> DynamicRecord {
    DynamicRecord {
        trace_id: span.trace_id,
        span_id: span.span_id,
        parent_span_id: span.parent_span_id,
        start_nanos: span.start_nanos,
        end_nanos: span.end_nanos,
        structure_hash,
    }
}
