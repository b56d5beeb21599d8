//! The tick engine.
//!
//! [`Ingestor`] is shared by every connection: it parses lines, drops
//! repeated structure records and queues the rest. [`Engine`] is owned by
//! the single tick driver; each [`Engine::tick`] drains the queues for one
//! window and publishes an immutable [`Frame`] holding one [`Snapshot`]
//! per monitored application.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::heatmap::{Gradient, HeatValues, HeatmapMode, HeatmapView, ScoreHistory};
use crate::layout::{aggregate_edges, layout, CityLayout, CommunicationEdge};
use crate::metrics::{MetricDescriptor, MetricError, MetricInput, MetricPlugin, MetricRegistry, MetricScores, TraceTouchCount, INSTANCE_COUNT};
use crate::structure::{AppKey, ClassId, Landscape, StructureTree};
use crate::trace::{AssemblyStats, ResolvedOperation, TraceAssembler, Window};
use crate::wire::{parse_fqn, parse_record, ConstructorNames, DynamicRecord, MonitoringRecord, OperationIdentity, StructuralRecord, StructureRegistry, WireError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("no snapshot has been published yet")]
    NoSnapshot,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown application `{0}`")]
    UnknownApp(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accepted {
    Structure { new: bool },
    Span,
    Blank,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BatchSummary {
    pub accepted: usize,
    pub rejected: usize,
    /// First few errors, 1-based line numbers.
    pub errors: Vec<LineError>,
}

const MAX_REPORTED_ERRORS: usize = 20;

#[derive(Debug, Default)]
struct Counters {
    spans: AtomicU64,
    structures_new: AtomicU64,
    structures_repeated: AtomicU64,
    rejected: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestTotals {
    pub spans: u64,
    pub structures_new: u64,
    pub structures_repeated: u64,
    pub rejected: u64,
}

/// Concurrent front door for monitoring records.
#[derive(Debug)]
pub struct Ingestor {
    constructors: ConstructorNames,
    registry: StructureRegistry,
    structural: Mutex<Vec<(StructuralRecord, OperationIdentity)>>,
    dynamic: Mutex<Vec<DynamicRecord>>,
    counters: Counters,
}

enum Parsed {
    Structure(StructuralRecord, OperationIdentity),
    Span(DynamicRecord),
}

impl Ingestor {
    pub fn new(constructors: ConstructorNames) -> Self {
        Ingestor {
            constructors,
            registry: StructureRegistry::new(),
            structural: Mutex::new(Vec::new()),
            dynamic: Mutex::new(Vec::new()),
            counters: Counters::default(),
        }
    }

    fn parse(&self, line: &[u8]) -> Result<Option<Parsed>, WireError> {
        if line.iter().all(u8::is_ascii_whitespace) {
            return Ok(None);
        }
        match parse_record(line)? {
            MonitoringRecord::Structural(s) => {
                let id = parse_fqn(&s.fqn, &self.constructors)?;
                if self.registry.insert(&s)? {
                    Ok(Some(Parsed::Structure(s, id)))
                } else {
                    self.counters.structures_repeated.fetch_add(1, Ordering::Relaxed);
                    Ok(None)
                }
            }
            MonitoringRecord::Dynamic(d) => Ok(Some(Parsed::Span(d))),
        }
    }

    fn enqueue(&self, structures: Vec<(StructuralRecord, OperationIdentity)>, spans: Vec<DynamicRecord>) {
        // structure first so a span never becomes visible before its structure
        if !structures.is_empty() {
            self.counters
                .structures_new
                .fetch_add(structures.len() as u64, Ordering::Relaxed);
            self.structural
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .extend(structures);
        }
        if !spans.is_empty() {
            self.counters.spans.fetch_add(spans.len() as u64, Ordering::Relaxed);
            self.dynamic
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .extend(spans);
        }
    }

    pub fn ingest_line(&self, line: &[u8]) -> Result<Accepted, WireError> {
        match self.parse(line) {
            Ok(None) if line.iter().all(u8::is_ascii_whitespace) => Ok(Accepted::Blank),
            Ok(None) => Ok(Accepted::Structure { new: false }),
            Ok(Some(Parsed::Structure(s, id))) => {
                self.enqueue(vec![(s, id)], Vec::new());
                Ok(Accepted::Structure { new: true })
            }
            Ok(Some(Parsed::Span(d))) => {
                self.enqueue(Vec::new(), vec![d]);
                Ok(Accepted::Span)
            }
            Err(e) => {
                self.counters.rejected.fetch_add(1, Ordering::Relaxed);
                Err(e)
            }
        }
    }

    /// Ingests a newline-delimited body. Valid lines are kept even when
    /// others fail; queue order follows line order.
    pub fn ingest_batch(&self, body: &[u8]) -> BatchSummary {
        let mut summary = BatchSummary::default();
        let mut structures = Vec::new();
        let mut spans = Vec::new();
        for (i, line) in body.split(|b| *b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            match self.parse(line) {
                Ok(parsed) => {
                    summary.accepted += 1;
                    match parsed {
                        Some(Parsed::Structure(s, id)) => structures.push((s, id)),
                        Some(Parsed::Span(d)) => spans.push(d),
                        None => {}
                    }
                }
                Err(e) => {
                    summary.rejected += 1;
                    if summary.errors.len() < MAX_REPORTED_ERRORS {
                        summary.errors.push(LineError {
                            line: i + 1,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        self.counters
            .rejected
            .fetch_add(summary.rejected as u64, Ordering::Relaxed);
        self.enqueue(structures, spans);
        summary
    }

    pub fn totals(&self) -> IngestTotals {
        IngestTotals {
            spans: self.counters.spans.load(Ordering::Relaxed),
            structures_new: self.counters.structures_new.load(Ordering::Relaxed),
            structures_repeated: self.counters.structures_repeated.load(Ordering::Relaxed),
            rejected: self.counters.rejected.load(Ordering::Relaxed),
        }
    }

    pub fn known_structures(&self) -> usize {
        self.registry.len()
    }

    fn take_structural(&self) -> Vec<(StructuralRecord, OperationIdentity)> {
        std::mem::take(&mut *self.structural.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn take_dynamic(&self) -> Vec<DynamicRecord> {
        std::mem::take(&mut *self.dynamic.lock().unwrap_or_else(|e| e.into_inner()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SnapshotStats {
    pub spans: usize,
    pub traces: usize,
    pub orphans: usize,
    /// Spans dropped with unresolved structure plus lines rejected at ingest.
    pub dropped_records: usize,
    pub invalid_traces: usize,
    pub deferred_spans: usize,
    pub duplicate_spans: usize,
    pub rejected_records: usize,
    pub new_structures: usize,
}

/// One application's view of one tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Snapshot {
    pub tick_index: u64,
    pub window: Window,
    pub app_key: AppKey,
    pub structure: StructureTree,
    pub geometry: CityLayout,
    pub edges: Vec<CommunicationEdge>,
    pub metric_scores: BTreeMap<String, MetricScores>,
    /// Tick-wide counters, shared by every application's snapshot.
    pub stats: SnapshotStats,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn scores(&self, metric: &str, class: &ClassId) -> f64 {
        self.metric_scores.get(metric).map(|s| s.get(class)).unwrap_or(0.0)
    }

    pub fn edge(&self, caller: &ClassId, callee: &ClassId) -> Option<&CommunicationEdge> {
        self.edges
            .iter()
            .find(|e| &e.caller_class_id == caller && &e.callee_class_id == callee)
    }

    /// Finds a class by its unqualified name.
    pub fn class_named(&self, name: &str) -> Option<ClassId> {
        self.structure.class_ids().into_iter().find(|c| c.class_name() == name)
    }
}

/// Everything published by one tick. Immutable once built.
#[derive(Debug, Clone)]
pub struct Frame {
    pub tick_index: u64,
    pub window: Window,
    pub snapshots: Vec<Snapshot>,
    pub stats: SnapshotStats,
    pub failed_metrics: Vec<String>,
    histories: BTreeMap<String, ScoreHistory>,
    app_classes: BTreeMap<AppKey, Vec<ClassId>>,
    gradient: Gradient,
}

impl Frame {
    pub fn snapshot(&self, app: Option<&AppKey>) -> Option<&Snapshot> {
        match app {
            Some(key) => self.snapshots.iter().find(|s| &s.app_key == key),
            None => self.snapshots.first(),
        }
    }

    pub fn history(&self, metric: &str) -> Option<&ScoreHistory> {
        self.histories.get(metric)
    }

    /// Heat-map field for one metric and mode, optionally restricted to
    /// one application's classes.
    pub fn heatmap(&self, metric: &str, mode: HeatmapMode, app: Option<&AppKey>) -> Result<HeatmapView, EngineError> {
        let history = self
            .histories
            .get(metric)
            .ok_or_else(|| EngineError::UnknownMetric(metric.to_string()))?;
        let mut values = history.values(mode);
        if let Some(key) = app {
            let classes = self
                .app_classes
                .get(key)
                .ok_or_else(|| EngineError::UnknownApp(key.to_string()))?;
            let keep: HeatValues = classes
                .iter()
                .filter_map(|c| values.remove(c).map(|v| (c.clone(), v)))
                .collect();
            values = keep;
        }
        Ok(HeatmapView::new(metric, mode, self.tick_index, values, &self.gradient))
    }
}

/// Single-owner tick driver state.
pub struct Engine {
    config: EngineConfig,
    ingestor: Arc<Ingestor>,
    landscape: Landscape,
    resolved: HashMap<String, ResolvedOperation>,
    assembler: TraceAssembler,
    metrics: MetricRegistry,
    histories: BTreeMap<String, ScoreHistory>,
    frames: VecDeque<Arc<Frame>>,
    next_tick: u64,
    rejected_seen: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("next_tick", &self.next_tick)
            .field("classes", &self.landscape.class_count())
            .field("metrics", &self.metrics)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        let mut metrics = MetricRegistry::new();
        for extra in &config.extra_metrics {
            match extra.as_str() {
                TraceTouchCount::ID => {
                    let _ = metrics.register(Box::new(TraceTouchCount));
                }
                other => tracing::warn!(metric = other, "unknown extra metric ignored"),
            }
        }
        Engine {
            ingestor: Arc::new(Ingestor::new(config.constructor_names.clone())),
            config,
            landscape: Landscape::new(),
            resolved: HashMap::new(),
            assembler: TraceAssembler::new(),
            metrics,
            histories: BTreeMap::new(),
            frames: VecDeque::new(),
            next_tick: 0,
            rejected_seen: 0,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn ingestor(&self) -> Arc<Ingestor> {
        self.ingestor.clone()
    }

    pub fn register_metric(&mut self, plugin: Box<dyn MetricPlugin>) -> Result<(), MetricError> {
        self.metrics.register(plugin)
    }

    pub fn metric_descriptors(&self) -> Vec<MetricDescriptor> {
        self.metrics.descriptors()
    }

    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }

    pub fn next_tick_index(&self) -> u64 {
        self.next_tick
    }

    pub fn latest(&self) -> Option<Arc<Frame>> {
        self.frames.back().cloned()
    }

    /// Retained frames, oldest first (at most `window_size + 1`).
    pub fn frames(&self) -> impl Iterator<Item = &Arc<Frame>> {
        self.frames.iter()
    }

    fn absorb_structure(&mut self) -> usize {
        let fresh = self.ingestor.take_structural();
        let count = fresh.len();
        for (record, id) in fresh {
            let class_id = self.landscape.insert_structural(&id, &record.hostname, &record.app_name);
            self.resolved.insert(
                record.structure_hash,
                ResolvedOperation {
                    class_id,
                    operation_name: id.operation_name,
                    is_constructor: id.is_constructor,
                },
            );
        }
        count
    }

    /// Processes one window and publishes its frame.
    pub fn tick(&mut self, window: Window) -> Arc<Frame> {
        let new_structures = self.absorb_structure();
        for record in self.ingestor.take_dynamic() {
            self.assembler.push(record);
        }
        let resolved = &self.resolved;
        let (assembly, asm_stats) = self
            .assembler
            .drain_window(window, |hash| resolved.get(hash).cloned());
        let events = assembly.call_events();

        let run = self.metrics.compute_all(&MetricInput {
            window,
            events: &events,
            traces: &assembly.traces,
            landscape: &self.landscape,
        });
        let failed_metrics: Vec<String> = run
            .failures
            .iter()
            .map(|f| match f {
                MetricError::Failed { metric, .. } => metric.clone(),
                other => other.to_string(),
            })
            .collect();
        // every registered metric advances exactly once; a failed one
        // records an empty window
        for descriptor in self.metrics.descriptors() {
            let id = descriptor.metric_id;
            let scores = run
                .scores
                .get(&id)
                .cloned()
                .unwrap_or_else(|| MetricScores::new(id.clone(), window));
            self.histories
                .entry(id.clone())
                .or_insert_with(|| ScoreHistory::new(id, self.config.window_size, self.config.decay))
                .push(scores);
        }

        let rejected_total = self.ingestor.totals().rejected;
        let rejected = (rejected_total - self.rejected_seen) as usize;
        self.rejected_seen = rejected_total;
        let stats = stats_from(&asm_stats, rejected, new_structures);

        let edges = aggregate_edges(&events);
        let empty_counts = MetricScores::new(INSTANCE_COUNT, window);
        let counts = run.scores.get(INSTANCE_COUNT).unwrap_or(&empty_counts);
        let mut snapshots = Vec::new();
        let mut app_classes = BTreeMap::new();
        for tree in self.landscape.apps() {
            let key = tree.key();
            let classes = tree.class_ids();
            let in_app = |c: &ClassId| self.landscape.app_of(c) == Some(&key);
            let metric_scores = run
                .scores
                .iter()
                .map(|(id, s)| {
                    let mut s = s.clone();
                    s.values.retain(|c, _| in_app(c));
                    (id.clone(), s)
                })
                .collect();
            snapshots.push(Snapshot {
                tick_index: self.next_tick,
                window,
                app_key: key.clone(),
                structure: tree.clone(),
                geometry: layout(tree, counts, &self.config.layout),
                edges: edges
                    .iter()
                    .filter(|e| in_app(&e.caller_class_id) || in_app(&e.callee_class_id))
                    .cloned()
                    .collect(),
                metric_scores,
                stats: stats.clone(),
            });
            app_classes.insert(key, classes);
        }

        let frame = Arc::new(Frame {
            tick_index: self.next_tick,
            window,
            snapshots,
            stats,
            failed_metrics,
            histories: self.histories.clone(),
            app_classes,
            gradient: self.config.gradient.clone(),
        });
        if self.frames.len() == self.config.window_size + 1 {
            self.frames.pop_front();
        }
        self.frames.push_back(frame.clone());
        self.next_tick += 1;
        frame
    }

    pub fn heatmap(&self, metric: &str, mode: HeatmapMode, app: Option<&AppKey>) -> Result<HeatmapView, EngineError> {
        self.latest().ok_or(EngineError::NoSnapshot)?.heatmap(metric, mode, app)
    }
}

fn stats_from(asm: &AssemblyStats, rejected: usize, new_structures: usize) -> SnapshotStats {
    SnapshotStats {
        spans: asm.spans,
        traces: asm.traces,
        orphans: asm.orphans,
        dropped_records: asm.dropped_unresolved + rejected,
        invalid_traces: asm.invalid_traces,
        deferred_spans: asm.deferred,
        duplicate_spans: asm.duplicate_spans,
        rejected_records: rejected,
        new_structures,
    }
}
