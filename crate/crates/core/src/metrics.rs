//! Class-level dynamic coupling metrics and the metric plugin registry.
//!
//! The four built-ins count call events of one window:
//!
//! * `instance_count` - constructor calls received by a class
//! * `ic_cd` - calls initiated by a class (import coupling)
//! * `ec_cd` - calls received by a class (export coupling)
//! * `iec_cd` - sum of the two
//!
//! A root span has no observed caller: it counts toward the callee's
//! `ec_cd` and toward no class's `ic_cd`. Self-calls count on both sides.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::structure::{ClassId, Landscape};
pub use crate::trace::CallEvent;
use crate::trace::{Trace, Window};

pub const INSTANCE_COUNT: &str = "instance_count";
pub const IC_CD: &str = "ic_cd";
pub const EC_CD: &str = "ec_cd";
pub const IEC_CD: &str = "iec_cd";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Count,
    Score,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricDescriptor {
    pub metric_id: String,
    pub display_name: String,
    pub description: String,
    pub value_kind: ValueKind,
}

impl MetricDescriptor {
    pub fn new(metric_id: &str, display_name: &str, description: &str, value_kind: ValueKind) -> Self {
        MetricDescriptor {
            metric_id: metric_id.into(),
            display_name: display_name.into(),
            description: description.into(),
            value_kind,
        }
    }
}

/// Per-class values of one metric over one window. Classes without
/// activity may be missing and read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricScores {
    pub metric_id: String,
    pub window: Window,
    pub values: BTreeMap<ClassId, f64>,
}

impl MetricScores {
    pub fn new(metric_id: impl Into<String>, window: Window) -> Self {
        MetricScores {
            metric_id: metric_id.into(),
            window,
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, class: &ClassId) -> f64 {
        self.values.get(class).copied().unwrap_or(0.0)
    }

    fn bump(&mut self, class: &ClassId, by: f64) {
        *self.values.entry(class.clone()).or_insert(0.0) += by;
    }
}

pub fn instance_count(events: &[CallEvent], window: Window) -> MetricScores {
    let mut scores = MetricScores::new(INSTANCE_COUNT, window);
    for e in events.iter().filter(|e| e.is_constructor_call) {
        scores.bump(&e.callee, 1.0);
    }
    scores
}

pub fn ic_cd(events: &[CallEvent], window: Window) -> MetricScores {
    let mut scores = MetricScores::new(IC_CD, window);
    for caller in events.iter().filter_map(|e| e.caller.as_ref()) {
        scores.bump(caller, 1.0);
    }
    scores
}

pub fn ec_cd(events: &[CallEvent], window: Window) -> MetricScores {
    let mut scores = MetricScores::new(EC_CD, window);
    for e in events {
        scores.bump(&e.callee, 1.0);
    }
    scores
}

pub fn iec_cd(events: &[CallEvent], window: Window) -> MetricScores {
    let mut scores = MetricScores::new(IEC_CD, window);
    for e in events {
        scores.bump(&e.callee, 1.0);
        if let Some(caller) = &e.caller {
            scores.bump(caller, 1.0);
        }
    }
    scores
}

/// Everything a metric sees for one tick.
#[derive(Debug, Clone, Copy)]
pub struct MetricInput<'a> {
    pub window: Window,
    pub events: &'a [CallEvent],
    pub traces: &'a [Trace],
    pub landscape: &'a Landscape,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric `{0}` is already registered")]
    Duplicate(String),
    #[error("invalid metric descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("metric `{metric}` failed: {reason}")]
    Failed { metric: String, reason: String },
}

/// A per-class metric computed every tick.
///
/// `compute` must be deterministic for a fixed input and return scores
/// tagged with its own metric id.
pub trait MetricPlugin: Send + Sync {
    fn descriptor(&self) -> MetricDescriptor;
    fn compute(&self, input: &MetricInput<'_>) -> Result<MetricScores, MetricError>;
}

struct BuiltIn {
    descriptor: MetricDescriptor,
    compute: fn(&[CallEvent], Window) -> MetricScores,
}

impl MetricPlugin for BuiltIn {
    fn descriptor(&self) -> MetricDescriptor {
        self.descriptor.clone()
    }

    fn compute(&self, input: &MetricInput<'_>) -> Result<MetricScores, MetricError> {
        Ok((self.compute)(input.events, input.window))
    }
}

pub fn built_in_descriptors() -> Vec<MetricDescriptor> {
    vec![
        MetricDescriptor::new(
            INSTANCE_COUNT,
            "Instance count",
            "Number of objects of the class created in this window",
            ValueKind::Count,
        ),
        MetricDescriptor::new(
            IC_CD,
            "Import coupling (IC_CD)",
            "Operation calls initiated by objects of the class",
            ValueKind::Count,
        ),
        MetricDescriptor::new(
            EC_CD,
            "Export coupling (EC_CD)",
            "Operation calls received by objects of the class",
            ValueKind::Count,
        ),
        MetricDescriptor::new(
            IEC_CD,
            "Import & export coupling",
            "Operation calls sent and received by objects of the class",
            ValueKind::Count,
        ),
    ]
}

/// Distinct traces touching each class. Ships as an example plugin.
#[derive(Debug, Default, Clone, Copy)]
pub struct TraceTouchCount;

impl TraceTouchCount {
    pub const ID: &'static str = "trace_touch_count";
}

impl MetricPlugin for TraceTouchCount {
    fn descriptor(&self) -> MetricDescriptor {
        MetricDescriptor::new(
            Self::ID,
            "Trace touch count",
            "Number of traces in this window that executed an operation of the class",
            ValueKind::Count,
        )
    }

    fn compute(&self, input: &MetricInput<'_>) -> Result<MetricScores, MetricError> {
        let mut scores = MetricScores::new(Self::ID, input.window);
        for trace in input.traces {
            let touched: HashSet<&ClassId> = trace.spans.iter().map(|s| &s.class_id).collect();
            for class in touched {
                scores.bump(class, 1.0);
            }
        }
        Ok(scores)
    }
}

/// Result of running every registered metric for one tick.
#[derive(Debug, Default)]
pub struct MetricRun {
    pub scores: BTreeMap<String, MetricScores>,
    pub failures: Vec<MetricError>,
}

/// Ordered registry; built-ins are always present.
pub struct MetricRegistry {
    plugins: Vec<Box<dyn MetricPlugin>>,
}

impl std::fmt::Debug for MetricRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.plugins.iter().map(|p| p.descriptor().metric_id))
            .finish()
    }
}

impl Default for MetricRegistry {
    fn default() -> Self {
        let computes: [fn(&[CallEvent], Window) -> MetricScores; 4] =
            [instance_count, ic_cd, ec_cd, iec_cd];
        let plugins = built_in_descriptors()
            .into_iter()
            .zip(computes)
            .map(|(descriptor, compute)| Box::new(BuiltIn { descriptor, compute }) as Box<dyn MetricPlugin>)
            .collect();
        MetricRegistry { plugins }
    }
}

impl MetricRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, plugin: Box<dyn MetricPlugin>) -> Result<(), MetricError> {
        let descriptor = plugin.descriptor();
        if descriptor.metric_id.is_empty() {
            return Err(MetricError::InvalidDescriptor("empty metric id".into()));
        }
        if self.contains(&descriptor.metric_id) {
            return Err(MetricError::Duplicate(descriptor.metric_id));
        }
        self.plugins.push(plugin);
        Ok(())
    }

    pub fn contains(&self, metric_id: &str) -> bool {
        self.plugins.iter().any(|p| p.descriptor().metric_id == metric_id)
    }

    pub fn descriptors(&self) -> Vec<MetricDescriptor> {
        self.plugins.iter().map(|p| p.descriptor()).collect()
    }

    /// Runs every metric. A plugin that errors, panics, returns a foreign
    /// id, non-finite values or unknown classes is left out of `scores` and
    /// reported in `failures`; the others are unaffected.
    pub fn compute_all(&self, input: &MetricInput<'_>) -> MetricRun {
        let mut run = MetricRun::default();
        for plugin in &self.plugins {
            let id = plugin.descriptor().metric_id;
            let outcome = catch_unwind(AssertUnwindSafe(|| plugin.compute(input)))
                .unwrap_or_else(|panic| {
                    let reason = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "panicked".into());
                    Err(MetricError::Failed {
                        metric: id.clone(),
                        reason,
                    })
                })
                .and_then(|scores| validate(&id, scores, input));
            match outcome {
                Ok(scores) => {
                    run.scores.insert(id, scores);
                }
                Err(err) => {
                    tracing::error!(%err, "metric skipped this tick");
                    run.failures.push(err);
                }
            }
        }
        run
    }
}

fn validate(id: &str, mut scores: MetricScores, input: &MetricInput<'_>) -> Result<MetricScores, MetricError> {
    let fail = |reason: String| MetricError::Failed {
        metric: id.to_string(),
        reason,
    };
    if scores.metric_id != id {
        return Err(fail(format!("returned scores for `{}`", scores.metric_id)));
    }
    if let Some((class, v)) = scores.values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(fail(format!("non-finite value {v} for {class}")));
    }
    if let Some(class) = scores.values.keys().find(|c| !input.landscape.contains_class(c)) {
        return Err(fail(format!("unknown class {class}")));
    }
    scores.window = input.window;
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W: Window = Window {
        start_nanos: 0,
        end_nanos: 10,
    };

    fn ev(caller: Option<&str>, callee: &str, ctor: bool) -> CallEvent {
        CallEvent {
            caller: caller.map(ClassId::from),
            callee: ClassId::from(callee),
            is_constructor_call: ctor,
            timestamp: 0,
        }
    }

    fn repeat(e: CallEvent, n: usize) -> Vec<CallEvent> {
        std::iter::repeat_n(e, n).collect()
    }

    fn values(s: &MetricScores) -> Vec<(String, f64)> {
        s.values.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn kv(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn instance_count_counts_constructor_calls() {
        let mut events = repeat(ev(Some("A"), "X", true), 2);
        events.push(ev(None, "Y", true));
        events.push(ev(Some("A"), "Y", false));
        assert_eq!(values(&instance_count(&events, W)), kv(&[("X", 2.0), ("Y", 1.0)]));
        assert!(instance_count(&repeat(ev(None, "X", false), 3), W).values.is_empty());
    }

    #[test]
    fn ic_cd_sums_initiated_calls() {
        let mut events = repeat(ev(Some("A"), "B", false), 5);
        events.extend(repeat(ev(Some("A"), "C", false), 3));
        assert_eq!(values(&ic_cd(&events, W)), kv(&[("A", 8.0)]));
        assert!(ic_cd(&repeat(ev(None, "A", false), 4), W).values.is_empty());
    }

    #[test]
    fn ec_cd_counts_roots() {
        let mut events = repeat(ev(Some("A"), "B", false), 5);
        events.extend(repeat(ev(None, "B", false), 2));
        let ec = ec_cd(&events, W);
        assert_eq!(ec.get(&ClassId::from("B")), 7.0);
        assert_eq!(ec.get(&ClassId::from("A")), 0.0);
        assert!(ec_cd(&[], W).values.is_empty());
    }

    #[test]
    fn iec_cd_sums_both_sides() {
        let events = repeat(ev(Some("A"), "B", false), 5);
        assert_eq!(values(&iec_cd(&events, W)), kv(&[("A", 5.0), ("B", 5.0)]));
    }

    #[test]
    fn self_calls_count_on_both_sides() {
        let events = repeat(ev(Some("A"), "A", false), 3);
        // counted by hand: three events, each both initiated and received by A
        let (mut initiated, mut received) = (0.0, 0.0);
        for e in &events {
            if e.caller.as_ref() == Some(&ClassId::from("A")) {
                initiated += 1.0;
            }
            if e.callee == ClassId::from("A") {
                received += 1.0;
            }
        }
        assert_eq!(values(&ic_cd(&events, W)), kv(&[("A", initiated)]));
        assert_eq!(values(&ec_cd(&events, W)), kv(&[("A", received)]));
        assert_eq!(values(&iec_cd(&events, W)), kv(&[("A", initiated + received)]));
        assert_eq!(initiated + received, 6.0);
    }

    struct Fixed(&'static str, Result<MetricScores, MetricError>);

    impl MetricPlugin for Fixed {
        fn descriptor(&self) -> MetricDescriptor {
            MetricDescriptor::new(self.0, self.0, "", ValueKind::Score)
        }
        fn compute(&self, _: &MetricInput<'_>) -> Result<MetricScores, MetricError> {
            self.1.clone()
        }
    }

    struct Panicking;

    impl MetricPlugin for Panicking {
        fn descriptor(&self) -> MetricDescriptor {
            MetricDescriptor::new("boom", "Boom", "", ValueKind::Score)
        }
        fn compute(&self, _: &MetricInput<'_>) -> Result<MetricScores, MetricError> {
            panic!("plugin exploded")
        }
    }

    fn input<'a>(events: &'a [CallEvent], landscape: &'a Landscape) -> MetricInput<'a> {
        MetricInput {
            window: W,
            events,
            traces: &[],
            landscape,
        }
    }

    #[test]
    fn registry_lists_built_ins_and_plugins() {
        let mut registry = MetricRegistry::new();
        let ids: Vec<_> = registry.descriptors().into_iter().map(|d| d.metric_id).collect();
        assert_eq!(ids, [INSTANCE_COUNT, IC_CD, EC_CD, IEC_CD]);
        registry.register(Box::new(TraceTouchCount)).unwrap();
        assert!(registry.contains("trace_touch_count"));
        assert_eq!(
            registry.register(Box::new(Fixed(IC_CD, Ok(MetricScores::new(IC_CD, W))))),
            Err(MetricError::Duplicate(IC_CD.into()))
        );
        assert!(registry.register(Box::new(Fixed("", Ok(MetricScores::new("", W))))).is_err());
    }

    #[test]
    fn failing_plugins_are_isolated() {
        let mut registry = MetricRegistry::new();
        registry.register(Box::new(Panicking)).unwrap();
        registry
            .register(Box::new(Fixed(
                "errs",
                Err(MetricError::Failed {
                    metric: "errs".into(),
                    reason: "nope".into(),
                }),
            )))
            .unwrap();
        registry
            .register(Box::new(Fixed("wrong_id", Ok(MetricScores::new("other", W)))))
            .unwrap();
        let mut ghost = MetricScores::new("ghost", W);
        ghost.values.insert(ClassId::from("not-a-class"), 1.0);
        registry.register(Box::new(Fixed("ghost", Ok(ghost)))).unwrap();

        let landscape = Landscape::new();
        let run = registry.compute_all(&input(&[], &landscape));
        assert_eq!(run.failures.len(), 4);
        let ids: Vec<_> = run.scores.keys().cloned().collect();
        assert_eq!(ids, [EC_CD, IC_CD, IEC_CD, INSTANCE_COUNT]);
    }

    // Independent single-pass oracle over the raw event list.
    fn brute_force(events: &[CallEvent]) -> [BTreeMap<ClassId, f64>; 4] {
        let mut out: [BTreeMap<ClassId, f64>; 4] = Default::default();
        let mut classes: Vec<ClassId> = Vec::new();
        for e in events {
            classes.push(e.callee.clone());
            classes.extend(e.caller.clone());
        }
        classes.sort();
        classes.dedup();
        for c in classes {
            let ctor = events.iter().filter(|e| e.callee == c && e.is_constructor_call).count();
            let init = events.iter().filter(|e| e.caller.as_ref() == Some(&c)).count();
            let recv = events.iter().filter(|e| e.callee == c).count();
            for (slot, n) in out.iter_mut().zip([ctor, init, recv, init + recv]) {
                if n > 0 {
                    slot.insert(c.clone(), n as f64);
                }
            }
        }
        out
    }

    fn event_strategy() -> impl Strategy<Value = CallEvent> {
        (proptest::option::of(0u8..12), 0u8..12, any::<bool>()).prop_map(|(caller, callee, ctor)| CallEvent {
            caller: caller.map(|c| ClassId::from(format!("C{c}").as_str())),
            callee: ClassId::from(format!("C{callee}").as_str()),
            is_constructor_call: ctor,
            timestamp: 0,
        })
    }

    proptest! {
        #[test]
        fn built_ins_match_oracle(events in proptest::collection::vec(event_strategy(), 0..300)) {
            let [ctor, init, recv, both] = brute_force(&events);
            prop_assert_eq!(&instance_count(&events, W).values, &ctor);
            prop_assert_eq!(&ic_cd(&events, W).values, &init);
            prop_assert_eq!(&ec_cd(&events, W).values, &recv);
            prop_assert_eq!(&iec_cd(&events, W).values, &both);

            let ec = ec_cd(&events, W);
            let ic = ic_cd(&events, W);
            let inst = instance_count(&events, W);
            prop_assert_eq!(ec.values.values().sum::<f64>(), events.len() as f64);
            let with_caller = events.iter().filter(|e| e.caller.is_some()).count();
            prop_assert_eq!(ic.values.values().sum::<f64>(), with_caller as f64);
            for (c, v) in &inst.values {
                prop_assert!(*v <= ec.get(c));
            }
        }
    }
}
