use std::collections::BTreeSet;

use citypulse_core::config::EngineConfig;
use citypulse_core::engine::Engine;
use citypulse_core::heatmap::{aggregate_step, HeatValues, HeatmapMode};
use citypulse_core::metrics::{EC_CD, IC_CD, IEC_CD, INSTANCE_COUNT};
use citypulse_core::synth::{petclinic_fixture, rebase, ReplayScript, SynthScenario};
use citypulse_core::trace::Window;
use citypulse_core::wire::MonitoringRecord;

const SEC: u64 = 1_000_000_000;

fn feed(engine: &Engine, records: impl IntoIterator<Item = MonitoringRecord>) {
    let mut body = String::new();
    for r in records {
        body.push_str(&r.to_line());
        body.push('\n');
    }
    let summary = engine.ingestor().ingest_batch(body.as_bytes());
    assert_eq!(summary.rejected, 0, "{:?}", summary.errors);
}

fn petclinic_engine() -> (Engine, std::sync::Arc<citypulse_core::Frame>) {
    let mut engine = Engine::new(EngineConfig::default());
    let script = ReplayScript::parse(&petclinic_fixture()).unwrap();
    feed(&engine, script.entries.iter().map(|e| rebase(&e.record, 100 * SEC, 1.0)));
    let frame = engine.tick(Window::new(100 * SEC, 110 * SEC));
    (engine, frame)
}

#[test]
fn petclinic_reproduces_narrated_numbers() {
    let (_, frame) = petclinic_engine();
    let snap = frame.snapshot(None).unwrap();
    let base = snap.class_named("BaseEntity").unwrap();
    let person = snap.class_named("Person").unwrap();
    assert_eq!(snap.scores(INSTANCE_COUNT, &base), 46.0);
    assert_eq!(snap.edge(&person, &base).unwrap().call_count, 24);
    assert_eq!(snap.scores(IC_CD, &person), 24.0);

    // BaseEntity talks to exactly two classes
    let partners: BTreeSet<_> = snap
        .edges
        .iter()
        .filter_map(|e| {
            if e.callee_class_id == base {
                Some(e.caller_class_id.class_name().to_string())
            } else if e.caller_class_id == base {
                Some(e.callee_class_id.class_name().to_string())
            } else {
                None
            }
        })
        .collect();
    assert_eq!(partners, BTreeSet::from(["NamedEntity".to_string(), "Person".to_string()]));

    let tallest = snap
        .geometry
        .boxes
        .iter()
        .max_by(|a, b| a.height.total_cmp(&b.height))
        .unwrap();
    assert_eq!(tallest.node_id, base.as_str());

    let filter = snap.class_named("OncePerRequestFilter").unwrap();
    assert_eq!(snap.scores(IC_CD, &filter), 28.0);
    assert_eq!(snap.stats.orphans, 0);
    assert_eq!(snap.stats.traces, 28);
}

#[test]
fn petclinic_heatmap_is_red_on_base_entity() {
    let (engine, _) = petclinic_engine();
    let view = engine.heatmap(INSTANCE_COUNT, HeatmapMode::Snapshot, None).unwrap();
    assert_eq!(view.legend_max, 46.0);
    let (hot, _) = view.values.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert_eq!(hot.class_name(), "BaseEntity");
    assert_eq!(view.color_of(hot).unwrap().0, [255, 0, 0]);
}

#[test]
fn identical_input_gives_identical_scores() {
    let mut engine = Engine::new(EngineConfig::default());
    let script = ReplayScript::parse(&petclinic_fixture()).unwrap();
    let mut frames = Vec::new();
    for k in 0..2u64 {
        let base = (100 + 10 * k) * SEC;
        // the second pass repeats structure records; they are deduplicated
        feed(&engine, script.entries.iter().map(|e| rebase(&e.record, base, 1.0)));
        frames.push(engine.tick(Window::new(base, base + 10 * SEC)));
    }
    let a = frames[0].snapshot(None).unwrap();
    let b = frames[1].snapshot(None).unwrap();
    assert_eq!(b.tick_index, a.tick_index + 1);
    let strip = |s: &citypulse_core::Snapshot| {
        s.metric_scores
            .iter()
            .map(|(k, v)| (k.clone(), v.values.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(a), strip(b));
    assert_eq!(a.geometry, b.geometry);
    assert_eq!(b.stats.new_structures, 0);
    assert_eq!(engine.ingestor().totals().structures_repeated as usize, a.stats.new_structures);
}

#[test]
fn published_snapshot_serializes_identically() {
    let (engine, frame) = petclinic_engine();
    let again = engine.latest().unwrap();
    assert_eq!(
        frame.snapshot(None).unwrap().to_json(),
        again.snapshot(None).unwrap().to_json()
    );
}

#[test]
fn synth_rate_matches_received_calls() {
    let mut engine = Engine::new(EngineConfig::default());
    let scenario = SynthScenario {
        calls_per_second: 100.0,
        ..Default::default()
    };
    let emitted: Vec<_> = scenario
        .generator()
        .unwrap()
        .take_while(|(offset, _)| *offset < 10 * SEC)
        .map(|(_, r)| rebase(&r, 50 * SEC, 1.0))
        .collect();
    let spans = emitted
        .iter()
        .filter(|r| matches!(r, MonitoringRecord::Dynamic(_)))
        .count();
    feed(&engine, emitted);
    let frame = engine.tick(Window::new(50 * SEC, 60 * SEC));
    let snap = frame.snapshot(None).unwrap();
    let total_ec: f64 = snap.metric_scores[EC_CD].values.values().sum();
    assert_eq!(total_ec as usize, spans);
    assert!((total_ec - 1000.0).abs() <= 50.0, "{total_ec}");
    assert_eq!(snap.stats.spans, spans);
}

#[test]
fn no_constructors_means_no_instances() {
    let mut engine = Engine::new(EngineConfig::default());
    let scenario = SynthScenario {
        constructor_fraction: 0.0,
        ..Default::default()
    };
    feed(
        &engine,
        scenario
            .generator()
            .unwrap()
            .take_while(|(o, _)| *o < 5 * SEC)
            .map(|(_, r)| r),
    );
    let frame = engine.tick(Window::new(0, 10 * SEC));
    let snap = frame.snapshot(None).unwrap();
    assert!(snap.metric_scores[INSTANCE_COUNT].values.is_empty());
    assert!(!snap.metric_scores[IEC_CD].values.is_empty());
}

#[test]
fn histories_advance_exactly_once_per_tick() {
    let config = EngineConfig {
        window_size: 4,
        ..Default::default()
    };
    let mut engine = Engine::new(config);
    let mut generator = SynthScenario {
        calls_per_second: 40.0,
        phases: vec![
            citypulse_core::synth::Phase {
                from_secs: 3.0,
                multiplier: 0.2,
            },
            citypulse_core::synth::Phase {
                from_secs: 6.0,
                multiplier: 2.0,
            },
        ],
        ..Default::default()
    }
    .generator()
    .unwrap()
    .peekable();

    let mut raw: Vec<HeatValues> = Vec::new();
    for n in 0..12u64 {
        let end = (n + 1) * SEC;
        let mut batch = Vec::new();
        while let Some((offset, _)) = generator.peek() {
            if *offset >= end {
                break;
            }
            batch.push(generator.next().unwrap().1);
        }
        feed(&engine, batch);
        let frame = engine.tick(Window::new(n * SEC, end));
        let history = frame.history(IEC_CD).unwrap();
        assert_eq!(history.len(), ((n + 1) as usize).min(5));
        raw.push(frame.snapshot(None).unwrap().metric_scores[IEC_CD].values.clone());

        // oracle: replay the whole raw sequence through the recurrence
        let mut oracle = HeatValues::new();
        for values in &raw {
            let mut scores = citypulse_core::MetricScores::new(IEC_CD, Window::new(0, 1));
            scores.values = values.clone();
            oracle = aggregate_step(&oracle, &scores, 0.5);
        }
        for (class, v) in history.aggregate() {
            assert!((v - oracle[class]).abs() < 1e-9);
        }

        let windowed = frame.heatmap(IEC_CD, HeatmapMode::Windowed, None).unwrap();
        let past = &raw[raw.len().saturating_sub(5)];
        let latest = raw.last().unwrap();
        for (class, v) in &windowed.values {
            let expect = latest.get(class).unwrap_or(&0.0) - past.get(class).unwrap_or(&0.0);
            assert_eq!(*v, expect);
        }
    }
}
