//! Browser bindings for the citypulse demo page.
//!
//! Each export returns a JSON string. The same functions are available
//! without the JavaScript wrapper under [`demo`], which is what the native
//! tests exercise.

use wasm_bindgen::prelude::*;

pub mod demo {
    use citypulse_core::heatmap::{value_to_color, Gradient, HeatmapMode, ScoreHistory};
    use citypulse_core::synth::{rebase, SynthScenario};
    use citypulse_core::trace::Window;
    use citypulse_core::{ClassId, Engine, EngineConfig, MetricScores};
    use serde::Serialize;

    const SEC: u64 = 1_000_000_000;

    /// Hex color for `value` on the default blue-to-red gradient.
    pub fn heat_color(value: f64, min: f64, max: f64) -> Result<String, String> {
        value_to_color(value, min, max, &Gradient::default())
            .map(|c| c.hex())
            .map_err(|e| e.to_string())
    }

    #[derive(Debug, Serialize, PartialEq)]
    pub struct TemporalSeries {
        pub snapshot: Vec<f64>,
        pub aggregated: Vec<f64>,
        pub windowed: Vec<f64>,
    }

    /// Runs one class's raw per-tick scores (comma or whitespace separated)
    /// through a score history and reports all three modes after each tick.
    pub fn temporal_series(raw: &str, window_size: usize, decay: f64) -> Result<TemporalSeries, String> {
        if window_size == 0 {
            return Err("window size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&decay) {
            return Err("decay must lie in [0, 1)".into());
        }
        let class = ClassId::from("demo");
        let mut history = ScoreHistory::new("demo", window_size, decay);
        let mut out = TemporalSeries {
            snapshot: Vec::new(),
            aggregated: Vec::new(),
            windowed: Vec::new(),
        };
        let values = raw
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`")));
        for (n, value) in values.enumerate() {
            let value = value?;
            if !value.is_finite() {
                return Err(format!("not a finite number: `{value}`"));
            }
            let mut scores = MetricScores::new("demo", Window::new(n as u64, n as u64 + 1));
            scores.values.insert(class.clone(), value);
            history.push(scores);
            let at = |mode| history.values(mode).get(&class).copied().unwrap_or(0.0);
            out.snapshot.push(at(HeatmapMode::Snapshot));
            out.aggregated.push(at(HeatmapMode::Aggregated));
            out.windowed.push(at(HeatmapMode::Windowed));
        }
        Ok(out)
    }

    #[derive(Debug, Serialize)]
    #[serde(rename_all = "camelCase")]
    pub struct DemoCity {
        pub snapshot: serde_json::Value,
        pub heatmap: serde_json::Value,
        /// Hex color per class id for the requested view.
        pub colors: std::collections::BTreeMap<String, String>,
    }

    /// Simulates `ticks` one-second windows of synthetic load and returns
    /// the final snapshot with the heat map for `metric` in `mode`.
    pub fn synthetic_city(
        classes: usize,
        calls_per_second: f64,
        ticks: usize,
        seed: u64,
        metric: &str,
        mode: &str,
    ) -> Result<DemoCity, String> {
        let mode: HeatmapMode = mode.parse().map_err(|e: citypulse_core::heatmap::HeatmapError| e.to_string())?;
        if ticks == 0 {
            return Err("need at least one tick".into());
        }
        let scenario = SynthScenario {
            class_count: classes,
            calls_per_second,
            seed,
            // load triples after a third of the run, then drops to half
            phases: vec![
                citypulse_core::synth::Phase {
                    from_secs: ticks as f64 / 3.0,
                    multiplier: 3.0,
                },
                citypulse_core::synth::Phase {
                    from_secs: 2.0 * ticks as f64 / 3.0,
                    multiplier: 0.5,
                },
            ],
            ..Default::default()
        };
        let mut generator = scenario.generator().map_err(|e| e.to_string())?.peekable();
        let config = EngineConfig {
            tick_seconds: 1.0,
            window_size: 3.min(ticks),
            ..Default::default()
        };
        let mut engine = Engine::new(config);
        for n in 0..ticks as u64 {
            let end = (n + 1) * SEC;
            let mut body = String::new();
            while let Some((offset, _)) = generator.peek() {
                if *offset >= end {
                    break;
                }
                let (_, record) = generator.next().expect("peeked");
                body.push_str(&rebase(&record, 0, 1.0).to_line());
                body.push('\n');
            }
            engine.ingestor().ingest_batch(body.as_bytes());
            engine.tick(Window::new(n * SEC, end));
        }
        let frame = engine.latest().expect("ticked at least once");
        let view = frame.heatmap(metric, mode, None).map_err(|e| e.to_string())?;
        let colors = view
            .values
            .keys()
            .filter_map(|c| view.color_of(c).map(|rgb| (c.as_str().to_string(), rgb.hex())))
            .collect();
        let snapshot = frame.snapshot(None).ok_or("no application")?;
        Ok(DemoCity {
            snapshot: serde_json::from_str(&snapshot.to_json()).map_err(|e| e.to_string())?,
            heatmap: serde_json::to_value(&view).map_err(|e| e.to_string())?,
            colors,
        })
    }
}

fn to_js<T: serde::Serialize>(result: Result<T, String>) -> Result<String, JsError> {
    result
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

/// `"#rrggbb"` for `value` within `[min, max]`.
#[wasm_bindgen(js_name = heatColor)]
pub fn heat_color(value: f64, min: f64, max: f64) -> Result<String, JsError> {
    demo::heat_color(value, min, max).map_err(|e| JsError::new(&e))
}

/// JSON `{snapshot, aggregated, windowed}` series for comma-separated raw scores.
#[wasm_bindgen(js_name = temporalSeries)]
pub fn temporal_series(raw: &str, window_size: usize, decay: f64) -> Result<String, JsError> {
    to_js(demo::temporal_series(raw, window_size, decay))
}

/// JSON `{snapshot, heatmap, colors}` for a simulated application.
#[wasm_bindgen(js_name = syntheticCity)]
pub fn synthetic_city(
    classes: usize,
    calls_per_second: f64,
    ticks: usize,
    seed: u32,
    metric: &str,
    mode: &str,
) -> Result<String, JsError> {
    to_js(demo::synthetic_city(classes, calls_per_second, ticks, seed as u64, metric, mode))
}
