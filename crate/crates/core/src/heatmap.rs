//! Temporal heat-map modes and the blue-to-red color legend.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricScores;
use crate::structure::ClassId;

pub type HeatValues = BTreeMap<ClassId, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeatmapError {
    #[error("cannot color non-finite value {0}")]
    NonFinite(f64),
    #[error("legend range is inverted ({min} > {max})")]
    InvertedRange { min: f64, max: f64 },
    #[error("gradient needs at least two stops")]
    ShortGradient,
    #[error("unknown heat map mode `{0}`")]
    UnknownMode(String),
}

/// The three interchangeable heat-map modes, cycled in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapMode {
    Snapshot,
    Aggregated,
    Windowed,
}

impl HeatmapMode {
    pub const ALL: [HeatmapMode; 3] = [HeatmapMode::Snapshot, HeatmapMode::Aggregated, HeatmapMode::Windowed];

    pub fn next(self) -> Self {
        match self {
            HeatmapMode::Snapshot => HeatmapMode::Aggregated,
            HeatmapMode::Aggregated => HeatmapMode::Windowed,
            HeatmapMode::Windowed => HeatmapMode::Snapshot,
        }
    }

    pub fn prev(self) -> Self {
        self.next().next()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeatmapMode::Snapshot => "snapshot",
            HeatmapMode::Aggregated => "aggregated",
            HeatmapMode::Windowed => "windowed",
        }
    }
}

impl fmt::Display for HeatmapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeatmapMode {
    type Err = HeatmapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeatmapMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HeatmapError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLUE: Rgb = Rgb([0, 0, 255]);
    pub const CYAN: Rgb = Rgb([0, 255, 255]);
    pub const GREEN: Rgb = Rgb([0, 255, 0]);
    pub const YELLOW: Rgb = Rgb([255, 255, 0]);
    pub const RED: Rgb = Rgb([255, 0, 0]);

    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0[0], self.0[1], self.0[2])
    }
}

/// Ordered color stops, cold to hot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gradient(Vec<Rgb>);

impl Default for Gradient {
    fn default() -> Self {
        Gradient(vec![Rgb::BLUE, Rgb::CYAN, Rgb::GREEN, Rgb::YELLOW, Rgb::RED])
    }
}

impl Gradient {
    pub fn new(stops: Vec<Rgb>) -> Result<Self, HeatmapError> {
        if stops.len() < 2 {
            return Err(HeatmapError::ShortGradient);
        }
        Ok(Gradient(stops))
    }

    pub fn stops(&self) -> &[Rgb] {
        &self.0
    }

    /// Piecewise-linear color at `u`, clamped to `[0, 1]`.
    pub fn at(&self, u: f64) -> Rgb {
        let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
        let segments = self.0.len() - 1;
        let pos = u * segments as f64;
        let i = (pos.floor() as usize).min(segments - 1);
        let t = pos - i as f64;
        let (a, b) = (self.0[i].0, self.0[i + 1].0);
        let mix = |k: usize| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * t).round() as u8;
        Rgb([mix(0), mix(1), mix(2)])
    }
}

/// Linear position of `v` in `[min, max]`, clamped; `0.5` when the range is
/// a single point.
pub fn normalize(v: f64, min: f64, max: f64) -> f64 {
    if min == max {
        return 0.5;
    }
    let span = max - min;
    let u = if span.is_finite() {
        (v - min) / span
    } else {
        (v / 2.0 - min / 2.0) / (max / 2.0 - min / 2.0)
    };
    u.clamp(0.0, 1.0)
}

pub fn value_to_color(v: f64, min: f64, max: f64, gradient: &Gradient) -> Result<Rgb, HeatmapError> {
    if !v.is_finite() {
        return Err(HeatmapError::NonFinite(v));
    }
    if min > max {
        return Err(HeatmapError::InvertedRange { min, max });
    }
    Ok(gradient.at(normalize(v, min, max)))
}

/// `(min, max)` over the values; `(0, 0)` when there are none.
pub fn legend_range(values: &HeatValues) -> (f64, f64) {
    let mut it = values.values().copied();
    match it.next() {
        None => (0.0, 0.0),
        Some(first) => it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))),
    }
}

pub fn snapshot_mode(current: &MetricScores) -> HeatValues {
    current.values.clone()
}

/// One step of `s_t = m_t + decay * s_{t-1}`. Classes missing from either
/// side read as zero, so a class that goes quiet decays.
pub fn aggregate_step(previous: &HeatValues, current: &MetricScores, decay: f64) -> HeatValues {
    let mut next: HeatValues = previous.iter().map(|(c, s)| (c.clone(), decay * s)).collect();
    for (c, m) in &current.values {
        *next.entry(c.clone()).or_insert(0.0) += m;
    }
    next
}

/// `latest - past`, missing classes read as zero.
pub fn difference(latest: &MetricScores, past: &MetricScores) -> HeatValues {
    let mut out: HeatValues = past.values.iter().map(|(c, v)| (c.clone(), -v)).collect();
    for (c, v) in &latest.values {
        *out.entry(c.clone()).or_insert(0.0) += v;
    }
    out
}

/// Recent per-window scores of one metric plus the running aggregate.
///
/// Entries are shared, so cloning a history to publish it is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistory {
    metric_id: String,
    window_size: usize,
    decay: f64,
    ring: VecDeque<Arc<MetricScores>>,
    aggregate: Arc<HeatValues>,
}

impl ScoreHistory {
    /// Keeps `window_size + 1` windows so the latest can be compared with
    /// the one `window_size` ticks earlier.
    pub fn new(metric_id: impl Into<String>, window_size: usize, decay: f64) -> Self {
        assert!(window_size >= 1, "window size must be at least 1");
        ScoreHistory {
            metric_id: metric_id.into(),
            window_size,
            decay,
            ring: VecDeque::with_capacity(window_size + 1),
            aggregate: Arc::new(HeatValues::new()),
        }
    }

    pub fn metric_id(&self) -> &str {
        &self.metric_id
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn push(&mut self, scores: MetricScores) {
        self.aggregate = Arc::new(aggregate_step(&self.aggregate, &scores, self.decay));
        if self.ring.len() == self.window_size + 1 {
            self.ring.pop_front();
        }
        self.ring.push_back(Arc::new(scores));
    }

    pub fn latest(&self) -> Option<&MetricScores> {
        self.ring.back().map(|s| &**s)
    }

    /// The window `window_size` ticks before the latest, or the oldest one
    /// kept while warming up.
    pub fn past(&self) -> Option<&MetricScores> {
        self.ring.front().map(|s| &**s)
    }

    pub fn aggregate(&self) -> &HeatValues {
        &self.aggregate
    }

    pub fn windowed(&self) -> HeatValues {
        match (self.latest(), self.past()) {
            (Some(latest), Some(past)) => difference(latest, past),
            _ => HeatValues::new(),
        }
    }

    pub fn values(&self, mode: HeatmapMode) -> HeatValues {
        match mode {
            HeatmapMode::Snapshot => self.latest().map(snapshot_mode).unwrap_or_default(),
            HeatmapMode::Aggregated => (*self.aggregate).clone(),
            HeatmapMode::Windowed => self.windowed(),
        }
    }
}

pub fn windowed_mode(history: &ScoreHistory) -> HeatValues {
    history.windowed()
}

/// Heat-map field for one (metric, mode) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeatmapView {
    pub metric_id: String,
    pub mode: HeatmapMode,
    pub tick_index: u64,
    pub values: HeatValues,
    pub legend_min: f64,
    pub legend_max: f64,
    pub gradient_stops: Gradient,
}

impl HeatmapView {
    pub fn new(metric_id: &str, mode: HeatmapMode, tick_index: u64, values: HeatValues, gradient: &Gradient) -> Self {
        let (legend_min, legend_max) = legend_range(&values);
        HeatmapView {
            metric_id: metric_id.to_string(),
            mode,
            tick_index,
            values,
            legend_min,
            legend_max,
            gradient_stops: gradient.clone(),
        }
    }

    pub fn color_of(&self, class: &ClassId) -> Option<Rgb> {
        let v = *self.values.get(class)?;
        value_to_color(v, self.legend_min, self.legend_max, &self.gradient_stops).ok()
    }
}
