//! Core engine for live software-city visualization.
//!
//! Monitoring records arrive as newline-delimited JSON ([`wire`]), are split
//! into a deduplicated structure landscape ([`structure`]) and timed spans
//! that are grouped into traces ([`trace`]). Each tick turns one window of
//! call events into per-class coupling scores ([`metrics`]), advances the
//! temporal heat-map histories ([`heatmap`]) and lays out the city
//! ([`layout`]). [`engine::Engine`] ties these together into immutable
//! snapshots.

pub mod config;
pub mod engine;
pub mod heatmap;
pub mod layout;
pub mod metrics;
pub mod structure;
pub mod synth;
pub mod trace;
pub mod wire;

pub use config::EngineConfig;
pub use engine::{Engine, Frame, Snapshot};
pub use heatmap::{HeatmapMode, HeatmapView, Rgb};
pub use metrics::{CallEvent, MetricScores};
pub use structure::ClassId;
pub use wire::{DynamicRecord, MonitoringRecord, StructuralRecord};
