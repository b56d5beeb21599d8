//! Engine configuration.
//!
//! Values come from command-line flags, `CITYPULSE_*` environment
//! variables and an optional `key = value` file, in that order of
//! precedence, on top of built-in defaults. Keys use the flag spelling
//! (`tick-seconds`); the environment form is upper snake case with the
//! `CITYPULSE_` prefix (`CITYPULSE_TICK_SECONDS`).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::heatmap::{Gradient, Rgb};
use crate::layout::LayoutParams;
use crate::wire::ConstructorNames;

pub const ENV_PREFIX: &str = "CITYPULSE_";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{source_name}: invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        source_name: &'static str,
        key: String,
        value: String,
        reason: String,
    },
    #[error("{source_name}: unknown key `{key}`")]
    UnknownKey { source_name: &'static str, key: String },
    #[error("config file line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("`{field}` {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub tick_seconds: f64,
    pub window_size: usize,
    pub decay: f64,
    pub http_port: u16,
    pub ingest_tcp_port: u16,
    pub constructor_names: ConstructorNames,
    pub layout: LayoutParams,
    pub gradient: Gradient,
    /// Optional example plugins to register, by metric id.
    pub extra_metrics: Vec<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tick_seconds: 10.0,
            window_size: 10,
            decay: 0.5,
            http_port: 8080,
            ingest_tcp_port: 9000,
            constructor_names: ConstructorNames::default(),
            layout: LayoutParams::default(),
            gradient: Gradient::default(),
            extra_metrics: Vec::new(),
        }
    }
}

pub const KEYS: [&str; 14] = [
    "tick-seconds",
    "window-size",
    "decay",
    "http-port",
    "ingest-tcp-port",
    "constructor-names",
    "layout-min-height",
    "layout-max-height",
    "layout-footprint",
    "layout-padding",
    "layout-tile-thickness",
    "layout-foundation-thickness",
    "gradient",
    "extra-metrics",
];

/// Raw key/value pairs from each source. Nothing here touches the
/// process environment or the filesystem; callers collect the inputs.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub flags: Vec<(String, String)>,
    /// Full environment; only `CITYPULSE_*` variables are read.
    pub env: Vec<(String, String)>,
    pub file: Option<String>,
    /// Reject unknown keys in the file and unknown `CITYPULSE_*` variables.
    pub strict: bool,
}

impl ConfigSources {
    pub fn flag(mut self, key: &str, value: impl ToString) -> Self {
        self.flags.push((key.to_string(), value.to_string()));
        self
    }
}

pub fn env_key(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace('-', "_"))
}

/// Parses `key = value` lines; `#` starts a comment, values may be quoted.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        let value = value.trim().trim_matches('"');
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub fn load(sources: &ConfigSources) -> Result<EngineConfig, ConfigError> {
    // later layers win: file < env < flags
    let mut merged: BTreeMap<String, (&'static str, String)> = BTreeMap::new();
    if let Some(text) = &sources.file {
        for (key, value) in parse_file(text)? {
            if !KEYS.contains(&key.as_str()) {
                if sources.strict {
                    return Err(ConfigError::UnknownKey {
                        source_name: "file",
                        key,
                    });
                }
                continue;
            }
            merged.insert(key, ("file", value));
        }
    }
    for (name, value) in &sources.env {
        if !name.starts_with(ENV_PREFIX) {
            continue;
        }
        match KEYS.iter().find(|k| env_key(k) == *name) {
            Some(key) => {
                merged.insert(key.to_string(), ("env", value.clone()));
            }
            None if sources.strict => {
                return Err(ConfigError::UnknownKey {
                    source_name: "env",
                    key: name.clone(),
                })
            }
            None => {}
        }
    }
    for (key, value) in &sources.flags {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey {
                source_name: "flag",
                key: key.clone(),
            });
        }
        merged.insert(key.clone(), ("flag", value.clone()));
    }

    let mut config = EngineConfig::default();
    for (key, (source_name, value)) in merged {
        apply(&mut config, &key, &value).map_err(|reason| ConfigError::InvalidValue {
            source_name,
            key: key.clone(),
            value: value.clone(),
            reason,
        })?;
    }
    config.validate()?;
    Ok(config)
}

fn num<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| e.to_string())
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// `r,g,b;r,g,b;...`
pub fn parse_gradient(value: &str) -> Result<Gradient, String> {
    let stops = value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|stop| {
            let parts: Vec<u8> = stop
                .split(',')
                .map(|c| c.trim().parse::<u8>().map_err(|e| format!("`{stop}`: {e}")))
                .collect::<Result<_, _>>()?;
            match parts[..] {
                [r, g, b] => Ok(Rgb([r, g, b])),
                _ => Err(format!("`{stop}` is not an r,g,b triple")),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Gradient::new(stops).map_err(|e| e.to_string())
}

fn apply(config: &mut EngineConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "tick-seconds" => config.tick_seconds = num(value)?,
        "window-size" => config.window_size = num(value)?,
        "decay" => config.decay = num(value)?,
        "http-port" => config.http_port = num(value)?,
        "ingest-tcp-port" => config.ingest_tcp_port = num(value)?,
        "constructor-names" => config.constructor_names = ConstructorNames::new(list(value)),
        "layout-min-height" => config.layout.min_height = num(value)?,
        "layout-max-height" => config.layout.max_height = num(value)?,
        "layout-footprint" => config.layout.footprint = num(value)?,
        "layout-padding" => config.layout.padding = num(value)?,
        "layout-tile-thickness" => config.layout.tile_thickness = num(value)?,
        "layout-foundation-thickness" => config.layout.foundation_thickness = num(value)?,
        "gradient" => config.gradient = parse_gradient(value)?,
        "extra-metrics" => config.extra_metrics = list(value),
        other => return Err(format!("unhandled key {other}")),
    }
    Ok(())
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, reason: &str| {
            Err(ConfigError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) {
            return invalid("tick-seconds", "must be a positive number");
        }
        if self.window_size < 1 {
            return invalid("window-size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.decay) {
            return invalid("decay", "must lie in [0, 1)");
        }
        let l = &self.layout;
        if !(l.min_height > 0.0 && l.max_height > l.min_height) {
            return invalid("layout-max-height", "need layout-max-height > layout-min-height > 0");
        }
        if !(l.footprint > 0.0 && l.padding >= 0.0 && l.tile_thickness > 0.0 && l.foundation_thickness > 0.0) {
            return invalid("layout-footprint", "layout sizes must be positive");
        }
        if self.gradient.stops().len() < 2 {
            return invalid("gradient", "needs at least two stops");
        }
        if self.constructor_names.iter().next().is_none() {
            return invalid("constructor-names", "must name at least one operation");
        }
        Ok(())
    }

    pub fn tick_nanos(&self) -> u64 {
        (self.tick_seconds * 1e9).round() as u64
    }
}
