//! Replay scripts and synthetic workloads.
//!
//! A replay script is a wire-format file whose span timestamps are relative
//! to the script start. The generator side produces structurally consistent
//! call trees over a synthetic class population, and the bundled PetClinic
//! fixture narrates a small web shop request mix.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::wire::{parse_record, DynamicRecord, MonitoringRecord, StructuralRecord, WireError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: WireError },
    #[error("line {line}: span refers to undefined structure hash `{hash}`")]
    UndefinedStructure { line: usize, hash: String },
}

impl ScriptError {
    pub fn line(&self) -> usize {
        match self {
            ScriptError::Parse { line, .. } | ScriptError::UndefinedStructure { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    /// Nanoseconds after script start; non-decreasing across entries.
    pub offset_nanos: u64,
    pub record: MonitoringRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayScript {
    pub entries: Vec<ScriptEntry>,
}

impl ReplayScript {
    /// Parses a script. A span's offset is its start time (never moving
    /// backwards); a structure record inherits the offset before it.
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut entries = Vec::new();
        let mut defined = HashSet::new();
        let mut offset = 0u64;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = parse_record(line.as_bytes()).map_err(|source| ScriptError::Parse { line: i + 1, source })?;
            match &record {
                MonitoringRecord::Structural(s) => {
                    defined.insert(s.structure_hash.clone());
                }
                MonitoringRecord::Dynamic(d) => {
                    if !defined.contains(&d.structure_hash) {
                        return Err(ScriptError::UndefinedStructure {
                            line: i + 1,
                            hash: d.structure_hash.clone(),
                        });
                    }
                    offset = offset.max(d.start_nanos);
                }
            }
            entries.push(ScriptEntry {
                offset_nanos: offset,
                record,
            });
        }
        Ok(ReplayScript { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn duration_nanos(&self) -> u64 {
        self.entries.last().map(|e| e.offset_nanos).unwrap_or(0)
    }
}

/// Moves relative span timestamps to `base_nanos`, compressing time by
/// `speed`.
pub fn rebase(record: &MonitoringRecord, base_nanos: u64, speed: f64) -> MonitoringRecord {
    match record {
        MonitoringRecord::Structural(_) => record.clone(),
        MonitoringRecord::Dynamic(d) => {
            let scale = |t: u64| base_nanos + (t as f64 / speed).round() as u64;
            let start = scale(d.start_nanos);
            MonitoringRecord::Dynamic(DynamicRecord {
                start_nanos: start,
                end_nanos: scale(d.end_nanos).max(start),
                ..d.clone()
            })
        }
    }
}

/// Stable producer-side structure hash (FNV-1a over host, app and name).
pub fn structure_hash(hostname: &str, app_name: &str, fqn: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in [hostname, app_name, fqn] {
        for b in part.bytes().chain(std::iter::once(0)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn structural(hostname: &str, app_name: &str, fqn: &str) -> MonitoringRecord {
    MonitoringRecord::Structural(StructuralRecord {
        structure_hash: structure_hash(hostname, app_name, fqn),
        hostname: hostname.into(),
        app_name: app_name.into(),
        fqn: fqn.into(),
    })
}

/// Rate multiplier that applies from `from_secs` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub from_secs: f64,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScenario {
    pub class_count: usize,
    pub package_fanout: usize,
    pub calls_per_second: f64,
    pub constructor_fraction: f64,
    pub phases: Vec<Phase>,
    pub seed: u64,
    pub hostname: String,
    pub app_name: String,
    pub max_trace_spans: usize,
}

impl Default for SynthScenario {
    fn default() -> Self {
        SynthScenario {
            class_count: 40,
            package_fanout: 4,
            calls_per_second: 100.0,
            constructor_fraction: 0.2,
            phases: Vec::new(),
            seed: 42,
            hostname: "synth-host".into(),
            app_name: "synth-app".into(),
            max_trace_spans: 6,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("`{0}` must be positive")]
    NotPositive(&'static str),
    #[error("constructor fraction {0} outside [0, 1]")]
    Fraction(f64),
}

impl SynthScenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.class_count == 0 {
            return Err(ScenarioError::NotPositive("class_count"));
        }
        if self.package_fanout == 0 {
            return Err(ScenarioError::NotPositive("package_fanout"));
        }
        if !(self.calls_per_second.is_finite() && self.calls_per_second > 0.0) {
            return Err(ScenarioError::NotPositive("calls_per_second"));
        }
        if self.max_trace_spans == 0 {
            return Err(ScenarioError::NotPositive("max_trace_spans"));
        }
        if self.phases.iter().any(|p| !(p.multiplier > 0.0)) {
            return Err(ScenarioError::NotPositive("phase multiplier"));
        }
        if !(0.0..=1.0).contains(&self.constructor_fraction) {
            return Err(ScenarioError::Fraction(self.constructor_fraction));
        }
        Ok(())
    }

    fn multiplier_at(&self, secs: f64) -> f64 {
        self.phases
            .iter()
            .rfind(|p| p.from_secs <= secs)
            .map(|p| p.multiplier)
            .unwrap_or(1.0)
    }

    fn class_fqn(&self, i: usize) -> String {
        let f = self.package_fanout;
        format!("synth.p{}.q{}.C{i}", i % f, (i / f) % f)
    }

    pub fn generator(&self) -> Result<SynthGenerator, ScenarioError> {
        self.validate()?;
        Ok(SynthGenerator {
            scenario: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            queue: Vec::new(),
            emitted_structure: false,
            clock_nanos: 0.0,
            trace_counter: 0,
        })
    }
}

const SYNTH_OPERATIONS: [&str; 3] = ["handle", "query", "render"];
const SYNTH_CONSTRUCTOR: &str = "<init>";

/// Endless deterministic stream of `(offset_nanos, record)` pairs.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    scenario: SynthScenario,
    rng: ChaCha8Rng,
    queue: Vec<(u64, MonitoringRecord)>,
    emitted_structure: bool,
    clock_nanos: f64,
    trace_counter: u64,
}

impl SynthGenerator {
    fn hash(&self, class: usize, op: &str) -> String {
        let s = &self.scenario;
        structure_hash(&s.hostname, &s.app_name, &format!("{}.{op}", s.class_fqn(class)))
    }

    fn structure_records(&self) -> Vec<(u64, MonitoringRecord)> {
        let s = &self.scenario;
        (0..s.class_count)
            .flat_map(|i| {
                std::iter::once(SYNTH_CONSTRUCTOR)
                    .chain(SYNTH_OPERATIONS)
                    .map(move |op| (i, op))
            })
            .map(|(i, op)| (0, structural(&s.hostname, &s.app_name, &format!("{}.{op}", s.class_fqn(i)))))
            .collect()
    }

    fn next_trace(&mut self) -> Vec<(u64, MonitoringRecord)> {
        let start = self.clock_nanos.round() as u64;
        let size = self.rng.gen_range(1..=self.scenario.max_trace_spans);
        let trace_id = format!("{:x}-{}", self.scenario.seed, self.trace_counter);
        self.trace_counter += 1;

        let mut out = Vec::with_capacity(size);
        for i in 0..size {
            let class = self.rng.gen_range(0..self.scenario.class_count);
            let op = if self.rng.gen_bool(self.scenario.constructor_fraction) {
                SYNTH_CONSTRUCTOR
            } else {
                SYNTH_OPERATIONS[self.rng.gen_range(0..SYNTH_OPERATIONS.len())]
            };
            let parent = (i > 0).then(|| format!("s{}", self.rng.gen_range(0..i)));
            let span_start = start + i as u64 * 1_000;
            out.push((
                span_start,
                MonitoringRecord::Dynamic(DynamicRecord {
                    trace_id: trace_id.clone(),
                    span_id: format!("s{i}"),
                    parent_span_id: parent,
                    start_nanos: span_start,
                    end_nanos: span_start + 500,
                    structure_hash: self.hash(class, op),
                }),
            ));
        }

        let rate = self.scenario.calls_per_second * self.scenario.multiplier_at(self.clock_nanos / 1e9);
        self.clock_nanos += size as f64 / rate * 1e9;
        out
    }
}

impl Iterator for SynthGenerator {
    type Item = (u64, MonitoringRecord);

    fn next(&mut self) -> Option<Self::Item> {
        if !self.emitted_structure {
            self.emitted_structure = true;
            let mut records = self.structure_records();
            records.reverse();
            self.queue = records;
        }
        if self.queue.is_empty() {
            let mut trace = self.next_trace();
            trace.reverse();
            self.queue = trace;
        }
        self.queue.pop()
    }
}

pub const PETCLINIC_HOST: &str = "petclinic-host";
pub const PETCLINIC_APP: &str = "spring-petclinic";
const PETCLINIC: &str = "org.springframework.samples.petclinic";

struct FixtureBuilder {
    lines: Vec<MonitoringRecord>,
    spans: Vec<DynamicRecord>,
    defined: HashSet<String>,
}

impl FixtureBuilder {
    fn op(&mut self, fqn: &str) -> String {
        let hash = structure_hash(PETCLINIC_HOST, PETCLINIC_APP, fqn);
        if self.defined.insert(fqn.to_string()) {
            self.lines.push(structural(PETCLINIC_HOST, PETCLINIC_APP, fqn));
        }
        hash
    }

    fn span(&mut self, trace: &str, id: usize, parent: Option<usize>, fqn: &str, start: u64, end: u64) {
        let hash = self.op(fqn);
        self.spans.push(DynamicRecord {
            trace_id: trace.into(),
            span_id: format!("{trace}-{id}"),
            parent_span_id: parent.map(|p| format!("{trace}-{p}")),
            start_nanos: start,
            end_nanos: end,
            structure_hash: hash,
        });
    }
}

/// The bundled PetClinic request mix as NDJSON.
///
/// Within one script pass: 12 owner searches each build two owners
/// (`Owner` -> `Person` -> `BaseEntity`), 11 owner pages each load two
/// pets (`Pet` -> `NamedEntity` -> `BaseEntity`) and 5 vet listings create
/// nothing. `BaseEntity` is constructed 46 times, 24 of them called from
/// `Person` and 22 from `NamedEntity`. All spans start within four seconds.
pub fn petclinic_fixture() -> String {
    let owner = |c: &str| format!("{PETCLINIC}.owner.{c}");
    let model = |c: &str| format!("{PETCLINIC}.model.{c}");
    let vet = |c: &str| format!("{PETCLINIC}.vet.{c}");
    let filter = "org.springframework.web.filter.OncePerRequestFilter.doFilter".to_string();

    let mut b = FixtureBuilder {
        lines: Vec::new(),
        spans: Vec::new(),
        defined: HashSet::new(),
    };
    const MS: u64 = 1_000_000;
    let kinds = std::iter::repeat_n("find", 12)
        .chain(std::iter::repeat_n("show", 11))
        .chain(std::iter::repeat_n("vets", 5));
    // interleave request kinds deterministically
    let mut requests: Vec<&str> = kinds.collect();
    requests.sort_by_key(|k| match *k {
        "find" => 0,
        "show" => 1,
        _ => 2,
    });
    let order: Vec<usize> = (0..requests.len()).map(|i| (i * 11) % requests.len()).collect();

    for (n, &idx) in order.iter().enumerate() {
        let kind = requests[idx];
        let trace = format!("req{n:02}");
        let t0 = n as u64 * 140 * MS;
        b.span(&trace, 0, None, &filter, t0, t0 + 60 * MS);
        match kind {
            "find" => {
                b.span(&trace, 1, Some(0), &format!("{}.processFindForm", owner("OwnerController")), t0 + MS, t0 + 55 * MS);
                b.span(&trace, 2, Some(1), &format!("{}.findByLastName", owner("OwnerRepository")), t0 + 2 * MS, t0 + 50 * MS);
                for k in 0..2u64 {
                    let base = t0 + (3 + 10 * k) * MS;
                    let id = 3 + 3 * k as usize;
                    b.span(&trace, id, Some(2), &format!("{}.<init>", owner("Owner")), base, base + 8 * MS);
                    b.span(&trace, id + 1, Some(id), &format!("{}.<init>", model("Person")), base + MS, base + 7 * MS);
                    b.span(&trace, id + 2, Some(id + 1), &format!("{}.<init>", model("BaseEntity")), base + 2 * MS, base + 6 * MS);
                }
            }
            "show" => {
                b.span(&trace, 1, Some(0), &format!("{}.showOwner", owner("OwnerController")), t0 + MS, t0 + 55 * MS);
                b.span(&trace, 2, Some(1), &format!("{}.findById", owner("OwnerRepository")), t0 + 2 * MS, t0 + 50 * MS);
                for k in 0..2u64 {
                    let base = t0 + (3 + 10 * k) * MS;
                    let id = 3 + 3 * k as usize;
                    b.span(&trace, id, Some(2), &format!("{}.<init>", owner("Pet")), base, base + 8 * MS);
                    b.span(&trace, id + 1, Some(id), &format!("{}.<init>", model("NamedEntity")), base + MS, base + 7 * MS);
                    b.span(&trace, id + 2, Some(id + 1), &format!("{}.<init>", model("BaseEntity")), base + 2 * MS, base + 6 * MS);
                }
            }
            _ => {
                b.span(&trace, 1, Some(0), &format!("{}.showVetList", vet("VetController")), t0 + MS, t0 + 40 * MS);
                b.span(&trace, 2, Some(1), &format!("{}.findAll", vet("VetRepository")), t0 + 2 * MS, t0 + 30 * MS);
            }
        }
    }

    let mut out = String::new();
    for record in b.lines.iter().cloned().chain(b.spans.into_iter().map(MonitoringRecord::Dynamic)) {
        out.push_str(&record.to_line());
        out.push('\n');
    }
    out
}
