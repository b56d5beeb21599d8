//! Sends monitoring records to a citypulse ingest socket.
//!
//! [`replay`] plays a recorded script with its timing scaled by a speed
//! factor; [`synth`] streams a generated workload in real time. Both rebase
//! span timestamps onto the current wall clock and spread traces over one
//! or more TCP connections, each written by its own thread.

use std::io::{self, BufWriter, Write};
use std::net::TcpStream;
use std::path::Path;
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use citypulse_core::synth::{rebase, ReplayScript, ScenarioError, ScriptError, SynthScenario};
use citypulse_core::wire::MonitoringRecord;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at {0}")]
    Script(#[from] ScriptError),
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    InvalidArgument(String),
}

impl ReplayError {
    /// Process exit code: 1 for I/O failures, 2 for bad input.
    pub fn exit_code(&self) -> u8 {
        match self {
            ReplayError::Io(_) => 1,
            _ => 2,
        }
    }
}

pub fn load_script(path: &Path) -> Result<ReplayScript, ReplayError> {
    let text = std::fs::read_to_string(path)?;
    Ok(ReplayScript::parse(&text)?)
}

pub fn now_nanos() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

fn sleep_until(due: Instant) {
    let now = Instant::now();
    if due > now {
        std::thread::sleep(due - now);
    }
}

/// Writes lines to a set of connections. Spans are routed by trace id so a
/// trace stays on one connection; structure records go to every
/// connection, which keeps each stream self-contained (the server
/// deduplicates the copies).
pub struct Fanout {
    lanes: Vec<mpsc::Sender<Vec<u8>>>,
    writers: Vec<JoinHandle<io::Result<()>>>,
}

impl Fanout {
    pub fn connect(target: &str, connections: usize) -> Result<Self, ReplayError> {
        if connections == 0 {
            return Err(ReplayError::InvalidArgument("need at least one connection".into()));
        }
        let mut lanes = Vec::new();
        let mut writers = Vec::new();
        for _ in 0..connections {
            let stream = TcpStream::connect(target)?;
            stream.set_nodelay(true)?;
            let (tx, rx) = mpsc::channel::<Vec<u8>>();
            lanes.push(tx);
            writers.push(std::thread::spawn(move || write_lane(stream, rx)));
        }
        Ok(Fanout { lanes, writers })
    }

    pub fn send(&self, record: &MonitoringRecord) -> Result<(), ReplayError> {
        let mut line = record.to_line().into_bytes();
        line.push(b'\n');
        let lanes: Vec<&mpsc::Sender<Vec<u8>>> = match record {
            MonitoringRecord::Structural(_) => self.lanes.iter().collect(),
            MonitoringRecord::Dynamic(d) => vec![&self.lanes[lane_of(&d.trace_id, self.lanes.len())]],
        };
        for lane in lanes {
            if lane.send(line.clone()).is_err() {
                return Err(io::Error::new(io::ErrorKind::BrokenPipe, "connection writer stopped").into());
            }
        }
        Ok(())
    }

    /// Flushes and closes every connection.
    pub fn finish(self) -> Result<(), ReplayError> {
        drop(self.lanes);
        for w in self.writers {
            w.join()
                .map_err(|_| io::Error::other("connection writer panicked"))??;
        }
        Ok(())
    }
}

fn lane_of(trace_id: &str, lanes: usize) -> usize {
    let h = trace_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    (h % lanes as u64) as usize
}

fn write_lane(stream: TcpStream, rx: mpsc::Receiver<Vec<u8>>) -> io::Result<()> {
    let mut out = BufWriter::with_capacity(64 * 1024, stream);
    while let Ok(line) = rx.recv() {
        out.write_all(&line)?;
        // drain what is queued, then flush so paced records leave promptly
        while let Ok(more) = rx.try_recv() {
            out.write_all(&more)?;
        }
        out.flush()?;
    }
    out.flush()?;
    out.get_ref().shutdown(std::net::Shutdown::Write).or_else(|e| match e.kind() {
        io::ErrorKind::NotConnected => Ok(()),
        _ => Err(e),
    })
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub speed: f64,
    /// Number of passes over the script; `None` repeats forever.
    pub passes: Option<u64>,
    pub connections: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            speed: 1.0,
            passes: Some(1),
            connections: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplaySummary {
    /// Script records delivered, counting each record once per pass.
    pub records_sent: usize,
    pub passes: u64,
    pub duration: Duration,
}

/// Plays `script` against `target`, sleeping so that inter-record gaps are
/// divided by `speed`. Each pass is rebased onto the wall clock at the
/// moment it starts.
pub fn replay(script: &ReplayScript, target: &str, options: &ReplayOptions) -> Result<ReplaySummary, ReplayError> {
    if !(options.speed.is_finite() && options.speed > 0.0) {
        return Err(ReplayError::InvalidArgument(format!("speed must be positive, got {}", options.speed)));
    }
    let fanout = Fanout::connect(target, options.connections)?;
    let started = Instant::now();
    let mut sent = 0;
    let mut passes = 0;
    while options.passes.is_none_or(|n| passes < n) {
        let pass_start = Instant::now();
        let base = now_nanos();
        for entry in &script.entries {
            let gap = Duration::from_nanos((entry.offset_nanos as f64 / options.speed).round() as u64);
            sleep_until(pass_start + gap);
            fanout.send(&rebase(&entry.record, base, options.speed))?;
            sent += 1;
        }
        passes += 1;
        if script.is_empty() {
            break;
        }
    }
    fanout.finish()?;
    Ok(ReplaySummary {
        records_sent: sent,
        passes,
        duration: started.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SynthSummary {
    pub records_sent: usize,
    pub spans_sent: usize,
}

/// Streams the scenario in real time. Stops after `duration` of generated
/// time, or never when `duration` is `None`.
pub fn synth(
    scenario: &SynthScenario,
    target: &str,
    duration: Option<Duration>,
    connections: usize,
) -> Result<SynthSummary, ReplayError> {
    let generator = scenario.generator()?;
    let fanout = Fanout::connect(target, connections)?;
    let limit = duration.map(|d| d.as_nanos() as u64);
    let started = Instant::now();
    let base = now_nanos();
    let mut summary = SynthSummary::default();
    for (offset, record) in generator {
        if limit.is_some_and(|l| offset >= l) {
            break;
        }
        sleep_until(started + Duration::from_nanos(offset));
        fanout.send(&rebase(&record, base, 1.0))?;
        summary.records_sent += 1;
        if matches!(record, MonitoringRecord::Dynamic(_)) {
            summary.spans_sent += 1;
        }
    }
    fanout.finish()?;
    Ok(summary)
}

/// Writes `duration` worth of the scenario with relative timestamps, as a
/// replayable script.
pub fn synth_script(scenario: &SynthScenario, duration: Duration, out: &mut impl Write) -> Result<SynthSummary, ReplayError> {
    let limit = duration.as_nanos() as u64;
    let mut summary = SynthSummary::default();
    for (offset, record) in scenario.generator()? {
        if offset >= limit {
            break;
        }
        writeln!(out, "{}", record.to_line())?;
        summary.records_sent += 1;
        if matches!(record, MonitoringRecord::Dynamic(_)) {
            summary.spans_sent += 1;
        }
    }
    out.flush()?;
    Ok(summary)
}
