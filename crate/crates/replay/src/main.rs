use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use citypulse_core::synth::{petclinic_fixture, SynthScenario};
use citypulse_replay::{load_script, replay, synth, synth_script, ReplayError, ReplayOptions};
use clap::{Parser, Subcommand};

/// Replays monitoring recordings and generates synthetic load for citypulse.
#[derive(Debug, Parser)]
#[command(name = "citypulse-replay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay an NDJSON script with relative timestamps.
    Replay {
        file: PathBuf,
        /// Ingest socket, host:port.
        #[arg(long, default_value = "127.0.0.1:9000")]
        target: String,
        /// Time compression factor.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Repeat the script until interrupted.
        #[arg(long = "loop")]
        repeat: bool,
        /// Parallel ingest connections.
        #[arg(long, default_value_t = 1)]
        connections: usize,
    },
    /// Stream a synthetic workload in real time.
    Synth {
        #[arg(long, default_value_t = 40)]
        classes: usize,
        #[arg(long, default_value_t = 100.0)]
        cps: f64,
        #[arg(long, default_value_t = 0.2)]
        ctor_frac: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        fanout: usize,
        #[arg(long, default_value_t = 6)]
        max_trace_spans: usize,
        #[arg(long, default_value = "127.0.0.1:9000")]
        target: String,
        #[arg(long, default_value_t = 1)]
        connections: usize,
        /// Stop after this many seconds; runs until interrupted otherwise.
        #[arg(long)]
        duration: Option<f64>,
        /// Print the workload as a replay script instead of sending it.
        #[arg(long, requires = "duration")]
        stdout: bool,
    },
    /// Print the bundled PetClinic fixture.
    Fixture,
}

fn seconds(s: f64) -> Result<Duration, ReplayError> {
    Duration::try_from_secs_f64(s).map_err(|_| ReplayError::InvalidArgument(format!("bad duration {s}")))
}

fn run(cli: Cli) -> Result<(), ReplayError> {
    match cli.command {
        Command::Replay {
            file,
            target,
            speed,
            repeat,
            connections,
        } => {
            let script = load_script(&file)?;
            let options = ReplayOptions {
                speed,
                passes: if repeat { None } else { Some(1) },
                connections,
            };
            let summary = replay(&script, &target, &options)?;
            eprintln!(
                "sent {} records in {:.3} s",
                summary.records_sent,
                summary.duration.as_secs_f64()
            );
        }
        Command::Synth {
            classes,
            cps,
            ctor_frac,
            seed,
            fanout,
            max_trace_spans,
            target,
            connections,
            duration,
            stdout,
        } => {
            let scenario = SynthScenario {
                class_count: classes,
                package_fanout: fanout,
                calls_per_second: cps,
                constructor_fraction: ctor_frac,
                seed,
                max_trace_spans,
                ..Default::default()
            };
            let duration = duration.map(seconds).transpose()?;
            let summary = match (stdout, duration) {
                (true, Some(d)) => synth_script(&scenario, d, &mut std::io::stdout().lock())?,
                _ => synth(&scenario, &target, duration, connections)?,
            };
            eprintln!("sent {} records ({} spans)", summary.records_sent, summary.spans_sent);
        }
        Command::Fixture => {
            let mut out = std::io::stdout().lock();
            out.write_all(petclinic_fixture().as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("citypulse-replay: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
