use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use citypulse_core::config::{self, ConfigSources};
use citypulse_server::{start, ServerOptions};
use clap::Parser;
use tracing_subscriber::EnvFilter;

const DEFAULT_CONFIG_FILE: &str = "citypulse.conf";

/// Live software-city server: ingests monitoring records and publishes a
/// snapshot every tick.
#[derive(Debug, Parser)]
#[command(name = "citypulse", version)]
struct Args {
    /// Update loop interval in seconds.
    #[arg(long)]
    tick_seconds: Option<f64>,
    /// Windowed heat-map distance W, in ticks.
    #[arg(long)]
    window_size: Option<usize>,
    /// Weight of the previous score in aggregated mode.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    http_port: Option<u16>,
    #[arg(long)]
    ingest_tcp_port: Option<u16>,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Config file; `citypulse.conf` in the working directory is read when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reject unknown keys in the config file and environment.
    #[arg(long)]
    strict: bool,
    /// Address both listeners bind to.
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Directory served at `/` (the browser UI).
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn sources(args: &Args) -> Result<ConfigSources, String> {
    let file = match &args.config {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?),
        None => std::fs::read_to_string(DEFAULT_CONFIG_FILE).ok(),
    };
    let mut s = ConfigSources {
        env: std::env::vars().collect(),
        file,
        strict: args.strict,
        ..Default::default()
    };
    if let Some(v) = args.tick_seconds {
        s = s.flag("tick-seconds", v);
    }
    if let Some(v) = args.window_size {
        s = s.flag("window-size", v);
    }
    if let Some(v) = args.decay {
        s = s.flag("decay", v);
    }
    if let Some(v) = args.http_port {
        s = s.flag("http-port", v);
    }
    if let Some(v) = args.ingest_tcp_port {
        s = s.flag("ingest-tcp-port", v);
    }
    for pair in &args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got `{pair}`"))?;
        s = s.flag(k.trim(), v.trim());
    }
    Ok(s)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let engine = match sources(&args).and_then(|s| config::load(&s).map_err(|e| e.to_string())) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("citypulse: {e}");
            return ExitCode::from(2);
        }
    };
    let mut options = ServerOptions::new(engine);
    options.bind = args.bind;
    options.static_dir = args.static_dir;
    let mut server = match start(options).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("citypulse: {e}");
            return ExitCode::from(1);
        }
    };
    println!("http on {}, ingest on {}", server.http_addr, server.ingest_addr);
    let _ = tokio::signal::ctrl_c().await;
    server.shutdown();
    ExitCode::SUCCESS
}
