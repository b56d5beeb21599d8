//! Live server around the citypulse engine.
//!
//! A dedicated thread owns the [`Engine`] and ticks it on wall-clock aligned
//! windows `[k·T, (k+1)·T)`. Every tick is published as an immutable
//! [`Published`] value whose snapshot documents are serialized exactly once.
//! HTTP handlers, the WebSocket stream and the TCP ingest listener only ever
//! touch the shared [`Ingestor`] and published data.

mod api;
mod ingest;
mod ticker;

use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, RwLock};

use axum::body::Bytes;
use citypulse_core::engine::{Engine, Ingestor, IngestTotals};
use citypulse_core::metrics::{MetricDescriptor, MetricPlugin};
use citypulse_core::structure::AppKey;
use citypulse_core::{EngineConfig, Frame};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;

pub use api::router;

/// Frames a slow stream subscriber may fall behind before it is dropped.
pub const STREAM_BUFFER: usize = 64;

/// One tick as seen by readers.
#[derive(Debug)]
pub struct Published {
    pub frame: Arc<Frame>,
    /// Snapshot JSON per application, in landscape order.
    pub documents: Vec<(AppKey, Bytes)>,
}

impl Published {
    pub fn new(frame: Arc<Frame>) -> Self {
        let documents = frame
            .snapshots
            .iter()
            .map(|s| (s.app_key.clone(), Bytes::from(s.to_json())))
            .collect();
        Published { frame, documents }
    }

    pub fn tick_index(&self) -> u64 {
        self.frame.tick_index
    }

    pub fn document(&self, app: Option<&AppKey>) -> Option<&Bytes> {
        match app {
            Some(key) => self.documents.iter().find(|(k, _)| k == key).map(|(_, d)| d),
            None => self.documents.first().map(|(_, d)| d),
        }
    }
}

#[derive(Debug, Default)]
struct TickCounters {
    ticks: AtomicU64,
    overruns: AtomicU64,
    max_tick_micros: AtomicU64,
    last_tick_micros: AtomicU64,
}

/// Health of the tick loop and ingest path.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ServerStatus {
    pub ticks: u64,
    pub tick_overruns: u64,
    pub max_tick_millis: f64,
    pub last_tick_millis: f64,
    pub latest_tick_index: Option<u64>,
    pub ingest: IngestTotals,
}

/// State shared between the tick driver and all request handlers.
#[derive(Debug)]
pub struct Shared {
    latest: RwLock<Option<Arc<Published>>>,
    ingestor: Arc<Ingestor>,
    descriptors: Vec<MetricDescriptor>,
    stream: broadcast::Sender<Arc<Published>>,
    counters: TickCounters,
}

impl Shared {
    fn new(ingestor: Arc<Ingestor>, descriptors: Vec<MetricDescriptor>) -> Self {
        Shared {
            latest: RwLock::new(None),
            ingestor,
            descriptors,
            stream: broadcast::channel(STREAM_BUFFER).0,
            counters: TickCounters::default(),
        }
    }

    pub fn latest(&self) -> Option<Arc<Published>> {
        self.latest.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn ingestor(&self) -> &Arc<Ingestor> {
        &self.ingestor
    }

    pub fn descriptors(&self) -> &[MetricDescriptor] {
        &self.descriptors
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<Published>> {
        self.stream.subscribe()
    }

    pub fn status(&self) -> ServerStatus {
        let c = &self.counters;
        ServerStatus {
            ticks: c.ticks.load(Ordering::Relaxed),
            tick_overruns: c.overruns.load(Ordering::Relaxed),
            max_tick_millis: c.max_tick_micros.load(Ordering::Relaxed) as f64 / 1000.0,
            last_tick_millis: c.last_tick_micros.load(Ordering::Relaxed) as f64 / 1000.0,
            latest_tick_index: self.latest().map(|p| p.tick_index()),
            ingest: self.ingestor.totals(),
        }
    }

    fn publish(&self, published: Published) {
        let published = Arc::new(published);
        *self.latest.write().unwrap_or_else(|e| e.into_inner()) = Some(published.clone());
        // no subscribers is fine
        let _ = self.stream.send(published);
    }
}

pub struct ServerOptions {
    pub engine: EngineConfig,
    pub bind: IpAddr,
    pub static_dir: Option<PathBuf>,
    pub plugins: Vec<Box<dyn MetricPlugin>>,
}

impl ServerOptions {
    pub fn new(engine: EngineConfig) -> Self {
        ServerOptions {
            engine,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            static_dir: None,
            plugins: Vec::new(),
        }
    }
}

/// A running server. Dropping the handle stops the tick driver and the
/// listeners.
pub struct ServerHandle {
    pub http_addr: SocketAddr,
    pub ingest_addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Option<mpsc::Sender<()>>,
    ticker: Option<std::thread::JoinHandle<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    pub fn status(&self) -> ServerStatus {
        self.shared.status()
    }

    pub fn shutdown(&mut self) {
        self.stop.take();
        for task in self.tasks.drain(..) {
            task.abort();
        }
        if let Some(t) = self.ticker.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds both listeners and starts ticking. Ports of 0 pick free ports.
pub async fn start(options: ServerOptions) -> io::Result<ServerHandle> {
    let ServerOptions {
        engine: config,
        bind,
        static_dir,
        plugins,
    } = options;
    config
        .validate()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;

    let http = TcpListener::bind(SocketAddr::new(bind, config.http_port)).await?;
    let tcp = TcpListener::bind(SocketAddr::new(bind, config.ingest_tcp_port)).await?;
    let http_addr = http.local_addr()?;
    let ingest_addr = tcp.local_addr()?;

    let mut engine = Engine::new(config);
    for plugin in plugins {
        engine
            .register_metric(plugin)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    }
    let shared = Arc::new(Shared::new(engine.ingestor(), engine.metric_descriptors()));

    let (stop_tx, stop_rx) = mpsc::channel();
    let ticker = {
        let shared = shared.clone();
        std::thread::Builder::new()
            .name("citypulse-tick".into())
            .spawn(move || ticker::run(engine, &shared, stop_rx))?
    };

    let app = router(shared.clone(), static_dir);
    let http_task = tokio::spawn(async move {
        if let Err(e) = axum::serve(http, app).await {
            tracing::error!(error = %e, "http server stopped");
        }
    });
    let tcp_task = tokio::spawn(ingest::serve(tcp, shared.ingestor.clone()));
    tracing::info!(%http_addr, %ingest_addr, "citypulse listening");

    Ok(ServerHandle {
        http_addr,
        ingest_addr,
        shared,
        stop: Some(stop_tx),
        ticker: Some(ticker),
        tasks: vec![http_task, tcp_task],
    })
}
