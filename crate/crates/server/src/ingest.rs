use std::sync::Arc;

use citypulse_core::engine::Ingestor;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

/// Accepts NDJSON producers; each connection is read by its own task.
pub(crate) async fn serve(listener: TcpListener, ingestor: Arc<Ingestor>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let ingestor = ingestor.clone();
                tokio::spawn(async move {
                    if let Err(e) = read_connection(stream, &ingestor).await {
                        tracing::debug!(%peer, error = %e, "ingest connection closed");
                    }
                });
            }
            Err(e) => tracing::warn!(error = %e, "ingest accept failed"),
        }
    }
}

async fn read_connection(stream: TcpStream, ingestor: &Ingestor) -> std::io::Result<()> {
    let mut reader = BufReader::with_capacity(64 * 1024, stream);
    let mut line = Vec::with_capacity(512);
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line).await? == 0 {
            return Ok(());
        }
        if let Err(e) = ingestor.ingest_line(&line) {
            tracing::debug!(error = %e, "rejected ingest line");
        }
    }
}
