use std::sync::atomic::Ordering;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use citypulse_core::engine::Engine;
use citypulse_core::trace::Window;

use crate::{Published, Shared};

pub(crate) fn now_nanos() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

/// Sleeps until the wall clock reaches `target`. Returns false when asked
/// to stop.
fn wait_until(target: u64, stop: &mpsc::Receiver<()>) -> bool {
    loop {
        let now = now_nanos();
        if now >= target {
            return !matches!(stop.try_recv(), Err(mpsc::TryRecvError::Disconnected) | Ok(()));
        }
        match stop.recv_timeout(Duration::from_nanos(target - now)) {
            Err(RecvTimeoutError::Timeout) => {}
            _ => return false,
        }
    }
}

/// Tick loop. Windows are the nominal `[k·T, (k+1)·T)` slots; a tick that
/// runs late still processes every slot in order, so windows stay
/// contiguous.
pub(crate) fn run(mut engine: Engine, shared: &Shared, stop: mpsc::Receiver<()>) {
    let t = engine.config().tick_nanos();
    let mut k = now_nanos() / t;
    loop {
        let end = (k + 1) * t;
        if !wait_until(end, &stop) {
            return;
        }
        let started = Instant::now();
        let frame = engine.tick(Window::new(k * t, end));
        shared.publish(Published::new(frame));

        let micros = started.elapsed().as_micros() as u64;
        let c = &shared.counters;
        c.ticks.fetch_add(1, Ordering::Relaxed);
        c.last_tick_micros.store(micros, Ordering::Relaxed);
        c.max_tick_micros.fetch_max(micros, Ordering::Relaxed);
        if now_nanos() > end + t {
            c.overruns.fetch_add(1, Ordering::Relaxed);
            tracing::warn!(tick = k, micros, "tick overran its interval");
        }
        k += 1;
    }
}
