//! Time source abstraction so that scripted runs, goldens, and the rate
//! limiter tests stay deterministic.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Milliseconds since an arbitrary epoch. Monotone.
    fn now_ms(&self) -> u64;

    /// Blocks the caller for `ms` milliseconds (or advances virtual time).
    fn sleep_ms(&self, ms: u64);
}

/// Wall clock backed by `Instant`.
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Virtual clock that advances only when told to (or when slept on), so
/// repeated runs see identical timestamps. An optional auto-tick advances
/// time by a fixed amount on every read, modeling elapsing wall time
/// deterministically.
#[derive(Clone, Default)]
pub struct MockClock {
    now: Arc<AtomicU64>,
    tick_ms: u64,
}

impl MockClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tick(tick_ms: u64) -> Self {
        Self {
            now: Arc::default(),
            tick_ms,
        }
    }

    pub fn advance_ms(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set_ms(&self, ms: u64) {
        self.now.store(ms, Ordering::SeqCst);
    }
}

impl Clock for MockClock {
    fn now_ms(&self) -> u64 {
        self.now.fetch_add(self.tick_ms, Ordering::SeqCst)
    }

    fn sleep_ms(&self, ms: u64) {
        self.advance_ms(ms);
    }
}
