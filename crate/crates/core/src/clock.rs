//! Monotonic time sources.
//!
//! Every timestamp in the kernel is nanoseconds on a [`Clock`]. Scenario runs
//! use [`VirtualClock`], which only moves when the driver advances it, so runs
//! are reproducible regardless of host speed. [`MonotonicClock`] is used when
//! the kernel runs live or when a test wants real latency measurements.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Nanoseconds since the clock's origin.
pub type Nanos = u64;

pub const NANOS_PER_MS: Nanos = 1_000_000;

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now_ns(&self) -> Nanos;
}

/// Deterministic clock advanced explicitly by the driver.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shared() -> Arc<Self> {
        Arc::new(Self::new())
    }

    /// Move the clock forward to `t`. Moving backwards is a no-op.
    pub fn advance_to(&self, t: Nanos) {
        self.now.fetch_max(t, Ordering::SeqCst);
    }

    pub fn advance_by(&self, dt: Nanos) {
        self.now.fetch_add(dt, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> Nanos {
        self.now.load(Ordering::SeqCst)
    }
}

/// Wall-clock monotonic time measured from construction.
#[derive(Debug)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> Nanos {
        self.origin.elapsed().as_nanos() as Nanos
    }
}
