//! Time sources.
//!
//! Everything that expires (heap events, service leases) reads time as whole
//! seconds from a [`Clock`]. Tests drive a [`ManualClock`]; the daemon uses a
//! [`SystemClock`] anchored at boot.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

/// Logical timestamp in seconds.
pub type Tick = u64;

pub trait Clock: Send + Sync {
    fn now(&self) -> Tick;
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start: Tick) -> Self {
        Self {
            now: AtomicU64::new(start),
        }
    }

    pub fn set(&self, now: Tick) {
        self.now.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: Tick) -> Tick {
        self.now.fetch_add(secs, Ordering::SeqCst) + secs
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Tick {
        self.now.load(Ordering::SeqCst)
    }
}

/// Seconds elapsed since the clock was created.
#[derive(Debug)]
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
    fn now(&self) -> Tick {
        self.origin.elapsed().as_secs()
    }
}
