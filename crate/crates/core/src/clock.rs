//! Time sources for trace timestamps.
//!
//! Runs driven by a scripted provider use [`LogicalClock`] so their trace
//! files are byte-identical across processes.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Deterministic clock that advances by a fixed step on every reading.
#[derive(Debug)]
pub struct LogicalClock {
    next: AtomicU64,
    step: u64,
}

impl LogicalClock {
    /// 2024-01-01T00:00:00Z
    pub const DEFAULT_ORIGIN_MS: u64 = 1_704_067_200_000;

    pub fn new(origin_ms: u64, step_ms: u64) -> Self {
        Self {
            next: AtomicU64::new(origin_ms),
            step: step_ms,
        }
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ORIGIN_MS, 1)
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_is_reproducible() {
        let a = LogicalClock::default();
        let b = LogicalClock::default();
        let xs: Vec<u64> = (0..5).map(|_| a.now_ms()).collect();
        let ys: Vec<u64> = (0..5).map(|_| b.now_ms()).collect();
        assert_eq!(xs, ys);
        assert_eq!(xs[4] - xs[0], 4);
    }
}
