//! Keyed sliding-window rate limiter.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::clock::Clock;

/// Limits requests per key so that no window of `window` length ever holds more
/// than `per_window` requests.
///
/// A rate `r >= 1` maps to `floor(r)` requests per second; `r < 1` maps to one
/// request per `1/r` seconds.
pub struct RateLimiter {
    per_window: usize,
    window: Duration,
    clock: Arc<dyn Clock>,
    slots: Mutex<HashMap<String, VecDeque<Duration>>>,
}

impl std::fmt::Debug for RateLimiter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateLimiter")
            .field("per_window", &self.per_window)
            .field("window", &self.window)
            .finish()
    }
}

impl RateLimiter {
    /// Panics unless `rate` is finite and positive.
    pub fn new(rate: f64, clock: Arc<dyn Clock>) -> Self {
        assert!(rate.is_finite() && rate > 0.0, "rate must be positive");
        let (per_window, window) = if rate >= 1.0 {
            (rate.floor() as usize, Duration::from_secs(1))
        } else {
            (1, Duration::from_secs_f64(1.0 / rate))
        };
        Self {
            per_window,
            window,
            clock,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Reserves the next free slot for `key` and waits for it.
    pub fn acquire(&self, key: &str) {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            let q = slots.entry(key.to_string()).or_default();
            let now = self.clock.elapsed();
            let mut t = now.max(q.back().copied().unwrap_or(Duration::ZERO));
            if q.len() >= self.per_window {
                t = t.max(q[q.len() - self.per_window] + self.window);
            }
            while q.front().is_some_and(|&f| f + self.window <= t) {
                q.pop_front();
            }
            q.push_back(t);
            t
        };
        self.clock.sleep_until(slot);
    }
}
