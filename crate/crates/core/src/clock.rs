//! Time source abstraction so rate limiting, backoff and timestamps can run
//! against a virtual clock in tests.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};

pub trait Clock: Send + Sync {
    /// Monotonic time since the clock's origin.
    fn elapsed(&self) -> Duration;

    /// Blocks (or advances virtual time) until `elapsed() >= deadline`.
    fn sleep_until(&self, deadline: Duration);

    fn sleep(&self, d: Duration) {
        self.sleep_until(self.elapsed() + d);
    }

    fn utc_now(&self) -> DateTime<Utc>;

    /// ISO-8601 UTC timestamp with second precision.
    fn timestamp(&self) -> String {
        self.utc_now().to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

/// Wall clock.
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
    fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.elapsed();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }

    fn utc_now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: sleeping advances time instantly.
#[derive(Debug)]
pub struct VirtualClock {
    start: DateTime<Utc>,
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            start,
            now: Mutex::new(Duration::ZERO),
        }
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new(DateTime::<Utc>::UNIX_EPOCH)
    }
}

impl Clock for VirtualClock {
    fn elapsed(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut now = self.now.lock().unwrap();
        if deadline > *now {
            *now = deadline;
        }
    }

    fn utc_now(&self) -> DateTime<Utc> {
        let elapsed = chrono::Duration::from_std(self.elapsed()).unwrap_or_default();
        self.start + elapsed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_sleep_advances() {
        let c = VirtualClock::default();
        c.sleep(Duration::from_secs(2));
        c.sleep_until(Duration::from_secs(1));
        assert_eq!(c.elapsed(), Duration::from_secs(2));
        assert_eq!(c.timestamp(), "1970-01-01T00:00:02Z");
    }
}
