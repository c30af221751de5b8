//! Sliding-window rate limiter over an injectable clock.

use std::collections::VecDeque;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

/// Monotonic time source. The fake implementation lets tests drive time.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default)]
pub struct SystemClock;

fn process_origin() -> Instant {
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    *ORIGIN.get_or_init(Instant::now)
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        process_origin().elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Test clock: `sleep` advances time instantly.
#[derive(Debug, Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// At most `ceiling` calls may be issued within any window of the configured
/// width; `acquire` blocks (via the clock) until a slot frees up.
pub struct RateLimiter<C: Clock> {
    ceiling: usize,
    window: Duration,
    clock: C,
    issued: Mutex<VecDeque<Duration>>,
}

impl<C: Clock> RateLimiter<C> {
    pub fn new(ceiling: usize, window: Duration, clock: C) -> Self {
        RateLimiter {
            ceiling: ceiling.max(1),
            window,
            clock,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = self.clock.now();
                while issued.front().is_some_and(|&t| now.saturating_sub(t) >= self.window) {
                    issued.pop_front();
                }
                if issued.len() < self.ceiling {
                    issued.push_back(now);
                    return;
                }
                (*issued.front().unwrap() + self.window).saturating_sub(now)
            };
            self.clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }

    /// Issue timestamps, oldest first (for tests).
    pub fn issue_log(&self) -> Vec<Duration> {
        self.issued.lock().unwrap().iter().copied().collect()
    }
}
