//! Token-bucket rate limiter shared by all live provider calls.

use std::sync::Arc;
use std::sync::Mutex;

use crate::clock::Clock;

/// Bucket with capacity one token and a configurable refill rate, so granted
/// requests are spaced at least `1/max_per_sec` apart.
pub struct RateLimiter {
    max_per_sec: f64,
    state: Mutex<Bucket>,
    clock: Arc<dyn Clock>,
}

struct Bucket {
    tokens: f64,
    last_ms: u64,
}

impl RateLimiter {
    pub fn new(max_per_sec: f64, clock: Arc<dyn Clock>) -> Self {
        assert!(max_per_sec > 0.0, "rate must be positive");
        let now = clock.now_ms();
        Self {
            max_per_sec,
            state: Mutex::new(Bucket {
                tokens: 1.0,
                last_ms: now,
            }),
            clock,
        }
    }

    /// Blocks until a token is available, then consumes it. Returns the
    /// clock time at which the request was granted.
    pub fn acquire(&self) -> u64 {
        loop {
            let wait_ms = {
                let mut bucket = self.state.lock().unwrap();
                let now = self.clock.now_ms();
                let elapsed = now.saturating_sub(bucket.last_ms) as f64 / 1_000.0;
                bucket.tokens = (bucket.tokens + elapsed * self.max_per_sec).min(1.0);
                bucket.last_ms = now;
                if bucket.tokens >= 1.0 {
                    bucket.tokens -= 1.0;
                    return now;
                }
                let deficit = 1.0 - bucket.tokens;
                ((deficit / self.max_per_sec) * 1_000.0).ceil() as u64
            };
            self.clock.sleep_ms(wait_ms.max(1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::MockClock;

    #[test]
    fn grants_never_exceed_the_rate_in_any_window() {
        let clock = Arc::new(MockClock::new());
        let limiter = RateLimiter::new(5.0, clock.clone());
        let mut grants = Vec::new();
        for i in 0..40 {
            grants.push(limiter.acquire());
            // Irregular caller pacing; the limiter must still smooth it.
            if i % 3 == 0 {
                clock.advance_ms(37);
            }
        }
        for (i, &start) in grants.iter().enumerate() {
            let in_window = grants[i..]
                .iter()
                .take_while(|&&t| t < start + 1_000)
                .count();
            assert!(
                in_window <= 5,
                "{in_window} grants in window starting {start}"
            );
        }
        // Requests are spaced at least 200 ms apart at 5 rps.
        for pair in grants.windows(2) {
            assert!(pair[1] >= pair[0] + 200, "grants {pair:?} too close");
        }
    }

    #[test]
    fn first_request_is_immediate() {
        let clock = Arc::new(MockClock::new());
        let limiter = RateLimiter::new(2.0, clock);
        assert_eq!(limiter.acquire(), 0);
    }
}
