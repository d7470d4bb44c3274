use std::time::Duration;

/// Token bucket releasing bytes at `window / srtt`, with a burst allowance.
#[derive(Debug, Clone)]
pub struct Pacer {
    tokens: f64,
    capacity: f64,
    last: Duration,
}

impl Pacer {
    pub fn new(burst_bytes: u64) -> Self {
        Self {
            tokens: burst_bytes as f64,
            capacity: burst_bytes as f64,
            last: Duration::ZERO,
        }
    }

    fn refill(&mut self, now: Duration, rate: f64) {
        if now > self.last {
            let dt = (now - self.last).as_secs_f64();
            self.tokens = (self.tokens + dt * rate).min(self.capacity);
            self.last = now;
        }
    }

    /// Earliest time at which `bytes` may leave, or `None` if they may leave now.
    pub fn delay(&mut self, now: Duration, bytes: u64, rate: f64) -> Option<Duration> {
        self.refill(now, rate);
        let need = bytes as f64 - self.tokens;
        if need <= 0.0 || rate <= 0.0 {
            return None;
        }
        let wait = Duration::from_secs_f64(need / rate).max(Duration::from_nanos(1));
        Some(now + wait)
    }

    pub fn on_sent(&mut self, now: Duration, bytes: u64, rate: f64) {
        self.refill(now, rate);
        self.tokens -= bytes as f64;
        if self.tokens < -self.capacity {
            self.tokens = -self.capacity;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_even_spacing() {
        let rate = 1_200_000.0; // 1200 bytes per ms
        let mut p = Pacer::new(2400);
        let t0 = Duration::from_secs(1);
        assert!(p.delay(t0, 1200, rate).is_none());
        p.on_sent(t0, 1200, rate);
        assert!(p.delay(t0, 1200, rate).is_none());
        p.on_sent(t0, 1200, rate);
        let next = p.delay(t0, 1200, rate).unwrap();
        assert_eq!(next - t0, Duration::from_millis(1));
    }
}
