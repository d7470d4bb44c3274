use std::time::Duration;

/// Default initial RTT before any sample is taken.
pub const DEFAULT_INITIAL_RTT: Duration = Duration::from_millis(333);

const GRANULARITY: Duration = Duration::from_millis(1);

/// Smoothed RTT estimator following the usual QUIC rules.
#[derive(Debug, Clone)]
pub struct RttEstimator {
    initial: Duration,
    smoothed: Duration,
    var: Duration,
    min: Duration,
    latest: Duration,
    has_sample: bool,
}

impl RttEstimator {
    pub fn new(initial: Duration) -> Self {
        Self {
            initial,
            smoothed: initial,
            var: initial / 2,
            min: initial,
            latest: initial,
            has_sample: false,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.initial);
    }

    pub fn initial(&self) -> Duration {
        self.initial
    }

    pub fn smoothed(&self) -> Duration {
        self.smoothed
    }

    pub fn var(&self) -> Duration {
        self.var
    }

    pub fn min(&self) -> Duration {
        self.min
    }

    pub fn latest(&self) -> Duration {
        self.latest
    }

    pub fn has_sample(&self) -> bool {
        self.has_sample
    }

    /// Feeds one sample. `ack_delay` is already clamped by the caller.
    pub fn update(&mut self, sample: Duration, ack_delay: Duration) {
        self.latest = sample;
        if !self.has_sample {
            self.has_sample = true;
            self.min = sample;
            self.smoothed = sample;
            self.var = sample / 2;
            return;
        }
        self.min = self.min.min(sample);
        let adjusted = if sample >= self.min + ack_delay {
            sample - ack_delay
        } else {
            sample
        };
        let diff = if self.smoothed > adjusted {
            self.smoothed - adjusted
        } else {
            adjusted - self.smoothed
        };
        self.var = (self.var * 3 + diff) / 4;
        self.smoothed = (self.smoothed * 7 + adjusted) / 8;
    }

    /// `smoothed + max(4 * var, granularity) + max_ack_delay`.
    pub fn pto_base(&self, max_ack_delay: Duration) -> Duration {
        self.smoothed + (self.var * 4).max(GRANULARITY) + max_ack_delay
    }

    /// Delay after which an unacknowledged packet is declared lost by time.
    pub fn loss_delay(&self) -> Duration {
        (self.latest.max(self.smoothed) * 9 / 8).max(GRANULARITY)
    }
}
