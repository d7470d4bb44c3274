use std::time::Duration;

/// Lower bound on the bandwidth sampling interval.
pub const MIN_SAMPLE_INTERVAL: Duration = Duration::from_millis(50);

/// Westwood+ style bandwidth estimate from the acknowledgement rate.
///
/// Acked bytes are accumulated over an interval of at least one RTT; each
/// interval yields one sample that passes through two 7/8 low-pass stages.
#[derive(Debug, Clone, Default)]
pub struct BandwidthEstimator {
    window_start: Option<Duration>,
    acked: u64,
    stage1: f64,
    estimate: f64,
    samples: u64,
}

impl BandwidthEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes per second, zero until the first interval closes.
    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn on_ack(&mut self, acked: u64, now: Duration, rtt: Duration) {
        let start = *self.window_start.get_or_insert(now);
        self.acked += acked;
        let elapsed = now.saturating_sub(start);
        if elapsed < rtt.max(MIN_SAMPLE_INTERVAL) {
            return;
        }
        let sample = self.acked as f64 / elapsed.as_secs_f64();
        if self.samples == 0 {
            self.stage1 = sample;
            self.estimate = sample;
        } else {
            self.stage1 = (7.0 * self.stage1 + sample) / 8.0;
            self.estimate = (7.0 * self.estimate + self.stage1) / 8.0;
        }
        self.samples += 1;
        self.window_start = Some(now);
        self.acked = 0;
    }
}
