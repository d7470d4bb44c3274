//! Congestion control, RTT estimation and pacing.
//!
//! Two window rules are available: NewReno, and a composition of Hybla's
//! RTT-scaled window growth with Westwood+'s bandwidth-based loss response.
//! With `rho == 1` both produce identical slow-start and
//! congestion-avoidance updates.

mod pacer;
mod rtt;
mod westwood;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

pub use pacer::Pacer;
pub use rtt::{RttEstimator, DEFAULT_INITIAL_RTT};
pub use westwood::{BandwidthEstimator, MIN_SAMPLE_INTERVAL};

pub const DEFAULT_MAX_DATAGRAM_SIZE: u64 = 1200;
pub const DEFAULT_INITIAL_WINDOW_PACKETS: u64 = 10;
pub const MIN_WINDOW_PACKETS: u64 = 2;
/// Hybla reference RTT.
pub const DEFAULT_REFERENCE_RTT: Duration = Duration::from_millis(25);
pub const DEFAULT_MAX_ACK_DELAY: Duration = Duration::from_millis(25);
pub const DEFAULT_PACING_BURST_PACKETS: u64 = 10;
pub const DEFAULT_LOSS_REDUCTION_FACTOR: f64 = 0.5;
/// Exponent ceiling for `2^rho`; keeps the growth factor finite.
const MAX_RHO_EXPONENT: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    NewReno,
    HyblaWestwood,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::NewReno => "newreno",
            Algorithm::HyblaWestwood => "hybla-westwood",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown congestion control algorithm `{0}`")]
pub struct UnknownAlgorithm(pub String);

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "newreno" => Ok(Algorithm::NewReno),
            "hybla-westwood" | "hybla" => Ok(Algorithm::HyblaWestwood),
            other => Err(UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CongestionConfig {
    pub algorithm: Algorithm,
    pub max_datagram_size: u64,
    pub initial_window_packets: u64,
    /// Upper bound on the window in bytes.
    pub max_window: u64,
    pub reference_rtt: Duration,
    /// Seeds the RTT estimator before the first sample.
    pub initial_rtt: Duration,
    pub max_ack_delay: Duration,
    /// Keep the PTO constant until [`Controller::on_migration_complete`].
    pub disable_backoff_until_migration: bool,
    pub pacing: bool,
    pub pacing_burst_packets: u64,
    /// NewReno multiplicative decrease.
    pub loss_reduction_factor: f64,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::NewReno,
            max_datagram_size: DEFAULT_MAX_DATAGRAM_SIZE,
            initial_window_packets: DEFAULT_INITIAL_WINDOW_PACKETS,
            max_window: u64::MAX,
            reference_rtt: DEFAULT_REFERENCE_RTT,
            initial_rtt: DEFAULT_INITIAL_RTT,
            max_ack_delay: DEFAULT_MAX_ACK_DELAY,
            disable_backoff_until_migration: false,
            pacing: true,
            pacing_burst_packets: DEFAULT_PACING_BURST_PACKETS,
            loss_reduction_factor: DEFAULT_LOSS_REDUCTION_FACTOR,
        }
    }
}

impl CongestionConfig {
    pub fn new_reno() -> Self {
        Self::default()
    }

    pub fn hybla_westwood() -> Self {
        Self {
            algorithm: Algorithm::HyblaWestwood,
            ..Self::default()
        }
    }

    /// Caps the window at [`DEFAULT_BDP_CAP_FACTOR`] bandwidth-delay
    /// products, but never below two initial windows.
    pub fn with_bdp_cap(self, rate_bps: u64, rtt: Duration) -> Self {
        self.with_bdp_cap_factor(rate_bps, rtt, DEFAULT_BDP_CAP_FACTOR)
    }

    pub fn with_bdp_cap_factor(mut self, rate_bps: u64, rtt: Duration, factor: u64) -> Self {
        self.max_window = bdp_cap(rate_bps, rtt, factor, self.initial_window());
        self
    }

    pub fn initial_window(&self) -> u64 {
        self.initial_window_packets * self.max_datagram_size
    }
}

/// Window cap in bandwidth-delay products.
pub const DEFAULT_BDP_CAP_FACTOR: u64 = 2;

/// `max(factor * rate * rtt / 8, 2 * initial_window)` in bytes. A zero rate
/// means no cap.
pub fn bdp_cap(rate_bps: u64, rtt: Duration, factor: u64, initial_window: u64) -> u64 {
    if rate_bps == 0 {
        return u64::MAX;
    }
    let bdp = (rate_bps as f64 / 8.0 * rtt.as_secs_f64()) as u64;
    (factor * bdp).max(2 * initial_window)
}

/// Window, recovery and timer state for one path.
#[derive(Debug, Clone)]
pub struct Controller {
    config: CongestionConfig,
    cwnd: u64,
    ssthresh: u64,
    /// Packets sent at or before this time do not start a new recovery period
    /// and do not grow the window.
    recovery_start: Option<Duration>,
    /// Packets sent before this time belong to a previous path.
    epoch_start: Duration,
    ca_acc: f64,
    bytes_in_flight: u64,
    rtt: RttEstimator,
    bwe: BandwidthEstimator,
    pto_count: u32,
    backoff_disabled: bool,
    pacer: Pacer,
    congestion_events: u64,
}

impl Controller {
    pub fn new(config: CongestionConfig) -> Self {
        let burst = config.pacing_burst_packets * config.max_datagram_size;
        let cwnd = config.initial_window().min(config.max_window);
        Self {
            cwnd,
            ssthresh: u64::MAX,
            recovery_start: None,
            epoch_start: Duration::ZERO,
            ca_acc: 0.0,
            bytes_in_flight: 0,
            rtt: RttEstimator::new(config.initial_rtt),
            bwe: BandwidthEstimator::new(),
            pto_count: 0,
            backoff_disabled: config.disable_backoff_until_migration,
            pacer: Pacer::new(burst),
            congestion_events: 0,
            config,
        }
    }

    pub fn config(&self) -> &CongestionConfig {
        &self.config
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    pub fn window(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }

    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }

    pub fn bandwidth_estimate(&self) -> f64 {
        self.bwe.estimate()
    }

    pub fn bytes_in_flight(&self) -> u64 {
        self.bytes_in_flight
    }

    pub fn congestion_events(&self) -> u64 {
        self.congestion_events
    }

    pub fn pto_count(&self) -> u32 {
        self.pto_count
    }

    pub fn backoff_disabled(&self) -> bool {
        self.backoff_disabled
    }

    pub fn epoch_start(&self) -> Duration {
        self.epoch_start
    }

    /// Hybla's normalized RTT, `max(1, srtt / rtt0)`. Always 1 for NewReno.
    pub fn rho(&self) -> f64 {
        match self.config.algorithm {
            Algorithm::NewReno => 1.0,
            Algorithm::HyblaWestwood => {
                let r = self.rtt.smoothed().as_secs_f64() / self.config.reference_rtt.as_secs_f64();
                r.max(1.0)
            }
        }
    }

    fn min_window(&self) -> u64 {
        MIN_WINDOW_PACKETS * self.config.max_datagram_size
    }

    fn clamp(&mut self) {
        self.cwnd = self.cwnd.min(self.config.max_window).max(self.min_window());
    }

    /// Remaining window in bytes.
    pub fn available(&self) -> u64 {
        self.cwnd.saturating_sub(self.bytes_in_flight)
    }

    pub fn on_packet_sent(&mut self, now: Duration, bytes: u64) {
        self.bytes_in_flight += bytes;
        if self.config.pacing {
            let rate = self.pacing_rate();
            self.pacer.on_sent(now, bytes, rate);
        }
    }

    /// Removes bytes from flight without any window reaction (discarded keys,
    /// packets from a previous path).
    pub fn on_packet_discarded(&mut self, bytes: u64) {
        self.bytes_in_flight = self.bytes_in_flight.saturating_sub(bytes);
    }

    /// Bytes per second.
    pub fn pacing_rate(&self) -> f64 {
        let srtt = self.rtt.smoothed().as_secs_f64().max(1e-6);
        self.cwnd as f64 / srtt
    }

    /// When pacing holds back a packet of `bytes`, the time it may be sent.
    pub fn pacing_delay(&mut self, now: Duration, bytes: u64) -> Option<Duration> {
        if !self.config.pacing {
            return None;
        }
        let rate = self.pacing_rate();
        self.pacer.delay(now, bytes, rate)
    }

    /// Feeds an RTT sample for a packet sent at `sent`. Samples from a previous
    /// path are ignored.
    pub fn on_rtt_sample(&mut self, sample: Duration, ack_delay: Duration, sent: Duration) {
        if sent < self.epoch_start {
            return;
        }
        let ack_delay = ack_delay.min(self.config.max_ack_delay);
        self.rtt.update(sample, ack_delay);
    }

    /// Acknowledgement of `acked` in-flight bytes whose newest packet was sent at `sent`.
    pub fn on_ack(&mut self, acked: u64, sent: Duration, now: Duration) {
        self.bytes_in_flight = self.bytes_in_flight.saturating_sub(acked);
        self.pto_count = 0;
        if self.config.algorithm == Algorithm::HyblaWestwood {
            self.bwe.on_ack(acked, now, self.rtt.smoothed());
        }
        if self.recovery_start.is_some_and(|r| sent <= r) {
            return;
        }
        self.grow(acked);
    }

    fn grow(&mut self, acked: u64) {
        let mss = self.config.max_datagram_size as f64;
        let rho = self.rho();
        if self.in_slow_start() {
            let factor = 2f64.powf(rho.min(MAX_RHO_EXPONENT)) - 1.0;
            let inc = (factor * acked as f64).min(self.cwnd as f64) as u64;
            let grown = self.cwnd.saturating_add(inc);
            self.cwnd = if grown > self.ssthresh && self.cwnd < self.ssthresh {
                self.ssthresh
            } else {
                grown
            };
        } else {
            // cwnd += rho^2 * mss * acked / cwnd, applied in whole datagrams.
            self.ca_acc += rho * rho * acked as f64;
            let steps = (self.ca_acc / self.cwnd as f64).floor();
            if steps >= 1.0 {
                self.ca_acc -= steps * self.cwnd as f64;
                self.cwnd = self.cwnd.saturating_add((steps * mss) as u64);
            }
        }
        self.clamp();
    }

    /// Losses of in-flight bytes; `largest_sent` is the send time of the newest lost packet.
    pub fn on_loss(&mut self, lost: u64, largest_sent: Duration, now: Duration) {
        self.bytes_in_flight = self.bytes_in_flight.saturating_sub(lost);
        if largest_sent < self.epoch_start || self.recovery_start.is_some_and(|r| largest_sent <= r) {
            return;
        }
        self.recovery_start = Some(now);
        self.congestion_events += 1;
        self.ca_acc = 0.0;
        let min = self.min_window();
        match self.config.algorithm {
            Algorithm::NewReno => {
                self.ssthresh = ((self.cwnd as f64 * self.config.loss_reduction_factor) as u64).max(min);
                self.cwnd = self.ssthresh;
            }
            Algorithm::HyblaWestwood => {
                // The estimate lags badly early on long paths; never cut deeper than NewReno.
                let pipe = self.westwood_ssthresh().unwrap_or(0);
                self.ssthresh = pipe.max(self.cwnd / 2).max(min);
                self.cwnd = self.cwnd.min(self.ssthresh);
            }
        }
        self.clamp();
    }

    /// `bwe * min_rtt`, once a bandwidth sample exists.
    pub fn westwood_ssthresh(&self) -> Option<u64> {
        (self.bwe.samples() > 0).then(|| westwood_ssthresh(self.bwe.estimate(), self.rtt.min()))
    }

    /// PTO duration for the next timeout.
    pub fn pto(&self, include_ack_delay: bool) -> Duration {
        let mad = if include_ack_delay { self.config.max_ack_delay } else { Duration::ZERO };
        let base = self.rtt.pto_base(mad);
        if self.backoff_disabled {
            base
        } else {
            base * 2u32.saturating_pow(self.pto_count.min(16))
        }
    }

    /// PTO deadline relative to the last ack-eliciting send.
    pub fn retransmission_timer(&self, last_ack_eliciting: Duration, include_ack_delay: bool) -> Duration {
        last_ack_eliciting + self.pto(include_ack_delay)
    }

    pub fn on_pto_expired(&mut self) {
        self.pto_count = self.pto_count.saturating_add(1);
    }

    pub fn reset_pto_count(&mut self) {
        self.pto_count = 0;
    }

    /// Re-enables exponential PTO backoff.
    pub fn on_migration_complete(&mut self) {
        self.backoff_disabled = false;
    }

    /// Fresh window and RTT state for a new path. In-flight bytes sent before
    /// `now` no longer count and never trigger a congestion event.
    pub fn reset_for_new_path(&mut self, now: Duration) {
        let config = self.config.clone();
        let backoff_disabled = self.backoff_disabled;
        let events = self.congestion_events;
        *self = Self::new(config);
        self.backoff_disabled = backoff_disabled;
        self.congestion_events = events;
        self.epoch_start = now;
        self.pacer = Pacer::new(self.config.pacing_burst_packets * self.config.max_datagram_size);
    }
}

/// Westwood's post-loss threshold in bytes: estimated pipe size.
pub fn westwood_ssthresh(bandwidth: f64, min_rtt: Duration) -> u64 {
    (bandwidth * min_rtt.as_secs_f64()) as u64
}
