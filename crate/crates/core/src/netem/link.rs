use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::NetemError;

/// One direction of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkProfile {
    pub one_way_delay: Duration,
    pub loss_probability: f64,
    /// Bits per second; zero means unlimited.
    pub rate_limit: u64,
}

impl LinkProfile {
    pub fn new(one_way_delay: Duration, loss_probability: f64, rate_limit: u64) -> Result<Self, NetemError> {
        if !(0.0..=1.0).contains(&loss_probability) {
            return Err(NetemError::InvalidLoss(loss_probability));
        }
        Ok(Self { one_way_delay, loss_probability, rate_limit })
    }

    pub fn delay_only(one_way_delay: Duration) -> Self {
        Self { one_way_delay, loss_probability: 0.0, rate_limit: 0 }
    }

    /// Time to clock `bytes` onto the wire.
    pub fn serialization_delay(&self, bytes: usize) -> Duration {
        if self.rate_limit == 0 {
            Duration::ZERO
        } else {
            Duration::from_nanos((bytes as u64 * 8 * 1_000_000_000).div_ceil(self.rate_limit))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub packets: u64,
    pub dropped: u64,
    pub bytes_delivered: u64,
}

/// What happened to a packet handed to a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmit {
    Delivered { at: Duration },
    Dropped,
}

/// A directional link with a FIFO transmitter and its own loss stream.
#[derive(Debug, Clone)]
pub struct Link {
    profile: LinkProfile,
    rng: ChaCha8Rng,
    busy_until: Duration,
    stats: LinkStats,
}

impl Link {
    pub fn new(profile: LinkProfile, rng: ChaCha8Rng) -> Self {
        Self { profile, rng, busy_until: Duration::ZERO, stats: LinkStats::default() }
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// Queues `bytes` at `now`. Lost packets still occupy the transmitter, since
    /// loss happens on the channel.
    pub fn transmit(&mut self, now: Duration, bytes: usize) -> Transmit {
        self.stats.packets += 1;
        let start = now.max(self.busy_until);
        self.busy_until = start + self.profile.serialization_delay(bytes);
        let p = self.profile.loss_probability;
        if p > 0.0 && self.rng.gen_bool(p) {
            self.stats.dropped += 1;
            return Transmit::Dropped;
        }
        self.stats.bytes_delivered += bytes as u64;
        Transmit::Delivered { at: self.busy_until + self.profile.one_way_delay }
    }
}
