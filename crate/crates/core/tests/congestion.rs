use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smaq::congestion::{westwood_ssthresh, Algorithm, CongestionConfig, Controller, DEFAULT_MAX_DATAGRAM_SIZE};
use smaq::netem::{Orbit, DOWNLINK_RATE};
use smaq::sim::{self, Mode, SimConfig, Workload};

const MSS: u64 = DEFAULT_MAX_DATAGRAM_SIZE;

fn ms(v: u64) -> Duration {
    Duration::from_millis(v)
}

fn seeded(config: CongestionConfig, rtt: Duration) -> Controller {
    let mut c = Controller::new(config);
    c.on_rtt_sample(rtt, Duration::ZERO, Duration::ZERO);
    c
}

#[test]
fn hybla_at_reference_rtt_matches_newreno() {
    let rtt = ms(120);
    let mut reno = seeded(CongestionConfig::new_reno(), rtt);
    let mut hybla = seeded(CongestionConfig { reference_rtt: rtt, ..CongestionConfig::hybla_westwood() }, rtt);
    assert_eq!(hybla.rho(), 1.0);

    // The whole trace spans less than one RTT, so Westwood never closes a
    // bandwidth sample and its loss response is plain halving.
    let mut now = ms(200);
    let mut in_avoidance = 0;
    for step in 0..4000u64 {
        let acked = MSS * (1 + step % 3);
        for c in [&mut reno, &mut hybla] {
            c.on_packet_sent(now, acked);
            c.on_ack(acked, now, now + Duration::from_micros(5));
        }
        assert_eq!(reno.window(), hybla.window(), "ack {step}");
        assert_eq!(reno.in_slow_start(), hybla.in_slow_start());
        in_avoidance += u32::from(!reno.in_slow_start());
        now += Duration::from_micros(10);
        if step == 300 {
            assert!(hybla.westwood_ssthresh().is_none());
            let w = reno.window();
            reno.on_loss(MSS, now, now);
            hybla.on_loss(MSS, now, now);
            assert_eq!((reno.window(), hybla.window()), (w / 2, w / 2));
            now += Duration::from_micros(10);
        }
    }
    assert!(in_avoidance > 3000);
}

fn grow_to(c: &mut Controller, window: u64, rtt: Duration) {
    let mut now = ms(0);
    while c.window() < window {
        let step = (window - c.window()).min(MSS);
        c.on_packet_sent(now, step);
        c.on_ack(step, now, now + rtt);
        now += ms(1);
    }
}

#[test]
fn hybla_rho_twenty_growth_is_clamped() {
    let mut c = seeded(CongestionConfig::hybla_westwood(), ms(500));
    assert_eq!(c.rho(), 20.0);
    let before = c.window();
    c.on_packet_sent(ms(0), MSS);
    c.on_ack(MSS, ms(0), ms(500));
    // (2^20 - 1) * 1200 would be 1.26 GB; growth per ack stops at one window.
    assert_eq!(c.window(), 2 * before);
}

#[test]
fn westwood_keeps_estimated_pipe() {
    let mut reno = Controller::new(CongestionConfig::new_reno());
    grow_to(&mut reno, 100 * MSS, ms(100));
    reno.on_loss(MSS, ms(50), ms(60));
    assert_eq!(reno.window(), 50 * MSS);

    // 80 packets per 100 ms of estimated bandwidth.
    assert_eq!(westwood_ssthresh(80.0 * MSS as f64 * 10.0, ms(100)), 80 * MSS);
}

proptest! {
    #[test]
    fn westwood_ssthresh_monotone_in_bandwidth(
        a in 0.0f64..1e9,
        b in 0.0f64..1e9,
        rtt_us in 1u64..2_000_000,
    ) {
        let rtt = Duration::from_micros(rtt_us);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(westwood_ssthresh(lo, rtt) <= westwood_ssthresh(hi, rtt));
    }

    #[test]
    fn window_stays_within_bounds(
        events in prop::collection::vec((any::<bool>(), 1u64..20), 1..400),
        hybla in any::<bool>(),
    ) {
        let base = if hybla { CongestionConfig::hybla_westwood() } else { CongestionConfig::new_reno() };
        let config = base.with_bdp_cap(DOWNLINK_RATE, ms(500));
        let cap = config.max_window;
        let mut c = seeded(config, ms(500));
        let initial_ssthresh = c.ssthresh();
        let mut now = ms(0);
        for (loss, packets) in events {
            now += ms(7);
            let bytes = packets * MSS;
            c.on_packet_sent(now, bytes);
            if loss {
                c.on_loss(bytes, now, now + ms(1));
                prop_assert!(c.ssthresh() <= initial_ssthresh);
            } else {
                c.on_ack(bytes, now, now + ms(500));
            }
            prop_assert!(c.window() >= 2 * MSS);
            prop_assert!(c.window() <= cap);
            prop_assert!(c.rho() >= 1.0);
        }
    }
}

/// Round-based model: each round sends one window, every packet is lost
/// independently with probability `loss`, acks are spread over the round.
fn time_averaged_window(config: CongestionConfig, rtt: Duration, loss: f64, secs: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = seeded(config, rtt);
    let mut now = Duration::ZERO;
    let end = Duration::from_secs(secs);
    let mut area = 0.0;
    while now < end {
        let window = c.window();
        area += window as f64 * rtt.as_secs_f64();
        let packets = (window / MSS).max(1);
        for i in 0..packets {
            c.on_packet_sent(now, MSS);
            let at = now + rtt + rtt.mul_f64(i as f64 / packets as f64);
            if rng.gen_bool(loss) {
                c.on_loss(MSS, now, at);
            } else {
                c.on_rtt_sample(rtt, Duration::ZERO, now);
                c.on_ack(MSS, now, at);
            }
        }
        now += rtt;
    }
    area / now.as_secs_f64()
}

#[test]
fn hybla_westwood_holds_larger_window_under_random_loss() {
    let rtt = ms(540);
    for seed in 1..=5 {
        let reno = time_averaged_window(CongestionConfig::new_reno().with_bdp_cap(DOWNLINK_RATE, rtt), rtt, 0.001, 30, seed);
        let hw = time_averaged_window(CongestionConfig::hybla_westwood().with_bdp_cap(DOWNLINK_RATE, rtt), rtt, 0.001, 30, seed);
        assert!(hw / reno > 1.0, "seed {seed}: hybla-westwood {hw:.0} vs newreno {reno:.0}");
    }
}

/// Goodput between 20 s and 30 s of an unlimited download at zero loss.
fn late_goodput(orbit: Orbit, mode: Mode) -> f64 {
    let mut config = SimConfig::new(orbit, 0.0, mode, 7, Workload::Bulk);
    config.duration = Duration::from_secs(30);
    let report = sim::run(config).unwrap();
    let bytes = report.bytes_at(Duration::from_secs(30)) - report.bytes_at(Duration::from_secs(20));
    bytes as f64 * 8.0 / 10.0
}

#[test]
fn both_controllers_reach_link_rate() {
    // Plain QUIC runs NewReno end to end; the PEP chain runs Hybla-Westwood
    // on the satellite hop.
    for (mode, algorithm) in [(Mode::Quic, Algorithm::NewReno), (Mode::SmaqPep, Algorithm::HyblaWestwood)] {
        let config = SimConfig::new(Orbit::Geo, 0.0, mode, 0, Workload::Bulk);
        let used = if mode == Mode::Quic {
            config.endpoint_config().congestion.algorithm
        } else {
            config.satellite_leg_config(config.satellite_rtt()).congestion.algorithm
        };
        assert_eq!(used, algorithm);
        for orbit in Orbit::ALL {
            let goodput = late_goodput(orbit, mode);
            let ratio = goodput / DOWNLINK_RATE as f64;
            assert!(ratio > 0.9 && ratio <= 1.0, "{orbit} {mode}: {goodput:.0} bit/s");
        }
    }
}
