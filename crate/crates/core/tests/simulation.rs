use std::path::PathBuf;
use std::time::Duration;

use smaq::handover::ClientPhase;
use smaq::netem::Orbit;
use smaq::sim::{self, Mode, SimConfig, SimReport, Workload};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_trace.txt")
}

fn golden_run() -> SimReport {
    let c = SimConfig::new(Orbit::Geo, 0.001, Mode::SmaqPep, 1, Workload::Page(vec![vec![20_000, 5_000], vec![12_000]]));
    sim::run(c).unwrap()
}

fn trace_text(report: &SimReport) -> String {
    let mut out = Vec::new();
    report.trace.write_to(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn trace_matches_golden_file() {
    let expected = std::fs::read_to_string(golden_path()).expect("golden trace present");
    assert_eq!(trace_text(&golden_run()), expected);
}

#[test]
#[ignore = "rewrites tests/data/golden_trace.txt"]
fn regenerate_golden_trace() {
    std::fs::write(golden_path(), trace_text(&golden_run())).unwrap();
}

#[test]
fn same_seed_same_run() {
    for mode in Mode::ALL {
        let make = || {
            let mut c = SimConfig::new(Orbit::Leo, 0.001, mode, 99, Workload::Bulk);
            c.duration = Duration::from_secs(3);
            c.trace_packets = true;
            sim::run(c).unwrap()
        };
        let (a, b) = (make(), make());
        assert_eq!(a.trace.lines(), b.trace.lines());
        assert_eq!(a.connections[0].stats.timeline, b.connections[0].stats.timeline);
        assert_eq!(a.connections[0].stats.digest, b.connections[0].stats.digest);
        assert_eq!((a.delivered, a.dropped), (b.delivered, b.dropped));
    }
}

#[test]
fn other_seed_other_losses() {
    let make = |seed| {
        let mut c = SimConfig::new(Orbit::Leo, 0.001, Mode::Quic, seed, Workload::Bulk);
        c.duration = Duration::from_secs(3);
        sim::run(c).unwrap().connections[0].stats.timeline.clone()
    };
    assert_ne!(make(1), make(2));
}

#[test]
fn application_bytes_do_not_depend_on_middleboxes() {
    let page = Workload::Page(vec![vec![150_000, 3_000], vec![64_000, 64_000, 1], vec![250_000]]);
    for orbit in Orbit::ALL {
        for loss in [0.0, 0.001] {
            let run = |peps: u8| {
                let mut c = SimConfig::new(orbit, loss, Mode::SmaqPep, 21, page.clone());
                c.pep_count = peps;
                c.capture = true;
                sim::run(c).unwrap()
            };
            let (direct, chained) = (run(0), run(2));
            assert!(direct.connections.iter().all(|c| c.handover.is_none()));
            assert!(chained.connections.iter().all(|c| matches!(c.handover.as_ref().unwrap().phase, ClientPhase::Migrated { .. })));
            for (d, c) in direct.connections.iter().zip(&chained.connections) {
                assert!(d.stats.completed_at.is_some() && c.stats.completed_at.is_some());
                assert_eq!(d.stats.received, c.stats.received);
                assert_eq!(d.stats.digest, c.stats.digest);
                assert_eq!(d.captured, c.captured);
            }
        }
    }
}

#[test]
fn plain_quic_ignores_pep_count() {
    let mut c = SimConfig::new(Orbit::Geo, 0.0, Mode::Quic, 3, Workload::Handshake);
    c.pep_count = 2;
    let report = sim::run(c).unwrap();
    assert!(report.middleboxes.is_empty());
    assert!(!report.connections[0].smaq_negotiated);
}
