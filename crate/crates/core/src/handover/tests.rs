use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::crypto::{Secret, SecretLabel, Side};
use crate::net::{Addr, Datagram};
use crate::transport::{CidOwner, Connection, ConnectionConfig, ConnectionId, Event, TransportParameters};

const CLIENT: Addr = Addr::new(0, 1);
const SERVER: Addr = Addr::new(3, 443);

fn smaq_config() -> ConnectionConfig {
    ConnectionConfig { smaq: true, ..ConnectionConfig::default() }
}

/// Runs a handshake with instant delivery until the client has 1-RTT keys.
fn established() -> (Connection, Connection) {
    let now = Duration::ZERO;
    let mut client = Connection::connect(smaq_config(), CLIENT, SERVER, 1, now);
    let first = client.poll_transmit(now).unwrap();
    let mut server = Connection::accept(smaq_config(), SERVER, first, 2, now).unwrap();
    while !client.keys_established() {
        let mut idle = true;
        while let Some(d) = server.poll_transmit(now) {
            client.handle_datagram(now, d);
            idle = false;
        }
        while let Some(d) = client.poll_transmit(now) {
            server.handle_datagram(now, d);
            idle = false;
        }
        assert!(!idle, "handshake stalled");
    }
    (client, server)
}

fn psk() -> Secret {
    Secret::new([9; 32], SecretLabel::Intermediate("psk"))
}

#[test]
fn state_requires_client_keys() {
    let now = Duration::ZERO;
    let client = Connection::connect(smaq_config(), CLIENT, SERVER, 1, now);
    assert_eq!(SmaqState::from_client(&client).unwrap_err(), HandoverError::StateNotReady);
    let (_, server) = established();
    assert_eq!(SmaqState::from_client(&server).unwrap_err(), HandoverError::StateNotReady);
}

#[test]
fn captured_state_round_trips() {
    let (client, server) = established();
    let state = SmaqState::from_client(&client).unwrap();
    assert_eq!(state.client_addr(), CLIENT);
    assert_eq!(state.server_addr(), SERVER);
    assert_eq!(state.cid(CidOwner::Client), Some(client.local_cid().cid));
    assert_eq!(state.cid(CidOwner::Server), Some(server.local_cid().cid));
    assert_eq!(state.reset_token(server.local_cid().cid), Some(server.local_cid().reset_token));
    let secrets = client.application_secrets().unwrap();
    assert_eq!(state.traffic_secrets.0.as_bytes(), secrets.client.as_bytes());
    assert_eq!(state.traffic_secrets.1.as_bytes(), secrets.server.as_bytes());

    let bytes = state.to_bytes();
    assert_eq!(&bytes[..4], STATE_MAGIC);
    assert_eq!(SmaqState::from_bytes(&bytes).unwrap(), state);
}

#[test]
fn state_excludes_exporter_secret() {
    let (client, _) = established();
    let bytes = SmaqState::from_client(&client).unwrap().to_bytes();
    let exporter = client.exporter_secret().unwrap().as_bytes().to_vec();
    assert!(!bytes.windows(exporter.len()).any(|w| w == exporter.as_slice()));
}

#[test]
fn malformed_state_rejected() {
    let (client, _) = established();
    let bytes = SmaqState::from_client(&client).unwrap().to_bytes();
    for cut in [0, 3, 5, bytes.len() / 2, bytes.len() - 1] {
        assert!(SmaqState::from_bytes(&bytes[..cut]).is_err(), "prefix {cut}");
    }
    let mut v = bytes.clone();
    v[4] = 9;
    assert_eq!(SmaqState::from_bytes(&v).unwrap_err(), HandoverError::UnknownStateVersion(9));
    let mut v = bytes.clone();
    v[5] = 2;
    assert_eq!(SmaqState::from_bytes(&v).unwrap_err(), HandoverError::Malformed("field order"));
    let mut v = bytes;
    v.push(0);
    assert_eq!(SmaqState::from_bytes(&v).unwrap_err(), HandoverError::Malformed("trailing bytes"));
}

#[test]
fn wipe_zeroes_secrets() {
    let (client, _) = established();
    let mut state = SmaqState::from_client(&client).unwrap();
    assert!(!state.is_wiped());
    state.wipe();
    assert!(state.is_wiped());
}

#[test]
fn capability_rejections() {
    let (client, _) = established();
    let state = SmaqState::from_client(&client).unwrap();
    let caps = Capabilities::default();
    assert_eq!(caps.check(&state), Ok(()));

    let mut s = state.clone();
    s.quic_version = 0xff00_001d;
    assert_eq!(caps.check(&s), Err(ErrorReason::VersionUnsupported));
    let mut s = state.clone();
    s.cipher_suite = 0x1303;
    assert_eq!(caps.check(&s), Err(ErrorReason::CipherUnsupported));
    let mut s = state;
    s.transport_parameters.1.set(0x20, vec![1]);
    assert_eq!(caps.check(&s), Err(ErrorReason::TransportParameterUnsupported));
}

#[test]
fn messages_round_trip() {
    let (client, _) = established();
    let state = SmaqState::from_client(&client).unwrap();
    for m in [
        HandoverMessage::StateOffer(state),
        HandoverMessage::SmaqOk { facade: Addr::new(1, 20000) },
        HandoverMessage::SmaqError(ErrorReason::CipherUnsupported),
    ] {
        assert_eq!(HandoverMessage::decode(&m.encode()).unwrap(), m);
    }
    assert!(HandoverMessage::decode(&[]).is_err());
    assert!(HandoverMessage::decode(&[3, 7]).is_err());
}

/// Shuttles datagrams between two channel endpoints with a fixed delay,
/// dropping those for which `drop` returns true.
fn shuttle(
    a: &mut OobEndpoint,
    b: &mut OobEndpoint,
    delay: Duration,
    until: Duration,
    mut drop: impl FnMut(&Datagram) -> bool,
) -> Vec<(Duration, Delivered)> {
    let mut now = Duration::ZERO;
    let mut wire: Vec<(Duration, Datagram)> = Vec::new();
    let mut delivered = Vec::new();
    loop {
        for ep in [&mut *a, &mut *b] {
            while let Some(d) = ep.poll_transmit(now) {
                if !drop(&d) {
                    wire.push((now + delay, d));
                }
            }
        }
        let next = wire.iter().map(|(t, _)| *t).chain(a.poll_timeout()).chain(b.poll_timeout()).min();
        let Some(next) = next.filter(|&t| t <= until) else { break };
        now = now.max(next);
        let (ready, rest): (Vec<_>, Vec<_>) = wire.into_iter().partition(|(t, _)| *t <= now);
        wire = rest;
        for (_, d) in ready {
            let ep = if d.dst == a.local_addr() { &mut *a } else { &mut *b };
            if let Some(m) = ep.handle_datagram(now, d) {
                delivered.push((now, m));
            }
        }
    }
    delivered
}

#[test]
fn oob_delivers_once_under_loss() {
    let mut a = OobEndpoint::new(Addr::new(0, 7000), psk());
    let mut b = OobEndpoint::new(Addr::new(1, 7000), psk());
    let est = Duration::from_millis(10);
    a.send(Duration::ZERO, b.local_addr(), est, 5, &HandoverMessage::SmaqError(ErrorReason::VersionUnsupported))
        .unwrap();
    let (mut data, mut acks) = (0, 0);
    // The first two data copies and the first ack are lost.
    let got = shuttle(&mut a, &mut b, Duration::from_millis(5), Duration::from_secs(1), |d| {
        if d.info.frames.contains(crate::net::FrameKinds::ACK) {
            acks += 1;
            acks == 1
        } else {
            data += 1;
            data <= 2
        }
    });
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].1.session, 5);
    assert_eq!(got[0].1.from, Addr::new(0, 7000));
    assert_eq!(got[0].0, retransmission_timeout(est) * 2 + Duration::from_millis(5));
    assert!(!a.has_outstanding(5));
    assert!(a.retransmissions() >= 2);
}

#[test]
fn oob_rejects_wrong_key() {
    let mut a = OobEndpoint::new(Addr::new(0, 7000), psk());
    let mut b = OobEndpoint::new(Addr::new(1, 7000), Secret::new([1; 32], SecretLabel::Intermediate("psk")));
    let est = Duration::from_millis(10);
    a.send(Duration::ZERO, b.local_addr(), est, 1, &HandoverMessage::SmaqOk { facade: CLIENT }).unwrap();
    let got = shuttle(&mut a, &mut b, Duration::from_millis(5), Duration::from_millis(100), |_| false);
    assert!(got.is_empty());
    a.cancel(1);
    assert!(!a.has_outstanding(1));
}

#[test]
fn middlebox_rejects_unsupported_offer() {
    let (client, _) = established();
    let mut state = SmaqState::from_client(&client).unwrap();
    state.cipher_suite = 0x1302;
    let mut config = MiddleboxConfig::new(1, psk());
    config.audit = true;
    let mut mb = Middlebox::new(config, 3);
    let mut ep = OobEndpoint::new(Addr::new(0, 7000), psk());
    ep.send(Duration::ZERO, mb.oob_addr(), Duration::from_millis(1), 42, &HandoverMessage::StateOffer(state)).unwrap();
    let d = ep.poll_transmit(Duration::ZERO).unwrap();
    mb.handle_datagram(Duration::ZERO, d);
    assert_eq!(mb.session_count(), 0);
    assert_eq!(mb.outcomes(), &[(42, SessionOutcome::Rejected(ErrorReason::CipherUnsupported))]);
    assert!(mb.erased_states().iter().all(SmaqState::is_wiped));
    assert!(mb.held_bytes().iter().all(|b| !b.starts_with(STATE_MAGIC)));

    let mut replies = Vec::new();
    while let Some(d) = mb.poll_transmit(Duration::ZERO) {
        if let Some(m) = ep.handle_datagram(Duration::ZERO, d) {
            replies.push(m.message);
        }
    }
    assert_eq!(replies, vec![HandoverMessage::SmaqError(ErrorReason::CipherUnsupported)]);
}

#[test]
fn middlebox_restores_both_facades() {
    let (client, server) = established();
    let state = SmaqState::from_client(&client).unwrap();
    let mut mb = Middlebox::new(MiddleboxConfig::new(1, psk()), 3);
    let mut ep = OobEndpoint::new(Addr::new(0, 7000), psk());
    let now = Duration::from_millis(1);
    ep.send(now, mb.oob_addr(), Duration::from_millis(1), 42, &HandoverMessage::StateOffer(state.clone())).unwrap();
    mb.handle_datagram(now, ep.poll_transmit(now).unwrap());
    assert_eq!(mb.session_count(), 1);
    let (cf, sf) = mb.facades(42).unwrap();
    assert_eq!(cf.remote_addr(), CLIENT);
    assert_eq!(sf.remote_addr(), SERVER);
    assert_eq!(cf.local_cid().cid, server.local_cid().cid);
    assert_eq!(sf.local_cid().cid, client.local_cid().cid);
    assert!(cf.is_probing() && sf.is_probing());
    assert!(cf.next_pn(crate::transport::Space::Application) >= PN_RESTORE_GAP);
    assert_eq!(cf.application_secrets().unwrap().client.as_bytes(), state.traffic_secrets.0.as_bytes());
    let cf_addr = cf.local_addr();

    let mut out = Vec::new();
    while let Some(d) = mb.poll_transmit(now) {
        out.push(d);
    }
    let facade = match out.iter().find_map(|d| ep.handle_datagram(now, d.clone())) {
        Some(Delivered { message: HandoverMessage::SmaqOk { facade }, .. }) => facade,
        other => panic!("unexpected {other:?}"),
    };
    assert_eq!(facade, cf_addr);
    assert!(out.iter().any(|d| d.dst == CLIENT && d.src == facade));
    assert!(out.iter().any(|d| d.dst == SERVER));
}

#[test]
fn client_falls_back_without_answer() {
    let (mut client, _) = established();
    let est = Duration::from_millis(20);
    let config = ClientHandoverConfig::new(Addr::new(1, 7000), Addr::new(0, 7000), psk(), est);
    let mut h = ClientHandover::new(config, 1);
    let now = Duration::from_millis(5);
    h.on_connection_event(now, &mut client, &Event::KeysEstablished);
    assert_eq!(h.phase(), ClientPhase::Offered);
    assert!(client.holds_streams());
    assert_eq!(h.state_created_at(), Some(now));
    assert!(h.poll_transmit(now).is_some());
    assert_eq!(h.poll_timeout(), Some(now + retransmission_timeout(est)));
    h.handle_timeout(now + 3 * est, &mut client);
    assert_eq!(h.phase(), ClientPhase::FellBack(None));
    assert!(!client.holds_streams());
    assert_eq!(h.poll_timeout(), None);
}

#[test]
fn client_without_negotiation_stays_idle() {
    let now = Duration::ZERO;
    let mut client = Connection::connect(ConnectionConfig::default(), CLIENT, SERVER, 1, now);
    let config = ClientHandoverConfig::new(Addr::new(1, 7000), Addr::new(0, 7000), psk(), Duration::from_millis(1));
    let mut h = ClientHandover::new(config, 1);
    h.on_connection_event(now, &mut client, &Event::KeysEstablished);
    assert_eq!(h.phase(), ClientPhase::Idle);
}

fn arb_secret(side: Side, hp: bool) -> impl Strategy<Value = Secret> {
    any::<[u8; 32]>().prop_map(move |b| {
        let label = if hp {
            SecretLabel::HeaderProtection(side)
        } else {
            SecretLabel::ApplicationTraffic { sender: side, phase: 0 }
        };
        Secret::new(b, label)
    })
}

fn arb_params() -> impl Strategy<Value = TransportParameters> {
    proptest::collection::btree_map(0u64..64, proptest::collection::vec(any::<u8>(), 0..12), 0..6).prop_map(|m| {
        let mut p = TransportParameters::default();
        for (k, v) in m {
            p.set(k, v);
        }
        p
    })
}

fn arb_cid() -> impl Strategy<Value = ConnectionId> {
    proptest::collection::vec(any::<u8>(), 1..=20).prop_map(|b| ConnectionId::new(&b).unwrap())
}

fn arb_addr() -> impl Strategy<Value = Addr> {
    (any::<u16>(), any::<u16>()).prop_map(|(n, p)| Addr::new(n, p))
}

prop_compose! {
    fn arb_state()(
        cids in proptest::collection::vec((any::<bool>(), 0u64..1 << 62, arb_cid()), 0..4),
        tokens in proptest::collection::vec((arb_cid(), any::<[u8; 16]>()), 0..4),
        quic_version in any::<u32>(),
        cipher_suite in any::<u16>(),
        secrets in (arb_secret(Side::Client, false), arb_secret(Side::Server, false)),
        hp in (arb_secret(Side::Client, true), arb_secret(Side::Server, true)),
        addrs in (arb_addr(), arb_addr()),
        params in (arb_params(), arb_params()),
        pns in proptest::array::uniform4(proptest::option::of(0u64..1 << 61)),
    ) -> SmaqState {
        SmaqState {
            active_cids: cids
                .into_iter()
                .map(|(c, sequence, cid)| ActiveCid { owner: if c { CidOwner::Client } else { CidOwner::Server }, cid, sequence })
                .collect(),
            stateless_reset_tokens: tokens,
            quic_version,
            cipher_suite,
            key_phase: 0,
            traffic_secrets: secrets,
            header_protection_keys: hp,
            endpoint_addresses: addrs,
            transport_parameters: params,
            packet_numbers: PacketNumbers {
                client_sent: pns[0],
                client_received: pns[1],
                server_sent: pns[2],
                server_received: pns[3],
            },
        }
    }
}

proptest! {
    #[test]
    fn any_state_round_trips(state in arb_state()) {
        let bytes = state.to_bytes();
        prop_assert_eq!(SmaqState::from_bytes(&bytes).unwrap(), state);
    }

    #[test]
    fn truncated_state_never_parses(state in arb_state(), frac in 0.0f64..1.0) {
        let bytes = state.to_bytes();
        let cut = (bytes.len() as f64 * frac) as usize;
        prop_assert!(SmaqState::from_bytes(&bytes[..cut]).is_err());
    }
}
