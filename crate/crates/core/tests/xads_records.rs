use proptest::prelude::*;
use smaq::crypto::{protect_record, unprotect_record, Secret, SecretLabel, Side, XadsRecord, MAX_RECORD_PAYLOAD};
use smaq::xads::XadsSession;

fn master() -> Secret {
    Secret::new([0x42; 32], SecretLabel::ExporterMaster)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn record_round_trip(
        payload in prop::collection::vec(any::<u8>(), 0..=MAX_RECORD_PAYLOAD),
        key in any::<[u8; 32]>(),
        sequence in any::<u64>(),
    ) {
        let secret = Secret::new(key, SecretLabel::Intermediate("prop"));
        let record = protect_record(&payload, &secret, sequence).unwrap();
        prop_assert_eq!(record.encoded_len(), payload.len() + 22);
        let bytes = record.to_bytes();
        let (parsed, used) = XadsRecord::parse(&bytes).unwrap().unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(unprotect_record(&parsed, &secret, sequence).unwrap(), payload);
    }

    #[test]
    fn session_round_trip(
        chunks in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40_000), 1..4),
        stream in 0u64..64,
    ) {
        let mut client = XadsSession::new(Side::Client, &master());
        let mut server = XadsSession::new(Side::Server, &master());
        let mut sent = Vec::new();
        let mut wire = Vec::new();
        for c in &chunks {
            sent.extend_from_slice(c);
            wire.extend(client.seal(stream, c).unwrap());
        }
        let got = server.open(stream, &wire).unwrap();
        prop_assert_eq!(got, sent);
        prop_assert_eq!(server.pending(stream), 0);
    }
}

#[test]
fn overhead_bounds() {
    let secret = master();
    let empty = protect_record(&[], &secret, 0).unwrap();
    assert_eq!(empty.encoded_len(), 22);
    let full = protect_record(&vec![7; MAX_RECORD_PAYLOAD], &secret, 0).unwrap();
    let overhead = (full.encoded_len() - MAX_RECORD_PAYLOAD) as f64 / full.encoded_len() as f64;
    assert!((overhead * 100.0 - 0.134).abs() < 0.0005, "{overhead}");
}
