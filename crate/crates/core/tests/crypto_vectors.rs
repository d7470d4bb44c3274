//! Key-derivation vectors.
//!
//! `oracle` is a from-scratch HMAC/HKDF over raw SHA-256 that shares no code
//! with the crate. It checks RFC 5869, produces `data/golden_vectors.txt`
//! (regenerate with `cargo test -p smaq --test crypto_vectors -- --ignored`),
//! and the crate is then checked against both.

use smaq::crypto::{
    derive_stream_secret, derive_xads_master, hkdf_expand_label, hkdf_extract, key_update,
    Secret, SecretLabel, Side,
};

mod oracle {
    use sha2::{Digest, Sha256};

    pub fn hmac(key: &[u8], msg: &[u8]) -> [u8; 32] {
        let mut k = [0u8; 64];
        if key.len() > 64 {
            k[..32].copy_from_slice(&Sha256::digest(key));
        } else {
            k[..key.len()].copy_from_slice(key);
        }
        let mut inner = Sha256::new();
        inner.update(k.map(|b| b ^ 0x36));
        inner.update(msg);
        let ih = inner.finalize();
        let mut outer = Sha256::new();
        outer.update(k.map(|b| b ^ 0x5c));
        outer.update(ih);
        outer.finalize().into()
    }

    pub fn extract(salt: &[u8], ikm: &[u8]) -> [u8; 32] {
        let salt = if salt.is_empty() { &[0u8; 32][..] } else { salt };
        hmac(salt, ikm)
    }

    pub fn expand(prk: &[u8], info: &[u8], len: usize) -> Vec<u8> {
        let mut out = Vec::new();
        let mut t: Vec<u8> = Vec::new();
        let mut counter = 1u8;
        while out.len() < len {
            let mut msg = t.clone();
            msg.extend_from_slice(info);
            msg.push(counter);
            t = hmac(prk, &msg).to_vec();
            out.extend_from_slice(&t);
            counter += 1;
        }
        out.truncate(len);
        out
    }

    pub fn expand_label(secret: &[u8], label: &[u8], context: &[u8], len: usize) -> Vec<u8> {
        let mut full = b"tls13 ".to_vec();
        full.extend_from_slice(label);
        let mut info = vec![(len >> 8) as u8, len as u8, full.len() as u8];
        info.extend_from_slice(&full);
        info.push(context.len() as u8);
        info.extend_from_slice(context);
        expand(secret, &info, len)
    }

    pub fn xads_master(exporter: &[u8]) -> Vec<u8> {
        let empty: [u8; 32] = Sha256::digest([]).into();
        let tmp = expand_label(exporter, b"EXPORTER-smaq-xads-master", &empty, 32);
        expand_label(&tmp, b"exporter", &empty, 32)
    }

    pub fn stream(master: &[u8], sender: &str, id: u64) -> Vec<u8> {
        expand_label(master, format!("xse {sender} {id}").as_bytes(), b"", 32)
    }

    pub fn update(secret: &[u8]) -> Vec<u8> {
        expand_label(secret, b"xse upd", b"", 32)
    }
}

fn unhex(s: &str) -> Vec<u8> {
    hex::decode(s).unwrap()
}

struct Rfc5869 {
    ikm: Vec<u8>,
    salt: Vec<u8>,
    info: Vec<u8>,
    len: usize,
    prk: &'static str,
    okm: &'static str,
}

fn rfc5869_cases() -> Vec<Rfc5869> {
    vec![
        Rfc5869 {
            ikm: vec![0x0b; 22],
            salt: (0x00..=0x0c).collect(),
            info: (0xf0..=0xf9).collect(),
            len: 42,
            prk: "077709362c2e32df0ddc3f0dc47bba6390b6c73bb50f9c3122ec844ad7c2b3e5",
            okm: "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865",
        },
        Rfc5869 {
            ikm: (0x00..=0x4f).collect(),
            salt: (0x60..=0xaf).collect(),
            info: (0xb0..=0xff).collect(),
            len: 82,
            prk: "06a6b88c5853361a06104c9ceb35b45cef760014904671014a193f40c15fc244",
            okm: "b11e398dc80327a1c8e7f78c596a49344f012eda2d4efad8a050cc4c19afa97c59045a99cac7827271cb41c65e590e09da3275600c2f09b8367793a9aca3db71cc30c58179ec3e87c14c01d5c1f3434f1d87",
        },
        Rfc5869 {
            ikm: vec![0x0b; 22],
            salt: vec![],
            info: vec![],
            len: 42,
            prk: "19ef24a32c717b167f33a91d6f648bdf96596776afdb6377ac434c1c293ccb04",
            okm: "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8",
        },
    ]
}

#[test]
fn oracle_matches_rfc5869() {
    for case in rfc5869_cases() {
        let prk = oracle::extract(&case.salt, &case.ikm);
        assert_eq!(prk.to_vec(), unhex(case.prk));
        assert_eq!(oracle::expand(&prk, &case.info, case.len), unhex(case.okm));
    }
}

#[test]
fn crate_hkdf_matches_rfc5869() {
    for case in rfc5869_cases() {
        let salt = if case.salt.is_empty() { vec![0u8; 32] } else { case.salt.clone() };
        let prk = hkdf_extract(&salt, &case.ikm);
        assert_eq!(prk.to_vec(), unhex(case.prk));
        let mut okm = vec![0u8; case.len];
        smaq::crypto::hkdf::hkdf_expand(&prk, &case.info, &mut okm).unwrap();
        assert_eq!(okm, unhex(case.okm));
    }
}

#[test]
fn expand_label_matches_oracle() {
    let secrets: [&[u8]; 3] = [&[0u8; 32], &[0xffu8; 32], &(0u8..32).collect::<Vec<u8>>()];
    for secret in secrets {
        for (label, context, len) in [
            (&b"key"[..], &b""[..], 16usize),
            (b"iv", b"", 12),
            (b"xse client 0", b"", 32),
            (b"derived", &[7u8; 32][..], 32),
            (b"long output", b"ctx", 100),
        ] {
            let mut out = vec![0u8; len];
            hkdf_expand_label(secret, label, context, &mut out).unwrap();
            assert_eq!(out, oracle::expand_label(secret, label, context, len));
        }
    }
}

/// One line of the golden file: `<operation> <key>=<value>... => <hex>`.
struct Vector {
    op: String,
    args: Vec<(String, String)>,
    output: String,
}

fn arg<'a>(v: &'a Vector, key: &str) -> &'a str {
    &v.args.iter().find(|(k, _)| k == key).unwrap().1
}

fn load_vectors() -> Vec<Vector> {
    let text = include_str!("data/golden_vectors.txt");
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let (lhs, output) = line.split_once(" => ").expect("=> separator");
            let mut parts = lhs.split_whitespace();
            let op = parts.next().unwrap().to_string();
            let args = parts
                .map(|p| {
                    let (k, v) = p.split_once('=').unwrap();
                    (k.to_string(), v.to_string())
                })
                .collect();
            Vector {
                op,
                args,
                output: output.to_string(),
            }
        })
        .collect()
}

fn side(s: &str) -> Side {
    match s {
        "client" => Side::Client,
        "server" => Side::Server,
        other => panic!("bad sender {other}"),
    }
}

fn generate_golden() -> String {
    let mut out = String::from(
        "# Golden key-derivation vectors, computed with the test oracle.\n\
         # Format: <operation> <key>=<value>... => <output hex>\n\
         #   hkdf_expand_label secret=<hex> label=<ascii> context=<hex> length=<n>\n\
         #   derive_xads_master exporter=<hex>\n\
         #   derive_stream_secret master=<hex> sender=<client|server> stream=<id>\n\
         #   key_update secret=<hex> sender=<..> stream=<id> phase=<phase of input>\n",
    );
    let pairs = [("client_xse_0", "client"), ("server_xse_0", "server")];
    for (label, _) in pairs {
        let o = oracle::expand_label(&[0x11; 32], label.as_bytes(), b"", 32);
        out += &format!(
            "hkdf_expand_label secret={} label={label} context= length=32 => {}\n",
            hex::encode([0x11; 32]),
            hex::encode(o)
        );
    }
    for exporter in [[0u8; 32], [0x5a; 32]] {
        let master = oracle::xads_master(&exporter);
        out += &format!(
            "derive_xads_master exporter={} => {}\n",
            hex::encode(exporter),
            hex::encode(&master)
        );
        for (sender, id) in [("client", 0u64), ("server", 0), ("client", 4), ("server", 3)] {
            let s0 = oracle::stream(&master, sender, id);
            out += &format!(
                "derive_stream_secret master={} sender={sender} stream={id} => {}\n",
                hex::encode(&master),
                hex::encode(&s0)
            );
            if exporter == [0u8; 32] && id == 0 {
                let mut cur = s0;
                for phase in 0..2 {
                    let next = oracle::update(&cur);
                    out += &format!(
                        "key_update secret={} sender={sender} stream={id} phase={phase} => {}\n",
                        hex::encode(&cur),
                        hex::encode(&next)
                    );
                    cur = next;
                }
            }
        }
    }
    out
}

#[test]
#[ignore = "rewrites tests/data/golden_vectors.txt"]
fn regenerate_golden_vectors() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_vectors.txt");
    std::fs::write(path, generate_golden()).unwrap();
}

#[test]
fn golden_file_is_oracle_output() {
    assert_eq!(include_str!("data/golden_vectors.txt"), generate_golden());
}

#[test]
fn crate_matches_golden_vectors() {
    let vectors = load_vectors();
    assert!(vectors.len() >= 15);
    for v in &vectors {
        let got = match v.op.as_str() {
            "hkdf_expand_label" => {
                let len: usize = arg(v, "length").parse().unwrap();
                let mut out = vec![0u8; len];
                hkdf_expand_label(
                    &unhex(arg(v, "secret")),
                    arg(v, "label").as_bytes(),
                    &unhex(arg(v, "context")),
                    &mut out,
                )
                .unwrap();
                out
            }
            "derive_xads_master" => {
                let e = Secret::from_slice(&unhex(arg(v, "exporter")), SecretLabel::ExporterMaster)
                    .unwrap();
                derive_xads_master(&e).as_bytes().to_vec()
            }
            "derive_stream_secret" => {
                let m = Secret::from_slice(&unhex(arg(v, "master")), SecretLabel::XadsMaster)
                    .unwrap();
                derive_stream_secret(&m, side(arg(v, "sender")), arg(v, "stream").parse().unwrap())
                    .unwrap()
                    .as_bytes()
                    .to_vec()
            }
            "key_update" => {
                let label = SecretLabel::XadsStream {
                    sender: side(arg(v, "sender")),
                    stream_id: arg(v, "stream").parse().unwrap(),
                    phase: arg(v, "phase").parse().unwrap(),
                };
                let s = Secret::from_slice(&unhex(arg(v, "secret")), label).unwrap();
                let next = key_update(&s).unwrap();
                match next.label() {
                    SecretLabel::XadsStream { phase, .. } => {
                        assert_eq!(phase, arg(v, "phase").parse::<u64>().unwrap() + 1)
                    }
                    other => panic!("unexpected label {other}"),
                }
                next.as_bytes().to_vec()
            }
            other => panic!("unknown operation {other}"),
        };
        assert_eq!(hex::encode(got), v.output, "{} {:?}", v.op, v.args);
    }
}

#[test]
fn client_and_server_lane_labels_differ() {
    let vectors = load_vectors();
    let outs: Vec<_> = vectors
        .iter()
        .filter(|v| v.op == "hkdf_expand_label")
        .map(|v| v.output.clone())
        .collect();
    assert_eq!(outs.len(), 2);
    assert_ne!(outs[0], outs[1]);
}
