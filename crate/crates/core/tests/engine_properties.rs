use std::fs;
use std::net::Ipv4Addr;
use std::path::PathBuf;

use proptest::collection::btree_set;
use proptest::prelude::*;
use slsp::crypto::{make_chain, sign, Authority, Digest, Signature, KeyId};
use slsp::engine::{Action, DiscardReason, Handling, Node, NodeConfig};
use slsp::sim::{ip_of, mac_of};
use slsp::time::SimTime;
use slsp::wire::{encode, signable_bytes, AttachedKey, Frame, HelloPacket, LsuPacket, Packet, PkdPacket, RawFrame};

fn node(auth: &Authority, id: usize, radius: u8) -> Node {
    let cfg = NodeConfig { radius, ..NodeConfig::default() };
    Node::new(mac_of(id), auth.enroll(ip_of(id)), auth.verifier(), cfg).unwrap()
}

fn raw(from: usize, p: Packet) -> RawFrame {
    Frame { src_mac: mac_of(from), src_ip: ip_of(from), packet: p }.to_raw().unwrap()
}

proptest! {
    /// A node that knows no keys accepts nothing, whatever the LSUs carry,
    /// and attributes every discard to the missing key.
    #[test]
    fn no_key_no_acceptance(
        radius in 1u8..5,
        links in btree_set(1usize..40, 0..8),
        count in 1usize..20,
        pos in 0u8..4,
    ) {
        let auth = Authority::new(11);
        let mut origin = node(&auth, 50, radius);
        let mut rx = node(&auth, 0, 3);
        let mut got = 0;
        for k in 0..count {
            let mut p = origin.originate_lsu(SimTime(k as u64), false).unwrap();
            p.links = links.iter().map(|&l| ip_of(l)).collect();
            p.signature = sign(&origin.identity().keys.private, &signable_bytes(&Packet::Lsu(p.clone())).unwrap());
            let hop = pos.min(radius - 1);
            for _ in 0..hop {
                p.ttl -= 1;
                p.hops_traversed = slsp::crypto::hash(&p.hops_traversed.0);
            }
            rx.handle_now(&raw(60, Packet::Lsu(p)), SimTime(k as u64));
            got += 1;
        }
        prop_assert_eq!(rx.counters().lsu_accepted, 0);
        prop_assert_eq!(rx.counters().discarded(DiscardReason::NoKey), got as u64);
        prop_assert!(rx.lsdb().confirmed_links().next().is_none());
        prop_assert!(rx.take_outbox().is_empty());
    }

    /// Changing any signed LSU field after signing makes a keyed receiver
    /// reject the packet.
    #[test]
    fn signed_field_changes_rejected(field in 0u8..5, v in any::<u32>()) {
        let auth = Authority::new(12);
        let mut origin = node(&auth, 5, 3);
        let mut rx = node(&auth, 0, 3);
        rx.install_key(origin.ip(), origin.identity().keys.public);
        rx.install_key(ip_of(6), auth.generate_keypair().public);
        let mut p = origin.originate_lsu(SimTime::ZERO, false).unwrap();
        match field {
            0 => p.seq ^= v | 1,
            1 => p.links.push(Ipv4Addr::from(v | 1)),
            2 => p.r_lsu = p.r_lsu.wrapping_add((v % 250) as u8 + 1),
            3 => p.zone_radius.0[(v % 32) as usize] ^= 1,
            _ => p.originator_ip = ip_of(6),
        }
        let h = rx.handle_now(&raw(7, Packet::Lsu(p)), SimTime::ZERO);
        prop_assert_eq!(h, Handling::Processed(Action::Discard(DiscardReason::BadSig)));
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden_packets() -> Vec<(&'static str, Packet)> {
    let auth = Authority::new(2024);
    let kp = auth.generate_keypair();
    let ip = Ipv4Addr::new(10, 0, 0, 1);
    let cert = auth.issue_certificate(ip, &kp.public);
    let chain = make_chain(Digest([0x5a; 32]), 3).unwrap();
    let blank = Signature { signer: KeyId(0), bytes: Digest::ZERO };
    let signed = |mut p: Packet| {
        let s = sign(&kp.private, &signable_bytes(&p).unwrap());
        match &mut p {
            Packet::Hello(h) => h.signature = s,
            Packet::Lsu(l) => l.signature = s,
            Packet::Pkd(k) => k.signature = s,
        }
        p
    };
    let lsu = LsuPacket {
        originator_ip: ip,
        seq: 7,
        r_lsu: 3,
        ttl: 2,
        zone_radius: chain.anchor,
        hops_traversed: chain.first_link,
        links: vec![Ipv4Addr::new(10, 0, 0, 2), Ipv4Addr::new(10, 0, 0, 3)],
        attached_key: None,
        signature: blank,
    };
    vec![
        ("hello.hex", signed(Packet::Hello(HelloPacket { mac: mac_of(0), ip, signature: blank }))),
        ("lsu.hex", signed(Packet::Lsu(lsu.clone()))),
        (
            "lsu_attached.hex",
            signed(Packet::Lsu(LsuPacket {
                attached_key: Some(AttachedKey { public_key: kp.public, certificate: cert }),
                ..lsu
            })),
        ),
        (
            "pkd.hex",
            signed(Packet::Pkd(PkdPacket {
                originator_ip: ip,
                seq: 8,
                public_key: kp.public,
                certificate: cert,
                r_pkd: 3,
                ttl: 2,
                zone_radius: chain.anchor,
                hops_traversed: chain.first_link,
                signature: blank,
            })),
        ),
    ]
}

/// Byte-exact encodings; set `SLSP_BLESS=1` to regenerate after an
/// intentional format change.
#[test]
fn golden_encodings() {
    let bless = std::env::var_os("SLSP_BLESS").is_some();
    for (name, p) in golden_packets() {
        let got = hex::encode(encode(&p).unwrap());
        if bless {
            fs::write(fixture(name), format!("{got}\n")).unwrap();
            continue;
        }
        let want = fs::read_to_string(fixture(name)).unwrap();
        assert_eq!(got, want.trim(), "{name}");
        assert_eq!(slsp::wire::decode(&hex::decode(want.trim()).unwrap()).unwrap(), p, "{name}");
    }
}

#[test]
fn golden_layout_offsets() {
    let lsu = fs::read_to_string(fixture("lsu.hex")).unwrap();
    let b = hex::decode(lsu.trim()).unwrap();
    assert_eq!(b[0], 0x02);
    assert_eq!(&b[1..5], &[10, 0, 0, 1]);
    assert_eq!(&b[5..9], &7u32.to_be_bytes());
    assert_eq!(b[9], 3);
    assert_eq!(b[10], 2);
    assert_eq!(&b[75..77], &2u16.to_be_bytes());
    assert_eq!(b[85], 0);
    assert_eq!(b.len(), 86 + 40);
}
