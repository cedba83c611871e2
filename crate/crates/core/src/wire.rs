//! Canonical byte encoding of the three SLSP control messages.
//!
//! Layout: a one-byte type tag followed by the fields in declaration order,
//! integers big-endian. Keys encode as `key_id:u64 ‖ fingerprint:32`,
//! signatures as `signer:u64 ‖ bytes:32`, certificates as
//! `ip:4 ‖ key:40 ‖ signature:40`. The link list carries a `u16` count and the
//! optional attached key a one-byte presence flag.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use bytes::Bytes;
use thiserror::Error;

use crate::crypto::{Certificate, Digest, KeyId, PublicKey, Signature, DIGEST_LEN};

pub const TAG_HELLO: u8 = 0x01;
pub const TAG_LSU: u8 = 0x02;
pub const TAG_PKD: u8 = 0x03;

pub const PUBLIC_KEY_LEN: usize = 8 + DIGEST_LEN;
pub const SIGNATURE_LEN: usize = 8 + DIGEST_LEN;
pub const CERTIFICATE_LEN: usize = 4 + PUBLIC_KEY_LEN + SIGNATURE_LEN;

/// Byte offset of the ttl field inside an encoded LSU.
pub const LSU_TTL_OFFSET: usize = 1 + 4 + 4 + 1;
/// Byte offset of the ttl field inside an encoded PKD.
pub const PKD_TTL_OFFSET: usize = 1 + 4 + 4 + PUBLIC_KEY_LEN + CERTIFICATE_LEN + 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated packet: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown packet type tag {0:#04x}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after packet")]
    TrailingBytes(usize),
    #[error("invalid attached-key presence flag {0:#04x}")]
    BadPresenceFlag(u8),
    #[error("link list contains duplicates or the originator")]
    InvalidLinks,
    #[error("link list of {0} entries exceeds the 65535 limit")]
    TooManyLinks(usize),
    #[error("empty packet")]
    Empty,
}

/// 48-bit hardware address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddr({self})")
    }
}

impl serde::Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl FromStr for MacAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(format!("invalid MAC address `{s}`"));
        }
        let mut out = [0u8; 6];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = u8::from_str_radix(p, 16).map_err(|_| format!("invalid MAC address `{s}`"))?;
        }
        Ok(MacAddr(out))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloPacket {
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachedKey {
    pub public_key: PublicKey,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsuPacket {
    pub originator_ip: Ipv4Addr,
    pub seq: u32,
    pub r_lsu: u8,
    pub ttl: u8,
    pub zone_radius: Digest,
    pub hops_traversed: Digest,
    pub links: Vec<Ipv4Addr>,
    pub attached_key: Option<AttachedKey>,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkdPacket {
    pub originator_ip: Ipv4Addr,
    pub seq: u32,
    pub public_key: PublicKey,
    pub certificate: Certificate,
    pub r_pkd: u8,
    pub ttl: u8,
    pub zone_radius: Digest,
    pub hops_traversed: Digest,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Hello(HelloPacket),
    Lsu(LsuPacket),
    Pkd(PkdPacket),
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self {
            Packet::Hello(_) => PacketKind::Hello,
            Packet::Lsu(_) => PacketKind::Lsu,
            Packet::Pkd(_) => PacketKind::Pkd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketKind {
    Hello,
    Lsu,
    Pkd,
}

/// A frame as it travels on the medium: link and network source headers
/// plus an opaque payload that may or may not decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub src_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub payload: Bytes,
}

/// A frame whose payload decoded successfully.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub src_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub packet: Packet,
}

impl Frame {
    pub fn decode(raw: &RawFrame) -> Result<Frame, WireError> {
        Ok(Frame {
            src_mac: raw.src_mac,
            src_ip: raw.src_ip,
            packet: decode(&raw.payload)?,
        })
    }

    pub fn to_raw(&self) -> Result<RawFrame, WireError> {
        Ok(RawFrame {
            src_mac: self.src_mac,
            src_ip: self.src_ip,
            payload: Bytes::from(encode(&self.packet)?),
        })
    }
}

fn put_key(out: &mut Vec<u8>, k: &PublicKey) {
    out.extend_from_slice(&k.key_id.0.to_be_bytes());
    out.extend_from_slice(&k.fingerprint.0);
}

fn put_sig(out: &mut Vec<u8>, s: &Signature) {
    out.extend_from_slice(&s.signer.0.to_be_bytes());
    out.extend_from_slice(&s.bytes.0);
}

fn put_cert(out: &mut Vec<u8>, c: &Certificate) {
    out.extend_from_slice(&c.subject_ip.octets());
    put_key(out, &c.subject_public_key);
    put_sig(out, &c.authority_signature);
}

/// Which encoding is being produced.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Form {
    Full,
    Signable,
}

fn write_hello(out: &mut Vec<u8>, p: &HelloPacket, form: Form) {
    out.push(TAG_HELLO);
    out.extend_from_slice(&p.mac.0);
    out.extend_from_slice(&p.ip.octets());
    if form == Form::Full {
        put_sig(out, &p.signature);
    }
}

fn write_lsu(out: &mut Vec<u8>, p: &LsuPacket, form: Form) -> Result<(), WireError> {
    let count = u16::try_from(p.links.len()).map_err(|_| WireError::TooManyLinks(p.links.len()))?;
    out.push(TAG_LSU);
    out.extend_from_slice(&p.originator_ip.octets());
    out.extend_from_slice(&p.seq.to_be_bytes());
    out.push(p.r_lsu);
    match form {
        Form::Full => {
            out.push(p.ttl);
            out.extend_from_slice(&p.zone_radius.0);
            out.extend_from_slice(&p.hops_traversed.0);
        }
        Form::Signable => {
            out.push(0);
            out.extend_from_slice(&p.zone_radius.0);
            out.extend_from_slice(&[0; DIGEST_LEN]);
        }
    }
    out.extend_from_slice(&count.to_be_bytes());
    for l in &p.links {
        out.extend_from_slice(&l.octets());
    }
    match &p.attached_key {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            put_key(out, &a.public_key);
            put_cert(out, &a.certificate);
        }
    }
    if form == Form::Full {
        put_sig(out, &p.signature);
    }
    Ok(())
}

fn write_pkd(out: &mut Vec<u8>, p: &PkdPacket, form: Form) {
    out.push(TAG_PKD);
    out.extend_from_slice(&p.originator_ip.octets());
    out.extend_from_slice(&p.seq.to_be_bytes());
    put_key(out, &p.public_key);
    put_cert(out, &p.certificate);
    out.push(p.r_pkd);
    match form {
        Form::Full => {
            out.push(p.ttl);
            out.extend_from_slice(&p.zone_radius.0);
            out.extend_from_slice(&p.hops_traversed.0);
            put_sig(out, &p.signature);
        }
        Form::Signable => {
            out.push(0);
            out.extend_from_slice(&p.zone_radius.0);
            out.extend_from_slice(&[0; DIGEST_LEN]);
        }
    }
}

pub fn encode(packet: &Packet) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(128);
    match packet {
        Packet::Hello(p) => write_hello(&mut out, p, Form::Full),
        Packet::Lsu(p) => write_lsu(&mut out, p, Form::Full)?,
        Packet::Pkd(p) => write_pkd(&mut out, p, Form::Full),
    }
    Ok(out)
}

/// The exact bytes passed to sign/verify: the canonical encoding with ttl and
/// hops_traversed zeroed and the signature omitted.
pub fn signable_bytes(packet: &Packet) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(128);
    match packet {
        Packet::Hello(p) => write_hello(&mut out, p, Form::Signable),
        Packet::Lsu(p) => write_lsu(&mut out, p, Form::Signable)?,
        Packet::Pkd(p) => write_pkd(&mut out, p, Form::Signable),
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(WireError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_be_bytes(a))
    }

    fn ip(&mut self) -> Result<Ipv4Addr, WireError> {
        Ok(Ipv4Addr::from(self.u32()?))
    }

    fn digest(&mut self) -> Result<Digest, WireError> {
        let mut a = [0u8; DIGEST_LEN];
        a.copy_from_slice(self.take(DIGEST_LEN)?);
        Ok(Digest(a))
    }

    fn key(&mut self) -> Result<PublicKey, WireError> {
        Ok(PublicKey {
            key_id: KeyId(self.u64()?),
            fingerprint: self.digest()?,
        })
    }

    fn sig(&mut self) -> Result<Signature, WireError> {
        Ok(Signature {
            signer: KeyId(self.u64()?),
            bytes: self.digest()?,
        })
    }

    fn cert(&mut self) -> Result<Certificate, WireError> {
        Ok(Certificate {
            subject_ip: self.ip()?,
            subject_public_key: self.key()?,
            authority_signature: self.sig()?,
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Packet, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let tag = r.u8().map_err(|_| WireError::Empty)?;
    let packet = match tag {
        TAG_HELLO => {
            let mut mac = [0u8; 6];
            mac.copy_from_slice(r.take(6)?);
            Packet::Hello(HelloPacket {
                mac: MacAddr(mac),
                ip: r.ip()?,
                signature: r.sig()?,
            })
        }
        TAG_LSU => {
            let originator_ip = r.ip()?;
            let seq = r.u32()?;
            let r_lsu = r.u8()?;
            let ttl = r.u8()?;
            let zone_radius = r.digest()?;
            let hops_traversed = r.digest()?;
            let count = r.u16()? as usize;
            let mut links = Vec::with_capacity(count);
            for _ in 0..count {
                links.push(r.ip()?);
            }
            let attached_key = match r.u8()? {
                0 => None,
                1 => Some(AttachedKey {
                    public_key: r.key()?,
                    certificate: r.cert()?,
                }),
                other => return Err(WireError::BadPresenceFlag(other)),
            };
            let signature = r.sig()?;
            let distinct: BTreeSet<_> = links.iter().collect();
            if distinct.len() != links.len() || distinct.contains(&originator_ip) {
                return Err(WireError::InvalidLinks);
            }
            Packet::Lsu(LsuPacket {
                originator_ip,
                seq,
                r_lsu,
                ttl,
                zone_radius,
                hops_traversed,
                links,
                attached_key,
                signature,
            })
        }
        TAG_PKD => Packet::Pkd(PkdPacket {
            originator_ip: r.ip()?,
            seq: r.u32()?,
            public_key: r.key()?,
            certificate: r.cert()?,
            r_pkd: r.u8()?,
            ttl: r.u8()?,
            zone_radius: r.digest()?,
            hops_traversed: r.digest()?,
            signature: r.sig()?,
        }),
        other => return Err(WireError::UnknownTag(other)),
    };
    if r.pos != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(packet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, make_chain, sign, Authority};

    fn lsu(links: Vec<Ipv4Addr>) -> LsuPacket {
        let auth = Authority::new(1);
        let k = auth.generate_keypair();
        let chain = make_chain(hash(b"s"), 3).unwrap();
        let mut p = LsuPacket {
            originator_ip: Ipv4Addr::new(10, 0, 0, 1),
            seq: 9,
            r_lsu: 3,
            ttl: 2,
            zone_radius: chain.anchor,
            hops_traversed: chain.first_link,
            links,
            attached_key: None,
            signature: Signature {
                signer: KeyId(0),
                bytes: Digest::ZERO,
            },
        };
        p.signature = sign(
            &k.private,
            &signable_bytes(&Packet::Lsu(p.clone())).unwrap(),
        );
        p
    }

    #[test]
    fn empty_links_encode_zero_count() {
        let p = lsu(vec![]);
        let bytes = encode(&Packet::Lsu(p.clone())).unwrap();
        let count_at = LSU_TTL_OFFSET + 1 + 2 * DIGEST_LEN;
        assert_eq!(&bytes[count_at..count_at + 2], &[0, 0]);
        assert_eq!(bytes[count_at + 2], 0, "presence flag follows directly");
        assert_eq!(bytes.len(), count_at + 3 + SIGNATURE_LEN);
        assert_eq!(decode(&bytes).unwrap(), Packet::Lsu(p));
    }

    #[test]
    fn ttl_change_touches_only_ttl_byte() {
        let a = lsu(vec![Ipv4Addr::new(10, 0, 0, 2)]);
        let mut b = a.clone();
        b.ttl = 1;
        let ea = encode(&Packet::Lsu(a)).unwrap();
        let eb = encode(&Packet::Lsu(b)).unwrap();
        let diff: Vec<usize> = (0..ea.len()).filter(|&i| ea[i] != eb[i]).collect();
        assert_eq!(diff, vec![LSU_TTL_OFFSET]);
    }

    #[test]
    fn signable_bytes_stable_under_relay_mutation() {
        let a = lsu(vec![Ipv4Addr::new(10, 0, 0, 2)]);
        let mut relayed = a.clone();
        relayed.ttl -= 1;
        relayed.hops_traversed = hash(&relayed.hops_traversed.0);
        assert_eq!(
            signable_bytes(&Packet::Lsu(a.clone())).unwrap(),
            signable_bytes(&Packet::Lsu(relayed)).unwrap()
        );
        let mut more = a.clone();
        more.links.push(Ipv4Addr::new(10, 0, 0, 3));
        assert_ne!(
            signable_bytes(&Packet::Lsu(a)).unwrap(),
            signable_bytes(&Packet::Lsu(more)).unwrap()
        );
    }

    #[test]
    fn hello_signable_is_tag_mac_ip() {
        let h = HelloPacket {
            mac: MacAddr([1, 2, 3, 4, 5, 6]),
            ip: Ipv4Addr::new(10, 0, 0, 7),
            signature: Signature {
                signer: KeyId(5),
                bytes: Digest::ZERO,
            },
        };
        assert_eq!(
            signable_bytes(&Packet::Hello(h)).unwrap(),
            vec![0x01, 1, 2, 3, 4, 5, 6, 10, 0, 0, 7]
        );
    }

    #[test]
    fn decode_errors_are_distinct() {
        let bytes = encode(&Packet::Lsu(lsu(vec![]))).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(WireError::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode(&extra), Err(WireError::TrailingBytes(1)));
        assert_eq!(decode(&[0x7f]), Err(WireError::UnknownTag(0x7f)));
        assert_eq!(decode(&[]), Err(WireError::Empty));
        let count_at = LSU_TTL_OFFSET + 1 + 2 * DIGEST_LEN;
        let mut flag = bytes.clone();
        flag[count_at + 2] = 2;
        assert_eq!(decode(&flag), Err(WireError::BadPresenceFlag(2)));
    }

    #[test]
    fn duplicate_or_self_links_rejected() {
        let me = Ipv4Addr::new(10, 0, 0, 1);
        let bytes = encode(&Packet::Lsu(lsu(vec![me]))).unwrap();
        assert_eq!(decode(&bytes), Err(WireError::InvalidLinks));
        let other = Ipv4Addr::new(10, 0, 0, 9);
        let bytes = encode(&Packet::Lsu(lsu(vec![other, other]))).unwrap();
        assert_eq!(decode(&bytes), Err(WireError::InvalidLinks));
    }

    #[test]
    fn oversize_link_list_rejected() {
        let links = (0..65_536u32).map(|i| Ipv4Addr::from((i + 1) << 8)).collect();
        let p = lsu(vec![]);
        let big = LsuPacket { links, ..p };
        assert_eq!(
            encode(&Packet::Lsu(big)),
            Err(WireError::TooManyLinks(65_536))
        );
    }

    #[test]
    fn mac_parse_roundtrip() {
        let m: MacAddr = "02:00:00:00:01:ff".parse().unwrap();
        assert_eq!(m, MacAddr([2, 0, 0, 0, 1, 0xff]));
        assert_eq!(m.to_string(), "02:00:00:00:01:ff");
        assert!("02:00".parse::<MacAddr>().is_err());
    }
}
