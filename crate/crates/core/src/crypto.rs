//! Hashing, hash chains and the simulation signature scheme.
//!
//! Signatures use an ideal (oracle) scheme: a private key is a secret derived
//! from a master secret held by the [`Authority`], and verification is done by
//! a [`Verifier`] handle that can re-derive any key's secret but never hands it
//! out. A participant can therefore only produce signatures for key pairs it
//! was issued. Everything that consumes signatures goes through the
//! [`SignatureVerifier`] trait so a real cryptosystem can be dropped in.

use std::fmt;
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("hash chain radius must be at least 1")]
    ZeroRadius,
}

/// Output of the one-way function.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest(")?;
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// SHA-256.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Applies the hash `times` times to `start`.
pub fn hash_iter(start: &Digest, times: u32) -> Digest {
    let mut cur = *start;
    for _ in 0..times {
        cur = hash(&cur.0);
    }
    cur
}

/// Hop-count authentication chain `X_i = H^i(seed)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashChain {
    pub seed: Digest,
    pub radius: u8,
    /// `H^radius(seed)`, carried in the zone_radius field.
    pub anchor: Digest,
    /// `H(seed)`, carried in hops_traversed at origination.
    pub first_link: Digest,
}

pub fn make_chain(seed: Digest, radius: u8) -> Result<HashChain, CryptoError> {
    if radius == 0 {
        return Err(CryptoError::ZeroRadius);
    }
    let first_link = hash(&seed.0);
    let anchor = hash_iter(&first_link, u32::from(radius) - 1);
    Ok(HashChain {
        seed,
        radius,
        anchor,
        first_link,
    })
}

/// True iff `H^remaining(hops_traversed) == anchor`.
pub fn verify_chain_link(anchor: &Digest, hops_traversed: &Digest, remaining: u32) -> bool {
    hash_iter(hops_traversed, remaining) == *anchor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyId(pub u64);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

/// Public half of a key pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey {
    pub key_id: KeyId,
    pub fingerprint: Digest,
}

/// Private half. Deliberately not `Debug`-printable.
#[derive(Clone)]
pub struct PrivateKey {
    key_id: KeyId,
    secret: Digest,
}

impl PrivateKey {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrivateKey")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer: KeyId,
    pub bytes: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Certificate {
    pub subject_ip: Ipv4Addr,
    pub subject_public_key: PublicKey,
    pub authority_signature: Signature,
}

impl Certificate {
    /// Bytes covered by the authority signature.
    pub fn signed_bytes(subject_ip: Ipv4Addr, key: &PublicKey) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 + DIGEST_LEN + 4);
        out.extend_from_slice(b"cert");
        out.extend_from_slice(&subject_ip.octets());
        out.extend_from_slice(&key.key_id.0.to_be_bytes());
        out.extend_from_slice(&key.fingerprint.0);
        out
    }
}

fn mac_over(secret: &Digest, message: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(secret.0);
    h.update(message);
    Digest(h.finalize().into())
}

fn fingerprint_of(secret: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update(b"public");
    h.update(secret.0);
    Digest(h.finalize().into())
}

pub fn sign(key: &PrivateKey, message: &[u8]) -> Signature {
    Signature {
        signer: key.key_id,
        bytes: mac_over(&key.secret, message),
    }
}

/// Anything able to check signatures and certificates.
pub trait SignatureVerifier {
    fn verify(&self, key: &PublicKey, message: &[u8], sig: &Signature) -> bool;
    fn verify_certificate(&self, cert: &Certificate) -> bool;
}

struct AuthorityInner {
    master: Digest,
    next_id: AtomicU64,
    own: KeyPair,
}

impl AuthorityInner {
    fn secret_for(&self, id: KeyId) -> Digest {
        let mut buf = Vec::with_capacity(DIGEST_LEN + 8);
        buf.extend_from_slice(&self.master.0);
        buf.extend_from_slice(&id.0.to_be_bytes());
        hash(&buf)
    }

    fn new_pair(&self) -> KeyPair {
        let id = KeyId(self.next_id.fetch_add(1, Ordering::Relaxed));
        let secret = self.secret_for(id);
        KeyPair {
            public: PublicKey {
                key_id: id,
                fingerprint: fingerprint_of(&secret),
            },
            private: PrivateKey { key_id: id, secret },
        }
    }

    fn verify(&self, key: &PublicKey, message: &[u8], sig: &Signature) -> bool {
        if sig.signer != key.key_id {
            return false;
        }
        let secret = self.secret_for(key.key_id);
        fingerprint_of(&secret) == key.fingerprint && mac_over(&secret, message) == sig.bytes
    }
}

/// The simulation-global certification authority.
///
/// Key ids are allocated monotonically, so a larger id always denotes a
/// more recently issued key.
#[derive(Clone)]
pub struct Authority {
    inner: Arc<AuthorityInner>,
}

impl Authority {
    pub fn new(seed: u64) -> Self {
        let mut buf = b"slsp-authority".to_vec();
        buf.extend_from_slice(&seed.to_be_bytes());
        let master = hash(&buf);
        let mut own_buf = master.0.to_vec();
        own_buf.extend_from_slice(&0u64.to_be_bytes());
        let secret = hash(&own_buf);
        let own = KeyPair {
            public: PublicKey {
                key_id: KeyId(0),
                fingerprint: fingerprint_of(&secret),
            },
            private: PrivateKey {
                key_id: KeyId(0),
                secret,
            },
        };
        Authority {
            inner: Arc::new(AuthorityInner {
                master,
                next_id: AtomicU64::new(1),
                own,
            }),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.inner.own.public
    }

    /// A fresh key pair, not bound to any address.
    pub fn generate_keypair(&self) -> KeyPair {
        self.inner.new_pair()
    }

    pub fn issue_certificate(&self, ip: Ipv4Addr, key: &PublicKey) -> Certificate {
        Certificate {
            subject_ip: ip,
            subject_public_key: *key,
            authority_signature: sign(
                &self.inner.own.private,
                &Certificate::signed_bytes(ip, key),
            ),
        }
    }

    /// Capability to obtain certified keys for `ip` only.
    pub fn enroll(&self, ip: Ipv4Addr) -> Enrollment {
        Enrollment {
            ip,
            authority: self.clone(),
        }
    }

    pub fn verifier(&self) -> Verifier {
        Verifier {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl fmt::Debug for Authority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Authority")
            .field("key", &self.inner.own.public.key_id)
            .finish_non_exhaustive()
    }
}

/// Lets a node re-key itself without being able to certify other addresses.
#[derive(Clone, Debug)]
pub struct Enrollment {
    ip: Ipv4Addr,
    authority: Authority,
}

impl Enrollment {
    pub fn ip(&self) -> Ipv4Addr {
        self.ip
    }

    pub fn issue(&self) -> (KeyPair, Certificate) {
        let keys = self.authority.generate_keypair();
        let cert = self.authority.issue_certificate(self.ip, &keys.public);
        (keys, cert)
    }
}

/// Verification-only handle on the authority.
#[derive(Clone)]
pub struct Verifier {
    inner: Arc<AuthorityInner>,
}

impl fmt::Debug for Verifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Verifier")
    }
}

impl SignatureVerifier for Verifier {
    fn verify(&self, key: &PublicKey, message: &[u8], sig: &Signature) -> bool {
        self.inner.verify(key, message, sig)
    }

    fn verify_certificate(&self, cert: &Certificate) -> bool {
        self.inner.verify(
            &self.inner.own.public,
            &Certificate::signed_bytes(cert.subject_ip, &cert.subject_public_key),
            &cert.authority_signature,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn empty_string_vector() {
        // FIPS 180-2 SHA-256("")
        assert_eq!(
            hash(b"").to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash(b"abc").to_string(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_is_deterministic_and_collision_free_on_corpus() {
        assert_eq!(hash(b"x"), hash(b"x"));
        let mut seen = HashSet::new();
        for i in 0u32..10_000 {
            assert!(seen.insert(hash(&i.to_le_bytes())), "collision at {i}");
        }
    }

    #[test]
    fn zero_radius_rejected() {
        assert_eq!(make_chain(Digest::ZERO, 0), Err(CryptoError::ZeroRadius));
    }

    #[test]
    fn radius_one_anchor_is_first_link() {
        let c = make_chain(hash(b"seed"), 1).unwrap();
        assert_eq!(c.anchor, c.first_link);
    }

    #[test]
    fn radius_three_matches_triple_application() {
        let s = hash(b"seed");
        let c = make_chain(s, 3).unwrap();
        assert_eq!(c.anchor, hash(&hash(&hash(&s.0).0).0));
        assert!(verify_chain_link(&c.anchor, &c.first_link, 2));
        assert!(!verify_chain_link(&c.anchor, &c.first_link, 1));
        assert!(verify_chain_link(&c.anchor, &c.anchor, 0));
    }

    #[test]
    fn signatures_bind_key_and_message() {
        let auth = Authority::new(7);
        let v = auth.verifier();
        let a = auth.generate_keypair();
        let b = auth.generate_keypair();
        let m = b"hello".to_vec();
        let s = sign(&a.private, &m);
        assert!(v.verify(&a.public, &m, &s));
        assert!(!v.verify(&b.public, &m, &s));
        let mut m2 = m.clone();
        m2[0] ^= 1;
        assert!(!v.verify(&a.public, &m2, &s));
        let mut s2 = s;
        s2.bytes.0[31] ^= 0x80;
        assert!(!v.verify(&a.public, &m, &s2));
        assert_eq!(sign(&a.private, &m), s);
    }

    #[test]
    fn public_key_with_wrong_fingerprint_fails() {
        let auth = Authority::new(1);
        let a = auth.generate_keypair();
        let mut pk = a.public;
        pk.fingerprint.0[0] ^= 1;
        let s = sign(&a.private, b"m");
        assert!(!auth.verifier().verify(&pk, b"m", &s));
    }

    #[test]
    fn certificates() {
        let auth = Authority::new(3);
        let other = Authority::new(4);
        let ip = Ipv4Addr::new(10, 0, 0, 1);
        let (keys, cert) = auth.enroll(ip).issue();
        assert_eq!(cert.subject_public_key, keys.public);
        assert!(auth.verifier().verify_certificate(&cert));
        assert!(!other.verifier().verify_certificate(&cert));
        let mut forged = cert;
        forged.subject_ip = Ipv4Addr::new(10, 0, 0, 2);
        assert!(!auth.verifier().verify_certificate(&forged));
        let (k2, _) = auth.enroll(ip).issue();
        assert!(k2.public.key_id > keys.public.key_id);
    }
}
