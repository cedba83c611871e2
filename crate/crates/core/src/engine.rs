//! The SLSP node: hello/LSU/PKD origination and validation, the hash-chain
//! relay gate, key store maintenance, sequence space and re-keying.
//!
//! A node is a single-threaded state machine with two entry points:
//! [`Node::deliver_frame`] (a frame was overheard) and [`Node::timer_tick`]
//! (time advanced to the next service tick). Frames to transmit are returned
//! from `timer_tick`; the caller owns the medium.
//!
//! Inbound frames go through decode and NLP screening on delivery, then wait
//! in the anti-clogging scheduler. Each tick serves one scheduler round and
//! runs the remaining pipeline on the served frames:
//! key lookup → signature → duplicate check → hash-chain gate → ingest → relay.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    hash, make_chain, sign, verify_chain_link, Certificate, Digest, Enrollment, KeyId, KeyPair,
    PublicKey, SignatureVerifier, Verifier,
};
use crate::keystore::{Insert, KeyStore};
use crate::lsdb::LinkStateDatabase;
use crate::nlp::{verify_hello, NeighborTable, NlpConfig, NlpNotification, NotificationKind};
use crate::sched::{Enqueue, SchedConfig, SchedConfigError, Scheduler};
use crate::time::{SimDuration, SimTime};
use crate::wire::{
    encode, signable_bytes, AttachedKey, Frame, HelloPacket, LsuPacket, MacAddr, Packet,
    PkdPacket, RawFrame, WireError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PkdMode {
    StandalonePkd,
    LsuAttached,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("radius must be at least 1")]
    ZeroRadius,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("lost_neighbor ({lost:?}) must exceed {other} ({value:?})")]
    LostNeighborTooShort {
        lost: SimDuration,
        other: &'static str,
        value: SimDuration,
    },
    #[error("extended_pkd_radius {extended} is smaller than radius {radius}")]
    ExtendedRadius { extended: u8, radius: u8 },
    #[error("key_change_threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Sched(#[from] SchedConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub radius: u8,
    pub lsu_period: SimDuration,
    pub hello_period: SimDuration,
    /// Lifetime of a one-sided link report.
    pub confirm_ls: SimDuration,
    /// Age after which an originator's whole report set is flushed.
    pub lsu_flush: SimDuration,
    pub lost_neighbor: SimDuration,
    pub pkd_mode: PkdMode,
    pub extended_pkd_radius: Option<u8>,
    pub rng_seed: u64,
    pub rate_half_life: SimDuration,
    pub keystore_capacity: usize,
    /// Fraction of changed neighbors that triggers a key re-broadcast.
    pub key_change_threshold: f64,
    pub max_key_interval: SimDuration,
    /// Service tick: one scheduler round per tick.
    pub tick: SimDuration,
    pub dup_cache_age: SimDuration,
    pub sched: SchedConfig,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig::with_lsu_period(SimDuration::from_secs(5))
    }
}

impl NodeConfig {
    /// Defaults with every timer derived from `lsu_period`.
    pub fn with_lsu_period(p: SimDuration) -> Self {
        NodeConfig {
            radius: 2,
            lsu_period: p,
            hello_period: SimDuration::from_secs(1),
            confirm_ls: p.mul(2),
            lsu_flush: p.mul(3),
            lost_neighbor: p.mul(4),
            pkd_mode: PkdMode::StandalonePkd,
            extended_pkd_radius: None,
            rng_seed: 0,
            rate_half_life: SimDuration::from_secs(5),
            keystore_capacity: 1024,
            key_change_threshold: 0.30,
            max_key_interval: p.mul(10),
            tick: SimDuration::from_millis(100),
            dup_cache_age: p.mul(4),
            sched: SchedConfig {
                starvation_timeout: p.mul(4),
                ..SchedConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.radius == 0 {
            return Err(ConfigError::ZeroRadius);
        }
        for (name, d) in [
            ("lsu_period", self.lsu_period),
            ("hello_period", self.hello_period),
            ("confirm_ls", self.confirm_ls),
            ("lsu_flush", self.lsu_flush),
            ("rate_half_life", self.rate_half_life),
            ("tick", self.tick),
        ] {
            if d == SimDuration::ZERO {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.keystore_capacity == 0 {
            return Err(ConfigError::NonPositive("keystore_capacity"));
        }
        for (other, value) in [("confirm_ls", self.confirm_ls), ("lsu_flush", self.lsu_flush)] {
            if self.lost_neighbor <= value {
                return Err(ConfigError::LostNeighborTooShort {
                    lost: self.lost_neighbor,
                    other,
                    value,
                });
            }
        }
        if let Some(ext) = self.extended_pkd_radius {
            if ext < self.radius {
                return Err(ConfigError::ExtendedRadius {
                    extended: ext,
                    radius: self.radius,
                });
            }
        }
        if !(self.key_change_threshold > 0.0 && self.key_change_threshold <= 1.0) {
            return Err(ConfigError::Threshold(self.key_change_threshold));
        }
        self.sched.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NodeIdentity {
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub keys: KeyPair,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Malformed,
    Nlp,
    Own,
    HelloMismatch,
    NoKey,
    BadCert,
    BadSig,
    StaleKey,
    Duplicate,
    BadChain,
    QueueFull,
    Starved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    AcceptRelay,
    AcceptOnly,
    Discard(DiscardReason),
}

/// What happened to a delivered frame before scheduling.
#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Queued,
    Malformed(WireError),
    Notified(NlpNotification),
}

/// Full synchronous handling of one frame, bypassing the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub enum Handling {
    Malformed(WireError),
    Notified(NlpNotification),
    Processed(Action),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    LsuOriginated {
        seq: u32,
    },
    PkdOriginated {
        seq: u32,
    },
    LsuAccepted {
        originator: Ipv4Addr,
        seq: u32,
        hops: u8,
        key: KeyId,
    },
    PkdAccepted {
        originator: Ipv4Addr,
        seq: u32,
        hops: u8,
        stored: bool,
    },
    Notification(NlpNotification),
    RekeyStarted,
    RekeyCompleted {
        key: KeyId,
    },
}

/// Inputs to the key-validation policy.
#[derive(Debug, Clone, Copy)]
pub struct ValidationQuery {
    pub originator: Ipv4Addr,
    /// Hops already traversed by the carrying packet.
    pub hops: u8,
    pub radius: u8,
    /// Distance to the originator over confirmed links, if reachable.
    pub confirmed_distance: Option<u32>,
}

/// Whether to spend effort validating a key broadcast at all.
pub trait ValidationPolicy: Send + Sync + std::fmt::Debug {
    fn should_validate(&self, q: &ValidationQuery) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateAll;

impl ValidationPolicy for ValidateAll {
    fn should_validate(&self, _q: &ValidationQuery) -> bool {
        true
    }
}

/// Validate only keys of originators within `max_hops` confirmed hops.
#[derive(Debug, Clone, Copy)]
pub struct WithinConfirmedHops(pub u32);

impl ValidationPolicy for WithinConfirmedHops {
    fn should_validate(&self, q: &ValidationQuery) -> bool {
        q.confirmed_distance.is_some_and(|d| d <= self.0)
    }
}

/// Chooses the interval to the next LSU.
pub trait PeriodPolicy: Send + std::fmt::Debug {
    fn next_period(&mut self, base: SimDuration, verified_neighbors: usize) -> SimDuration;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FixedPeriod;

impl PeriodPolicy for FixedPeriod {
    fn next_period(&mut self, base: SimDuration, _verified_neighbors: usize) -> SimDuration {
        base
    }
}

/// Sequence counter shared by LSU and PKD emissions. `u32::MAX` is never
/// emitted; reaching it means the space is exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SeqState {
    next_seq: u32,
}

impl SeqState {
    pub fn peek(&self) -> u32 {
        self.next_seq
    }

    pub fn remaining(&self) -> u32 {
        u32::MAX - self.next_seq
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    pub fn next(&mut self) -> Option<u32> {
        if self.is_exhausted() {
            return None;
        }
        let s = self.next_seq;
        self.next_seq += 1;
        Some(s)
    }

    pub fn force(&mut self, next: u32) {
        self.next_seq = next;
    }
}

/// (originator, seq) pairs already accepted, with bounded age.
#[derive(Debug, Clone)]
pub struct DuplicateCache {
    max_age: SimDuration,
    seen: BTreeMap<(Ipv4Addr, u32), SimTime>,
}

impl DuplicateCache {
    pub fn new(max_age: SimDuration) -> Self {
        DuplicateCache {
            max_age,
            seen: BTreeMap::new(),
        }
    }

    pub fn contains(&self, originator: Ipv4Addr, seq: u32) -> bool {
        self.seen.contains_key(&(originator, seq))
    }

    pub fn insert(&mut self, originator: Ipv4Addr, seq: u32, now: SimTime) {
        self.seen.insert((originator, seq), now);
    }

    pub fn purge(&mut self, now: SimTime) {
        let max = self.max_age;
        self.seen.retain(|_, t| now.saturating_sub(*t) <= max);
    }

    pub fn forget(&mut self, originator: Ipv4Addr) {
        self.seen.retain(|(o, _), _| *o != originator);
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OriginService {
    pub enqueued: u64,
    pub served: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NodeCounters {
    pub frames_received: u64,
    pub frames_sent: u64,
    pub discards: BTreeMap<DiscardReason, u64>,
    pub notifications: BTreeMap<NotificationKind, u64>,
    pub malformed_by_mac: BTreeMap<MacAddr, u64>,
    pub hellos_sent: u64,
    pub hellos_verified: u64,
    pub lsu_originated: u64,
    pub pkd_originated: u64,
    pub lsu_accepted: u64,
    pub pkd_accepted: u64,
    pub relayed: u64,
    pub keys_stored: u64,
    pub keys_replaced: u64,
    pub keys_evicted: u64,
    pub validations_skipped: u64,
    pub rekeys: u64,
    /// Scheduler outcome of LSUs per originator.
    pub lsu_service: BTreeMap<Ipv4Addr, OriginService>,
}

impl NodeCounters {
    fn discard(&mut self, r: DiscardReason) {
        *self.discards.entry(r).or_default() += 1;
    }

    pub fn discarded(&self, r: DiscardReason) -> u64 {
        self.discards.get(&r).copied().unwrap_or(0)
    }
}

enum KeySource {
    Stored(PublicKey),
    /// A validated key not yet in the store.
    Fresh(PublicKey),
    /// No usable key; the packet may still be relayed (PKD only).
    Unvalidated,
}

#[derive(Debug)]
pub struct Node {
    identity: NodeIdentity,
    enrollment: Enrollment,
    verifier: Verifier,
    cfg: NodeConfig,
    rng: ChaCha8Rng,
    nlp: NeighborTable,
    lsdb: LinkStateDatabase,
    keys: KeyStore,
    sched: Scheduler<Frame>,
    seq: SeqState,
    dup: DuplicateCache,
    counters: NodeCounters,
    events: Vec<NodeEvent>,
    outbox: Vec<RawFrame>,
    next_hello: SimTime,
    next_lsu: SimTime,
    last_key_broadcast: Option<SimTime>,
    neighbors_at_key_broadcast: BTreeSet<Ipv4Addr>,
    silent_until: Option<SimTime>,
    policy: Box<dyn ValidationPolicy>,
    period: Box<dyn PeriodPolicy>,
}

impl Node {
    pub fn new(
        mac: MacAddr,
        enrollment: Enrollment,
        verifier: Verifier,
        cfg: NodeConfig,
    ) -> Result<Node, ConfigError> {
        cfg.validate()?;
        let (keys, certificate) = enrollment.issue();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let phase = |rng: &mut ChaCha8Rng, period: SimDuration| {
            let ticks = (period.0 / cfg.tick.0).max(1);
            SimTime(rng.gen_range(0..ticks) * cfg.tick.0)
        };
        let next_hello = phase(&mut rng, cfg.hello_period);
        let next_lsu = phase(&mut rng, cfg.lsu_period);
        Ok(Node {
            identity: NodeIdentity {
                mac,
                ip: enrollment.ip(),
                keys,
                certificate,
            },
            enrollment,
            verifier,
            rng,
            nlp: NeighborTable::new(NlpConfig {
                rate_half_life: cfg.rate_half_life,
                lost_neighbor: cfg.lost_neighbor,
            }),
            lsdb: LinkStateDatabase::new(cfg.confirm_ls),
            keys: KeyStore::new(cfg.keystore_capacity),
            sched: Scheduler::new(cfg.sched.clone())?,
            seq: SeqState::default(),
            dup: DuplicateCache::new(cfg.dup_cache_age),
            counters: NodeCounters::default(),
            events: Vec::new(),
            outbox: Vec::new(),
            next_hello,
            next_lsu,
            last_key_broadcast: None,
            neighbors_at_key_broadcast: BTreeSet::new(),
            silent_until: None,
            policy: Box::new(ValidateAll),
            period: Box::new(FixedPeriod),
            cfg,
        })
    }

    pub fn set_validation_policy(&mut self, p: Box<dyn ValidationPolicy>) {
        self.policy = p;
    }

    pub fn set_period_policy(&mut self, p: Box<dyn PeriodPolicy>) {
        self.period = p;
    }

    pub fn identity(&self) -> &NodeIdentity {
        &self.identity
    }

    pub fn ip(&self) -> Ipv4Addr {
        self.identity.ip
    }

    pub fn mac(&self) -> MacAddr {
        self.identity.mac
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn nlp(&self) -> &NeighborTable {
        &self.nlp
    }

    pub fn lsdb(&self) -> &LinkStateDatabase {
        &self.lsdb
    }

    pub fn key_store(&self) -> &KeyStore {
        &self.keys
    }

    pub fn scheduler(&self) -> &Scheduler<Frame> {
        &self.sched
    }

    pub fn counters(&self) -> &NodeCounters {
        &self.counters
    }

    pub fn seq_state(&self) -> SeqState {
        self.seq
    }

    /// Test hook: moves the sequence counter.
    pub fn force_next_seq(&mut self, next: u32) {
        self.seq.force(next);
    }

    pub fn is_silent(&self) -> bool {
        self.silent_until.is_some()
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    /// Frames produced outside [`Node::timer_tick`] (relays from
    /// [`Node::handle_now`]).
    pub fn take_outbox(&mut self) -> Vec<RawFrame> {
        if self.silent_until.is_some() {
            self.outbox.clear();
        }
        let out = std::mem::take(&mut self.outbox);
        self.counters.frames_sent += out.len() as u64;
        out
    }

    /// Pre-provisions a key, as if learned out of band.
    pub fn install_key(&mut self, ip: Ipv4Addr, key: PublicKey) {
        self.store_key(ip, key, None);
    }

    /// Digest over the LSDB snapshot and key store contents.
    pub fn state_digest(&self) -> Digest {
        let mut buf = serde_json::to_vec(&self.lsdb.snapshot()).expect("snapshot serializes");
        for e in self.keys.iter() {
            buf.extend_from_slice(&e.ip.octets());
            buf.extend_from_slice(&e.public_key.key_id.0.to_be_bytes());
            buf.extend_from_slice(&e.public_key.fingerprint.0);
            buf.extend_from_slice(&e.highest_seq.map_or(-1, i64::from).to_be_bytes());
        }
        hash(&buf)
    }

    fn emit(&mut self, packet: &Packet) {
        let payload = encode(packet).expect("locally built packets encode");
        self.outbox.push(RawFrame {
            src_mac: self.identity.mac,
            src_ip: self.identity.ip,
            payload: Bytes::from(payload),
        });
    }

    // ---- inbound ----

    fn screen(&mut self, raw: &RawFrame, now: SimTime) -> Result<Frame, Handling> {
        self.counters.frames_received += 1;
        let frame = match Frame::decode(raw) {
            Ok(f) => f,
            Err(e) => {
                self.counters.discard(DiscardReason::Malformed);
                *self.counters.malformed_by_mac.entry(raw.src_mac).or_default() += 1;
                return Err(Handling::Malformed(e));
            }
        };
        if let Some(n) = self
            .nlp
            .observe_frame(frame.src_mac, frame.src_ip, now, self.identity.mac)
        {
            self.on_nlp_notification(n);
            return Err(Handling::Notified(n));
        }
        Ok(frame)
    }

    /// The offending packet is dropped before any engine processing.
    fn on_nlp_notification(&mut self, n: NlpNotification) {
        self.counters.discard(DiscardReason::Nlp);
        *self.counters.notifications.entry(n.kind).or_default() += 1;
        self.events.push(NodeEvent::Notification(n));
    }

    /// Decodes, screens through NLP and queues a frame for the next round.
    pub fn deliver_frame(&mut self, raw: &RawFrame, now: SimTime) -> Admission {
        let frame = match self.screen(raw, now) {
            Ok(f) => f,
            Err(Handling::Malformed(e)) => return Admission::Malformed(e),
            Err(Handling::Notified(n)) => return Admission::Notified(n),
            Err(Handling::Processed(_)) => unreachable!(),
        };
        if let Packet::Lsu(p) = &frame.packet {
            self.counters
                .lsu_service
                .entry(p.originator_ip)
                .or_default()
                .enqueued += 1;
        }
        if let Enqueue::DroppedFull(old) = self.sched.enqueue(frame.src_mac, frame, now) {
            self.count_sched_drop(&old, DiscardReason::QueueFull);
        }
        Admission::Queued
    }

    fn count_sched_drop(&mut self, f: &Frame, reason: DiscardReason) {
        self.counters.discard(reason);
        if let Packet::Lsu(p) = &f.packet {
            self.counters
                .lsu_service
                .entry(p.originator_ip)
                .or_default()
                .dropped += 1;
        }
    }

    /// Runs the whole pipeline on one frame immediately. Relays are left in
    /// the outbox.
    pub fn handle_now(&mut self, raw: &RawFrame, now: SimTime) -> Handling {
        match self.screen(raw, now) {
            Ok(frame) => Handling::Processed(self.process(&frame, now)),
            Err(h) => h,
        }
    }

    fn process(&mut self, frame: &Frame, now: SimTime) -> Action {
        let action = match &frame.packet {
            Packet::Hello(h) => self.receive_hello(frame, h),
            Packet::Lsu(p) => self.receive_lsu(p, now),
            Packet::Pkd(p) => self.receive_pkd(p, now),
        };
        if let Action::Discard(r) = action {
            self.counters.discard(r);
        }
        action
    }

    fn receive_hello(&mut self, frame: &Frame, h: &HelloPacket) -> Action {
        if h.mac != frame.src_mac || h.ip != frame.src_ip {
            return Action::Discard(DiscardReason::HelloMismatch);
        }
        let ok = verify_hello(h, &self.keys, &self.verifier);
        if ok {
            self.counters.hellos_verified += 1;
        }
        self.nlp.set_verified(frame.src_mac, ok);
        Action::AcceptOnly
    }

    fn validation_query(&self, originator: Ipv4Addr, hops: u8, radius: u8) -> ValidationQuery {
        ValidationQuery {
            originator,
            hops,
            radius,
            confirmed_distance: self.lsdb.distance(self.identity.ip, originator),
        }
    }

    fn cert_matches(&self, originator: Ipv4Addr, key: &PublicKey, cert: &Certificate) -> bool {
        cert.subject_ip == originator
            && cert.subject_public_key == *key
            && self.verifier.verify_certificate(cert)
    }

    /// Stores a key; a replacement wipes everything learned under the old one.
    fn store_key(&mut self, ip: Ipv4Addr, key: PublicKey, seq: Option<u32>) {
        match self.keys.insert(ip, key, seq) {
            Insert::Replaced { .. } => {
                self.counters.keys_replaced += 1;
                self.lsdb.reset_originator(ip);
                self.dup.forget(ip);
                self.nlp.unverify_ip(ip);
            }
            Insert::New { evicted } => {
                self.counters.keys_stored += 1;
                if evicted.is_some() {
                    self.counters.keys_evicted += 1;
                }
            }
        }
    }

    /// Hop index `i = r - ttl` if it lies in `1..=r` and the chain verifies.
    fn chain_gate(r: u8, ttl: u8, anchor: &Digest, hops: &Digest) -> Option<u8> {
        if r == 0 || ttl >= r {
            return None;
        }
        let i = r - ttl;
        verify_chain_link(anchor, hops, u32::from(r - i)).then_some(i)
    }

    fn is_duplicate(&self, source: &KeySource, originator: Ipv4Addr, seq: u32) -> bool {
        if self.dup.contains(originator, seq) {
            return true;
        }
        match source {
            KeySource::Stored(_) => {
                self.keys
                    .get(originator)
                    .and_then(|e| e.highest_seq)
                    .is_some_and(|h| seq <= h)
                    || self
                        .lsdb
                        .originator(originator)
                        .is_some_and(|r| seq <= r.highest_seq)
            }
            KeySource::Fresh(_) | KeySource::Unvalidated => false,
        }
    }

    /// Processes an LSU that already passed NLP screening: validation, then
    /// the duplicate check and chain gate, then ingest and relay.
    pub fn receive_lsu(&mut self, p: &LsuPacket, now: SimTime) -> Action {
        if p.originator_ip == self.identity.ip {
            return Action::Discard(DiscardReason::Own);
        }
        let stored = self.keys.get(p.originator_ip).map(|e| e.public_key);
        let hops = p.r_lsu.saturating_sub(p.ttl);
        let source = match (&p.attached_key, stored) {
            (Some(a), s) if s != Some(a.public_key) => {
                if s.is_some_and(|s| a.public_key.key_id <= s.key_id) {
                    KeySource::Stored(s.expect("checked"))
                } else if !self
                    .policy
                    .should_validate(&self.validation_query(p.originator_ip, hops, p.r_lsu))
                {
                    self.counters.validations_skipped += 1;
                    match s {
                        Some(s) => KeySource::Stored(s),
                        None => return Action::Discard(DiscardReason::NoKey),
                    }
                } else if !self.cert_matches(p.originator_ip, &a.public_key, &a.certificate) {
                    return Action::Discard(DiscardReason::BadCert);
                } else {
                    KeySource::Fresh(a.public_key)
                }
            }
            (_, Some(s)) => KeySource::Stored(s),
            (_, None) => return Action::Discard(DiscardReason::NoKey),
        };
        let key = match source {
            KeySource::Stored(k) | KeySource::Fresh(k) => k,
            KeySource::Unvalidated => unreachable!("LSUs always need a key"),
        };
        let msg = signable_bytes(&Packet::Lsu(p.clone())).expect("decoded packet re-encodes");
        if !self.verifier.verify(&key, &msg, &p.signature) {
            return Action::Discard(DiscardReason::BadSig);
        }
        if self.is_duplicate(&source, p.originator_ip, p.seq) {
            return Action::Discard(DiscardReason::Duplicate);
        }
        let Some(i) = Self::chain_gate(p.r_lsu, p.ttl, &p.zone_radius, &p.hops_traversed) else {
            return Action::Discard(DiscardReason::BadChain);
        };
        if let KeySource::Fresh(k) = source {
            self.store_key(p.originator_ip, k, Some(p.seq));
        }
        self.keys.note_seq(p.originator_ip, p.seq);
        self.dup.insert(p.originator_ip, p.seq, now);
        self.lsdb.ingest_report(p.originator_ip, p.seq, &p.links, now);
        self.counters.lsu_accepted += 1;
        self.events.push(NodeEvent::LsuAccepted {
            originator: p.originator_ip,
            seq: p.seq,
            hops: i,
            key: key.key_id,
        });
        if p.ttl > 0 {
            let mut relay = p.clone();
            relay.ttl -= 1;
            relay.hops_traversed = hash(&p.hops_traversed.0);
            self.emit(&Packet::Lsu(relay));
            self.counters.relayed += 1;
            Action::AcceptRelay
        } else {
            Action::AcceptOnly
        }
    }

    pub fn receive_pkd(&mut self, p: &PkdPacket, now: SimTime) -> Action {
        if p.originator_ip == self.identity.ip {
            return Action::Discard(DiscardReason::Own);
        }
        let stored = self.keys.get(p.originator_ip).map(|e| e.public_key);
        let hops = p.r_pkd.saturating_sub(p.ttl);
        let source = match stored {
            Some(s) if s == p.public_key => KeySource::Stored(s),
            Some(s) if p.public_key.key_id <= s.key_id => {
                return Action::Discard(DiscardReason::StaleKey)
            }
            _ => {
                if !self
                    .policy
                    .should_validate(&self.validation_query(p.originator_ip, hops, p.r_pkd))
                {
                    self.counters.validations_skipped += 1;
                    KeySource::Unvalidated
                } else if !self.cert_matches(p.originator_ip, &p.public_key, &p.certificate) {
                    return Action::Discard(DiscardReason::BadCert);
                } else {
                    let msg = signable_bytes(&Packet::Pkd(p.clone()))
                        .expect("decoded packet re-encodes");
                    if !self.verifier.verify(&p.public_key, &msg, &p.signature) {
                        return Action::Discard(DiscardReason::BadSig);
                    }
                    KeySource::Fresh(p.public_key)
                }
            }
        };
        if self.is_duplicate(&source, p.originator_ip, p.seq) {
            return Action::Discard(DiscardReason::Duplicate);
        }
        let Some(i) = Self::chain_gate(p.r_pkd, p.ttl, &p.zone_radius, &p.hops_traversed) else {
            return Action::Discard(DiscardReason::BadChain);
        };
        let stored_now = match source {
            KeySource::Fresh(k) => {
                self.store_key(p.originator_ip, k, Some(p.seq));
                true
            }
            KeySource::Stored(_) => {
                self.keys.note_seq(p.originator_ip, p.seq);
                false
            }
            KeySource::Unvalidated => false,
        };
        self.dup.insert(p.originator_ip, p.seq, now);
        self.counters.pkd_accepted += 1;
        self.events.push(NodeEvent::PkdAccepted {
            originator: p.originator_ip,
            seq: p.seq,
            hops: i,
            stored: stored_now,
        });
        if p.ttl > 0 {
            let mut relay = p.clone();
            relay.ttl -= 1;
            relay.hops_traversed = hash(&p.hops_traversed.0);
            self.emit(&Packet::Pkd(relay));
            self.counters.relayed += 1;
            Action::AcceptRelay
        } else {
            Action::AcceptOnly
        }
    }

    // ---- outbound ----

    fn fresh_seed(&mut self) -> Digest {
        let mut b = [0u8; 32];
        self.rng.fill(&mut b);
        Digest(b)
    }

    fn current_neighbors(&self) -> BTreeSet<Ipv4Addr> {
        self.nlp.entries().map(|e| e.ip).collect()
    }

    /// True when the neighborhood changed by at least the configured fraction
    /// since the last key broadcast, or the broadcast interval elapsed.
    pub fn key_rebroadcast_trigger(&self, now: SimTime) -> bool {
        let Some(last) = self.last_key_broadcast else {
            return true;
        };
        if now.saturating_sub(last) >= self.cfg.max_key_interval {
            return true;
        }
        let base = &self.neighbors_at_key_broadcast;
        let current = self.current_neighbors();
        let departed = base.difference(&current).count();
        let arrived = current.difference(base).count();
        let denom = base.len().max(1) as f64;
        (departed + arrived) > 0 && (departed + arrived) as f64 / denom >= self.cfg.key_change_threshold
    }

    fn mark_key_broadcast(&mut self, now: SimTime) {
        self.last_key_broadcast = Some(now);
        self.neighbors_at_key_broadcast = self.current_neighbors();
    }

    pub fn make_hello(&self) -> HelloPacket {
        let mut h = HelloPacket {
            mac: self.identity.mac,
            ip: self.identity.ip,
            signature: sign(&self.identity.keys.private, &[]),
        };
        let msg = signable_bytes(&Packet::Hello(h.clone())).expect("hello encodes");
        h.signature = sign(&self.identity.keys.private, &msg);
        h
    }

    /// Signs the next LSU and ingests it locally. `None` once the sequence
    /// space is exhausted.
    pub fn originate_lsu(&mut self, now: SimTime, attach_key: bool) -> Option<LsuPacket> {
        let seq = self.seq.next()?;
        let radius = self.cfg.radius;
        let seed = self.fresh_seed();
        let chain = make_chain(seed, radius).expect("radius validated");
        let links = self.nlp.verified_neighbors();
        let mut p = LsuPacket {
            originator_ip: self.identity.ip,
            seq,
            r_lsu: radius,
            ttl: radius - 1,
            zone_radius: chain.anchor,
            hops_traversed: chain.first_link,
            links,
            attached_key: attach_key.then_some(AttachedKey {
                public_key: self.identity.keys.public,
                certificate: self.identity.certificate,
            }),
            signature: sign(&self.identity.keys.private, &[]),
        };
        let msg = signable_bytes(&Packet::Lsu(p.clone())).expect("own LSU encodes");
        p.signature = sign(&self.identity.keys.private, &msg);
        self.lsdb.ingest_report(self.identity.ip, seq, &p.links, now);
        self.counters.lsu_originated += 1;
        self.events.push(NodeEvent::LsuOriginated { seq });
        Some(p)
    }

    pub fn originate_pkd(&mut self) -> Option<PkdPacket> {
        let seq = self.seq.next()?;
        let r = self.cfg.extended_pkd_radius.unwrap_or(self.cfg.radius);
        let seed = self.fresh_seed();
        let chain = make_chain(seed, r).expect("radius validated");
        let mut p = PkdPacket {
            originator_ip: self.identity.ip,
            seq,
            public_key: self.identity.keys.public,
            certificate: self.identity.certificate,
            r_pkd: r,
            ttl: r - 1,
            zone_radius: chain.anchor,
            hops_traversed: chain.first_link,
            signature: sign(&self.identity.keys.private, &[]),
        };
        let msg = signable_bytes(&Packet::Pkd(p.clone())).expect("own PKD encodes");
        p.signature = sign(&self.identity.keys.private, &msg);
        self.counters.pkd_originated += 1;
        self.events.push(NodeEvent::PkdOriginated { seq });
        Some(p)
    }

    /// Enters the silent period that precedes a new key.
    pub fn rekey(&mut self, now: SimTime) {
        self.silent_until = Some(now + self.cfg.lost_neighbor);
        self.outbox.clear();
        self.events.push(NodeEvent::RekeyStarted);
    }

    fn finish_rekey(&mut self, now: SimTime) {
        let (keys, cert) = self.enrollment.issue();
        self.identity.keys = keys;
        self.identity.certificate = cert;
        self.seq = SeqState::default();
        self.lsdb.reset_originator(self.identity.ip);
        self.last_key_broadcast = None;
        self.silent_until = None;
        self.next_lsu = now;
        self.next_hello = now;
        self.counters.rekeys += 1;
        self.events.push(NodeEvent::RekeyCompleted {
            key: self.identity.keys.public.key_id,
        });
    }

    fn originate_due(&mut self, now: SimTime) {
        if now >= self.next_lsu {
            let trigger = self.key_rebroadcast_trigger(now);
            let standalone = self.cfg.pkd_mode == PkdMode::StandalonePkd;
            let needed = 1 + u32::from(standalone && trigger);
            if self.seq.remaining() < needed {
                self.rekey(now);
                return;
            }
            if trigger && standalone {
                let pkd = self.originate_pkd().expect("sequence space checked");
                self.emit(&Packet::Pkd(pkd));
                self.mark_key_broadcast(now);
            }
            let attach = trigger && !standalone;
            let lsu = self.originate_lsu(now, attach).expect("sequence space checked");
            self.emit(&Packet::Lsu(lsu));
            if attach {
                self.mark_key_broadcast(now);
            }
            let verified = self.nlp.verified_neighbors().len();
            self.next_lsu = now + self.period.next_period(self.cfg.lsu_period, verified);
        }
        if now >= self.next_hello {
            let h = self.make_hello();
            self.emit(&Packet::Hello(h));
            self.counters.hellos_sent += 1;
            self.next_hello = now + self.cfg.hello_period;
        }
    }

    /// Advances the node to `now`: housekeeping, one scheduler round, then
    /// any due originations. Returns the frames to broadcast.
    pub fn timer_tick(&mut self, now: SimTime) -> Vec<RawFrame> {
        if self.silent_until.is_some_and(|t| now >= t) {
            self.finish_rekey(now);
        }
        self.nlp.expire_lost(now);
        self.lsdb.expire_unconfirmed(now);
        self.lsdb.flush_stale(now, self.cfg.lsu_flush);
        self.lsdb
            .prune_out_of_zone(self.identity.ip, self.cfg.radius, now);
        self.dup.purge(now);
        for (_, f) in self.sched.drop_starved(now) {
            self.count_sched_drop(&f, DiscardReason::Starved);
        }
        let served = {
            let nlp = &self.nlp;
            self.sched.run_round(|m| nlp.rate_of(m, now))
        };
        for (_, frame) in served {
            if let Packet::Lsu(p) = &frame.packet {
                self.counters
                    .lsu_service
                    .entry(p.originator_ip)
                    .or_default()
                    .served += 1;
            }
            self.process(&frame, now);
        }
        if self.silent_until.is_none() {
            self.originate_due(now);
        }
        self.take_outbox()
    }
}
