//! Node behaviors: the benign protocol node and the adversary catalog.
//!
//! Every adversary wraps a genuine [`Node`] holding only its own key pair, so
//! it participates in neighbor discovery and flooding like anyone else. Its
//! misbehavior is applied at the byte level: outgoing frames are decoded,
//! rewritten, re-signed with the adversary's own key where needed, and
//! re-encoded, and extra raw frames are injected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::sync::{Arc, Mutex};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{sign, PrivateKey};
use crate::engine::Node;
use crate::sim::graph::NodeId;
use crate::time::{SimDuration, SimTime};
use crate::wire::{decode, encode, signable_bytes, LsuPacket, MacAddr, Packet, RawFrame};

/// What a simulated participant does with frames and ticks.
pub trait Behavior: Send + fmt::Debug {
    fn deliver(&mut self, raw: &RawFrame, now: SimTime);
    fn tick(&mut self, now: SimTime) -> Vec<RawFrame>;
    fn node(&self) -> &Node;
    fn node_mut(&mut self) -> &mut Node;
    fn into_node(self: Box<Self>) -> Node;
    /// `None` for protocol-abiding nodes.
    fn adversary(&self) -> Option<&AdversaryKind>;
}

#[derive(Debug)]
pub struct Benign(pub Node);

impl Behavior for Benign {
    fn deliver(&mut self, raw: &RawFrame, now: SimTime) {
        self.0.deliver_frame(raw, now);
    }

    fn tick(&mut self, now: SimTime) -> Vec<RawFrame> {
        self.0.timer_tick(now)
    }

    fn node(&self) -> &Node {
        &self.0
    }

    fn node_mut(&mut self) -> &mut Node {
        &mut self.0
    }

    fn into_node(self: Box<Self>) -> Node {
        self.0
    }

    fn adversary(&self) -> Option<&AdversaryKind> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloodPacket {
    /// Freshly signed LSUs of the flooder itself.
    Lsu,
    /// Freshly signed PKDs of the flooder itself.
    Pkd,
    /// Random bytes.
    Garbage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopMode {
    /// Rebroadcast received LSUs and PKDs without touching ttl or
    /// hops_traversed, including copies whose ttl is already zero.
    UnchangedForward,
    /// Rebroadcast with ttl raised by one and hops_traversed left as is.
    TtlInflate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryKind {
    /// Advertises links to `victims` that do not exist.
    LinkForger { victims: Vec<Ipv4Addr> },
    /// From `start` on, sends every frame with `claimed_ip` in the IP header.
    IpSpoofer { claimed_ip: Ipv4Addr, start: SimTime },
    /// From `start` on, sends every frame with `target_mac` as source MAC.
    MacSpoofer { target_mac: MacAddr, start: SimTime },
    /// Retransmits each LSU frame it sends `copies` more times, `spacing`
    /// apart.
    Replayer { copies: u32, spacing: SimDuration },
    /// Injects `rate` extra packets per second from `start` on.
    Flooder {
        packet: FloodPacket,
        rate: f64,
        start: SimTime,
    },
    /// Replaces its own relaying of LSUs and PKDs with `mode`.
    HopExtender { mode: HopMode },
    /// Originates normally but never relays.
    Dropper,
    /// Advertises a link to `partner` and tunnels its own LSU/PKD frames to
    /// the partner, which rebroadcasts them.
    ColluderPair { partner: NodeId },
}

impl AdversaryKind {
    pub fn label(&self) -> &'static str {
        match self {
            AdversaryKind::LinkForger { .. } => "link_forger",
            AdversaryKind::IpSpoofer { .. } => "ip_spoofer",
            AdversaryKind::MacSpoofer { .. } => "mac_spoofer",
            AdversaryKind::Replayer { .. } => "replayer",
            AdversaryKind::Flooder { .. } => "flooder",
            AdversaryKind::HopExtender { .. } => "hop_extender",
            AdversaryKind::Dropper => "dropper",
            AdversaryKind::ColluderPair { .. } => "colluder_pair",
        }
    }
}

/// Out-of-band channel shared by colluders: payloads waiting per recipient.
#[derive(Debug, Clone, Default)]
pub struct Tunnel {
    mail: Arc<Mutex<BTreeMap<NodeId, Vec<Bytes>>>>,
}

impl Tunnel {
    fn post(&self, to: NodeId, payload: Bytes) {
        self.mail
            .lock()
            .expect("tunnel lock")
            .entry(to)
            .or_default()
            .push(payload);
    }

    fn collect(&self, me: NodeId) -> Vec<Bytes> {
        self.mail
            .lock()
            .expect("tunnel lock")
            .remove(&me)
            .unwrap_or_default()
    }
}

#[derive(Debug)]
pub struct Adversary {
    node: Node,
    kind: AdversaryKind,
    rng: ChaCha8Rng,
    me: NodeId,
    tunnel: Option<Tunnel>,
    partner_ip: Option<Ipv4Addr>,
    /// Replayer backlog keyed by emission time.
    scheduled: BTreeMap<SimTime, Vec<Bytes>>,
    /// HopExtender: (is_pkd, originator, seq) already forwarded.
    seen: BTreeSet<(bool, Ipv4Addr, u32)>,
    forward: Vec<Bytes>,
    flood_credit: f64,
}

impl Adversary {
    pub fn new(node: Node, me: NodeId, kind: AdversaryKind, rng_seed: u64) -> Self {
        Adversary {
            node,
            kind,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            me,
            tunnel: None,
            partner_ip: None,
            scheduled: BTreeMap::new(),
            seen: BTreeSet::new(),
            forward: Vec::new(),
            flood_credit: 0.0,
        }
    }

    /// Connects a colluder to its partner's shared channel.
    pub fn with_tunnel(mut self, tunnel: Tunnel, partner_ip: Ipv4Addr) -> Self {
        self.tunnel = Some(tunnel);
        self.partner_ip = Some(partner_ip);
        self
    }

    fn frame(&self, payload: Bytes) -> RawFrame {
        RawFrame {
            src_mac: self.node.mac(),
            src_ip: self.node.ip(),
            payload,
        }
    }

    fn resign(p: &mut LsuPacket, key: &PrivateKey) {
        let msg = signable_bytes(&Packet::Lsu(p.clone())).expect("LSU encodes");
        p.signature = sign(key, &msg);
    }

    fn add_links(p: &mut LsuPacket, extra: &[Ipv4Addr], key: &PrivateKey) -> Bytes {
        for &ip in extra {
            if ip != p.originator_ip && !p.links.contains(&ip) {
                p.links.push(ip);
            }
        }
        Adversary::resign(p, key);
        Bytes::from(encode(&Packet::Lsu(p.clone())).expect("LSU encodes"))
    }

    /// Applies the per-kind rewrite to one frame produced by the inner node.
    fn rewrite(&mut self, f: RawFrame, now: SimTime) -> Option<RawFrame> {
        let me = self.node.ip();
        let packet = decode(&f.payload).ok()?;
        let relayed = match &packet {
            Packet::Lsu(p) => p.originator_ip != me,
            Packet::Pkd(p) => p.originator_ip != me,
            Packet::Hello(_) => false,
        };
        let mut f = f;
        match (&self.kind, packet) {
            (AdversaryKind::Dropper, Packet::Lsu(_) | Packet::Pkd(_)) if relayed => return None,
            (AdversaryKind::HopExtender { .. }, Packet::Lsu(_) | Packet::Pkd(_)) if relayed => {
                return None
            }
            (AdversaryKind::LinkForger { victims }, Packet::Lsu(mut p)) if !relayed => {
                let victims = victims.clone();
                f.payload = Adversary::add_links(&mut p, &victims, &self.node.identity().keys.private);
            }
            (AdversaryKind::ColluderPair { partner }, Packet::Lsu(mut p)) if !relayed => {
                let partner = *partner;
                let extra = self.partner_ip.into_iter().collect::<Vec<_>>();
                f.payload = Adversary::add_links(&mut p, &extra, &self.node.identity().keys.private);
                if let Some(t) = &self.tunnel {
                    t.post(partner, f.payload.clone());
                }
            }
            (AdversaryKind::ColluderPair { partner }, Packet::Pkd(_)) if !relayed => {
                if let Some(t) = &self.tunnel {
                    t.post(*partner, f.payload.clone());
                }
            }
            (AdversaryKind::Replayer { copies, spacing }, Packet::Lsu(_)) => {
                for k in 1..=u64::from(*copies) {
                    self.scheduled
                        .entry(now + spacing.mul(k))
                        .or_default()
                        .push(f.payload.clone());
                }
            }
            _ => {}
        }
        Some(f)
    }

    fn flood(&mut self, now: SimTime) -> Vec<RawFrame> {
        let AdversaryKind::Flooder { packet, rate, start } = self.kind else {
            return Vec::new();
        };
        if now < start {
            return Vec::new();
        }
        self.flood_credit += rate * self.node.config().tick.as_secs_f64();
        let mut out = Vec::new();
        while self.flood_credit >= 1.0 {
            self.flood_credit -= 1.0;
            let payload = match packet {
                FloodPacket::Garbage => {
                    let len = self.rng.gen_range(1..64);
                    let mut b = vec![0u8; len];
                    self.rng.fill(&mut b[..]);
                    Bytes::from(b)
                }
                FloodPacket::Lsu => match self.node.originate_lsu(now, false) {
                    Some(p) => Bytes::from(encode(&Packet::Lsu(p)).expect("LSU encodes")),
                    None => break,
                },
                FloodPacket::Pkd => match self.node.originate_pkd() {
                    Some(p) => Bytes::from(encode(&Packet::Pkd(p)).expect("PKD encodes")),
                    None => break,
                },
            };
            out.push(self.frame(payload));
        }
        out
    }

    fn spoof(&self, mut f: RawFrame, now: SimTime) -> RawFrame {
        match self.kind {
            AdversaryKind::IpSpoofer { claimed_ip, start } if now >= start => f.src_ip = claimed_ip,
            AdversaryKind::MacSpoofer { target_mac, start } if now >= start => {
                f.src_mac = target_mac
            }
            _ => {}
        }
        f
    }
}

impl Behavior for Adversary {
    fn deliver(&mut self, raw: &RawFrame, now: SimTime) {
        self.node.deliver_frame(raw, now);
        let AdversaryKind::HopExtender { mode } = self.kind else {
            return;
        };
        let packet = match decode(&raw.payload) {
            Ok(p @ (Packet::Lsu(_) | Packet::Pkd(_))) => p,
            _ => return,
        };
        let key = match &packet {
            Packet::Lsu(p) => (false, p.originator_ip, p.seq),
            Packet::Pkd(p) => (true, p.originator_ip, p.seq),
            Packet::Hello(_) => unreachable!("filtered above"),
        };
        if key.1 == self.node.ip() || !self.seen.insert(key) {
            return;
        }
        match (mode, packet) {
            (HopMode::UnchangedForward, _) => self.forward.push(raw.payload.clone()),
            (HopMode::TtlInflate, mut packet) => {
                match &mut packet {
                    Packet::Lsu(p) => p.ttl = p.ttl.saturating_add(1),
                    Packet::Pkd(p) => p.ttl = p.ttl.saturating_add(1),
                    Packet::Hello(_) => unreachable!("filtered above"),
                }
                self.forward
                    .push(Bytes::from(encode(&packet).expect("decoded packet encodes")));
            }
        }
    }

    fn tick(&mut self, now: SimTime) -> Vec<RawFrame> {
        let produced = self.node.timer_tick(now);
        let mut out: Vec<RawFrame> = Vec::with_capacity(produced.len());
        for f in produced {
            if let Some(f) = self.rewrite(f, now) {
                out.push(f);
            }
        }
        for payload in std::mem::take(&mut self.forward) {
            out.push(self.frame(payload));
        }
        if let Some(t) = self.tunnel.clone() {
            for payload in t.collect(self.me) {
                out.push(self.frame(payload));
            }
        }
        let due: Vec<SimTime> = self.scheduled.range(..=now).map(|(t, _)| *t).collect();
        for t in due {
            for payload in self.scheduled.remove(&t).unwrap_or_default() {
                out.push(self.frame(payload));
            }
        }
        out.extend(self.flood(now));
        out.into_iter().map(|f| self.spoof(f, now)).collect()
    }

    fn node(&self) -> &Node {
        &self.node
    }

    fn node_mut(&mut self) -> &mut Node {
        &mut self.node
    }

    fn into_node(self: Box<Self>) -> Node {
        self.node
    }

    fn adversary(&self) -> Option<&AdversaryKind> {
        Some(&self.kind)
    }
}
