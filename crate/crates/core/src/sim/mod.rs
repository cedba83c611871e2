//! Deterministic discrete-event MANET simulator.
//!
//! The medium is an abstract undirected graph: a transmitted frame reaches
//! every current graph neighbor of the sender after a fixed latency. All
//! nodes tick together on a global grid, so with the default 1 ms latency
//! and 100 ms tick a packet advances exactly one hop per tick.
//!
//! Events at equal times run in insertion order, and every random stream is
//! seeded from the world seed, so a (configuration, seed) pair fully
//! determines the trace.

pub mod adversary;
pub mod graph;
pub mod metrics;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, Authority, Digest};
use crate::engine::{ConfigError, DiscardReason, Node, NodeConfig, NodeEvent};
use crate::lsdb::edge;
use crate::nlp::NotificationKind;
use crate::time::{SimDuration, SimTime};
use crate::wire::{decode, MacAddr, Packet, RawFrame};

pub use adversary::{Adversary, AdversaryKind, Behavior, Benign, FloodPacket, HopMode, Tunnel};
pub use graph::{Graph, GraphError, NodeId};
pub use metrics::{write_jsonl, Accuracy, NodeSample, Summary};

pub fn ip_of(id: NodeId) -> Ipv4Addr {
    let n = u32::try_from(id + 1).expect("node id fits in u32");
    Ipv4Addr::from(0x0A00_0000 | n)
}

pub fn mac_of(id: NodeId) -> MacAddr {
    MacAddr::from_u64(0x0200_0000_0000 | (id as u64 + 1))
}

/// Independent 64-bit stream seed for (world seed, node, purpose).
pub fn derive_seed(seed: u64, id: u64, purpose: &str) -> u64 {
    let mut buf = seed.to_be_bytes().to_vec();
    buf.extend_from_slice(&id.to_be_bytes());
    buf.extend_from_slice(purpose.as_bytes());
    let d = hash(&buf);
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilityModel {
    Static,
    /// Random edge flips at `rate` per second; removals that would
    /// disconnect the graph are skipped.
    RandomEdgeChurn { rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub latency: SimDuration,
    /// Independent per-delivery drop probability.
    pub loss: f64,
    pub mobility: MobilityModel,
    pub sample_interval: SimDuration,
    /// Keep per-node sample records (the containment audit runs regardless).
    pub keep_samples: bool,
    /// Record the accepting node set of every LSU.
    pub record_acceptors: bool,
    pub check_invariants: bool,
    /// Ground-truth links younger than this are left out of recall.
    pub fresh_link_grace: SimDuration,
    pub name: String,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            latency: SimDuration::from_millis(1),
            loss: 0.0,
            mobility: MobilityModel::Static,
            sample_interval: SimDuration::from_secs(1),
            keep_samples: true,
            record_acceptors: false,
            check_invariants: false,
            fresh_link_grace: SimDuration::from_secs(5),
            name: String::from("unnamed"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("{configs} node configurations for {nodes} nodes")]
    SizeMismatch { configs: usize, nodes: usize },
    #[error("node {id}: {source}")]
    Config {
        id: NodeId,
        #[source]
        source: ConfigError,
    },
    #[error("node {0} has a different tick than node 0")]
    TickMismatch(NodeId),
    #[error("latency must be shorter than the tick")]
    Latency,
    #[error("loss probability {0} outside [0, 1)")]
    Loss(f64),
    #[error("colluder {0} cannot partner with itself")]
    SelfPartner(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxRecord {
    pub at: SimTime,
    /// Packet tag for decodable frames, `None` for garbage.
    pub tag: Option<u8>,
    pub originator: Option<Ipv4Addr>,
    pub seq: Option<u32>,
    pub ttl: Option<u8>,
}

/// A notification raised while delivering one frame, with the receiver's
/// LSDB/key-store digest around that delivery (only for frames sent by
/// adversaries).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotificationRecord {
    pub at: SimTime,
    pub receiver: NodeId,
    pub sender: NodeId,
    pub kind: NotificationKind,
    pub before: Option<Digest>,
    pub after: Option<Digest>,
}

enum EventKind {
    TickAll,
    Deliver {
        to: NodeId,
        from: NodeId,
        frame: RawFrame,
    },
    Churn,
}

struct Event {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub struct SimWorld {
    cfg: WorldConfig,
    tick: SimDuration,
    authority: Authority,
    graph: Graph,
    edge_birth: BTreeMap<(NodeId, NodeId), SimTime>,
    /// Every edge that has existed at any time.
    ever_edges: BTreeSet<(NodeId, NodeId)>,
    behaviors: Vec<Option<Box<dyn Behavior>>>,
    ip_index: BTreeMap<Ipv4Addr, NodeId>,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    now: SimTime,
    rng: ChaCha8Rng,
    churn_rng: ChaCha8Rng,
    tunnels: BTreeMap<(NodeId, NodeId), Tunnel>,
    tx: Vec<Vec<TxRecord>>,
    relay_counts: BTreeMap<(NodeId, u8, Ipv4Addr, u32), u32>,
    originations: BTreeMap<(Ipv4Addr, u32), (NodeId, SimTime)>,
    accept_count: BTreeMap<(Ipv4Addr, u32), usize>,
    acceptors: BTreeMap<(Ipv4Addr, u32), BTreeMap<NodeId, u8>>,
    accept_hops: BTreeMap<u8, u64>,
    notifications: Vec<NotificationRecord>,
    rekey_log: Vec<(SimTime, NodeId, NodeEvent)>,
    samples: Vec<NodeSample>,
    fabricated_benign: BTreeSet<(Ipv4Addr, Ipv4Addr)>,
    fabricated_adversarial: BTreeSet<(Ipv4Addr, Ipv4Addr)>,
    violations: Vec<String>,
    frames_delivered: u64,
    frames_lost: u64,
    churn_flips: u64,
}

impl std::fmt::Debug for SimWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimWorld")
            .field("name", &self.cfg.name)
            .field("now", &self.now)
            .field("nodes", &self.graph.len())
            .finish_non_exhaustive()
    }
}

impl SimWorld {
    /// Builds a benign world; node `i` gets `configs[i]` with its RNG seed
    /// derived from the world seed.
    pub fn new(graph: Graph, configs: Vec<NodeConfig>, cfg: WorldConfig) -> Result<Self, SimError> {
        if configs.len() != graph.len() {
            return Err(SimError::SizeMismatch {
                configs: configs.len(),
                nodes: graph.len(),
            });
        }
        if !(0.0..1.0).contains(&cfg.loss) {
            return Err(SimError::Loss(cfg.loss));
        }
        let tick = configs[0].tick;
        if cfg.latency >= tick {
            return Err(SimError::Latency);
        }
        let authority = Authority::new(cfg.seed);
        let mut behaviors: Vec<Option<Box<dyn Behavior>>> = Vec::with_capacity(graph.len());
        for (id, mut nc) in configs.into_iter().enumerate() {
            if nc.tick != tick {
                return Err(SimError::TickMismatch(id));
            }
            nc.rng_seed = derive_seed(cfg.seed, id as u64, "node");
            let node = Node::new(mac_of(id), authority.enroll(ip_of(id)), authority.verifier(), nc)
                .map_err(|source| SimError::Config { id, source })?;
            behaviors.push(Some(Box::new(Benign(node))));
        }
        let n = graph.len();
        let edge_birth = graph.edges().into_iter().map(|e| (e, SimTime::ZERO)).collect();
        let mut world = SimWorld {
            tick,
            authority,
            ever_edges: graph.edges().into_iter().collect(),
            edge_birth,
            behaviors,
            ip_index: (0..n).map(|i| (ip_of(i), i)).collect(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX, "medium")),
            churn_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX, "churn")),
            tunnels: BTreeMap::new(),
            tx: vec![Vec::new(); n],
            relay_counts: BTreeMap::new(),
            originations: BTreeMap::new(),
            accept_count: BTreeMap::new(),
            acceptors: BTreeMap::new(),
            accept_hops: BTreeMap::new(),
            notifications: Vec::new(),
            rekey_log: Vec::new(),
            samples: Vec::new(),
            fabricated_benign: BTreeSet::new(),
            fabricated_adversarial: BTreeSet::new(),
            violations: Vec::new(),
            frames_delivered: 0,
            frames_lost: 0,
            churn_flips: 0,
            graph,
            cfg,
        };
        world.push(SimTime::ZERO, EventKind::TickAll);
        world.schedule_churn();
        Ok(world)
    }

    fn push(&mut self, at: SimTime, kind: EventKind) {
        self.queue.push(Event {
            at,
            seq: self.next_seq,
            kind,
        });
        self.next_seq += 1;
    }

    fn schedule_churn(&mut self) {
        if let MobilityModel::RandomEdgeChurn { rate } = self.cfg.mobility {
            if rate > 0.0 {
                let u: f64 = self.churn_rng.gen_range(f64::EPSILON..1.0);
                let dt = SimDuration::from_secs_f64(-u.ln() / rate).max(SimDuration(1));
                self.push(self.now + dt, EventKind::Churn);
            }
        }
    }

    pub fn authority(&self) -> &Authority {
        &self.authority
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    fn behavior(&self, id: NodeId) -> &dyn Behavior {
        self.behaviors[id].as_deref().expect("behavior present")
    }

    fn behavior_mut(&mut self, id: NodeId) -> &mut Box<dyn Behavior> {
        self.behaviors[id].as_mut().expect("behavior present")
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.behavior(id).node()
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.behavior_mut(id).node_mut()
    }

    pub fn is_adversary(&self, id: NodeId) -> bool {
        self.behavior(id).adversary().is_some()
    }

    pub fn adversary_kind(&self, id: NodeId) -> Option<&AdversaryKind> {
        self.behavior(id).adversary()
    }

    pub fn id_of(&self, ip: Ipv4Addr) -> Option<NodeId> {
        self.ip_index.get(&ip).copied()
    }

    pub fn benign_ids(&self) -> Vec<NodeId> {
        (0..self.len()).filter(|&i| !self.is_adversary(i)).collect()
    }

    /// Replaces node `id`'s behavior. The node keeps its identity and state.
    pub fn inject_adversary(&mut self, id: NodeId, kind: AdversaryKind) -> Result<(), SimError> {
        if id >= self.len() {
            return Err(SimError::UnknownNode(id));
        }
        if let AdversaryKind::ColluderPair { partner } = kind {
            if partner >= self.len() {
                return Err(SimError::UnknownNode(partner));
            }
            if partner == id {
                return Err(SimError::SelfPartner(id));
            }
        }
        let node = self.behaviors[id].take().expect("behavior present").into_node();
        let seed = derive_seed(self.cfg.seed, id as u64, "adversary");
        let mut adv = Adversary::new(node, id, kind.clone(), seed);
        if let AdversaryKind::ColluderPair { partner } = kind {
            let key = (id.min(partner), id.max(partner));
            let tunnel = self.tunnels.entry(key).or_default().clone();
            adv = adv.with_tunnel(tunnel, ip_of(partner));
        }
        self.behaviors[id] = Some(Box::new(adv));
        Ok(())
    }

    pub fn tx_log(&self, id: NodeId) -> &[TxRecord] {
        &self.tx[id]
    }

    pub fn notifications(&self) -> &[NotificationRecord] {
        &self.notifications
    }

    pub fn rekey_log(&self) -> &[(SimTime, NodeId, NodeEvent)] {
        &self.rekey_log
    }

    /// LSUs originated so far: (originator, seq) → (node, time).
    pub fn originations(&self) -> &BTreeMap<(Ipv4Addr, u32), (NodeId, SimTime)> {
        &self.originations
    }

    /// Accepting nodes and hop index per LSU (requires `record_acceptors`).
    pub fn acceptors(&self) -> &BTreeMap<(Ipv4Addr, u32), BTreeMap<NodeId, u8>> {
        &self.acceptors
    }

    pub fn samples(&self) -> &[NodeSample] {
        &self.samples
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn fabricated_with_benign_endpoint(&self) -> &BTreeSet<(Ipv4Addr, Ipv4Addr)> {
        &self.fabricated_benign
    }

    pub fn fabricated_adversarial(&self) -> &BTreeSet<(Ipv4Addr, Ipv4Addr)> {
        &self.fabricated_adversarial
    }

    /// Processes the next event. Returns its time, or `None` if idle.
    pub fn step(&mut self) -> Option<SimTime> {
        let ev = self.queue.pop()?;
        debug_assert!(ev.at >= self.now, "time went backwards");
        self.now = ev.at;
        match ev.kind {
            EventKind::TickAll => self.tick_all(),
            EventKind::Deliver { to, from, frame } => self.deliver(to, from, frame),
            EventKind::Churn => {
                self.churn();
                self.schedule_churn();
            }
        }
        Some(self.now)
    }

    /// Runs every event scheduled at or before `end`.
    pub fn run_until(&mut self, end: SimTime) {
        while self.queue.peek().is_some_and(|e| e.at <= end) {
            self.step();
        }
        self.now = self.now.max(end);
    }

    fn tick_all(&mut self) {
        let now = self.now;
        for id in 0..self.len() {
            let frames = self.behavior_mut(id).tick(now);
            self.drain_events(id);
            if !frames.is_empty() && self.cfg.check_invariants && !self.is_adversary(id) && self.node(id).is_silent() {
                self.violations.push(format!("t={now}: node {id} transmitted while re-keying"));
            }
            for f in frames {
                self.transmit(id, f);
            }
        }
        if now.0.is_multiple_of(self.cfg.sample_interval.0) && now > SimTime::ZERO {
            self.sample();
        }
        self.push(now + self.tick, EventKind::TickAll);
    }

    fn transmit(&mut self, from: NodeId, frame: RawFrame) {
        let rec = match decode(&frame.payload) {
            Ok(Packet::Hello(_)) => TxRecord {
                at: self.now,
                tag: Some(crate::wire::TAG_HELLO),
                originator: None,
                seq: None,
                ttl: None,
            },
            Ok(Packet::Lsu(p)) => TxRecord {
                at: self.now,
                tag: Some(crate::wire::TAG_LSU),
                originator: Some(p.originator_ip),
                seq: Some(p.seq),
                ttl: Some(p.ttl),
            },
            Ok(Packet::Pkd(p)) => TxRecord {
                at: self.now,
                tag: Some(crate::wire::TAG_PKD),
                originator: Some(p.originator_ip),
                seq: Some(p.seq),
                ttl: Some(p.ttl),
            },
            Err(_) => TxRecord {
                at: self.now,
                tag: None,
                originator: None,
                seq: None,
                ttl: None,
            },
        };
        if let (Some(tag), Some(o), Some(s)) = (rec.tag, rec.originator, rec.seq) {
            if o != ip_of(from) && !self.is_adversary(from) {
                let c = self.relay_counts.entry((from, tag, o, s)).or_default();
                *c += 1;
                if *c > 1 && self.cfg.check_invariants {
                    self.violations
                        .push(format!("t={}: node {from} relayed ({o}, {s}) twice", self.now));
                }
            }
        }
        self.tx[from].push(rec);
        let at = self.now + self.cfg.latency;
        let neighbors: Vec<NodeId> = self.graph.neighbors(from).collect();
        for to in neighbors {
            if self.cfg.loss > 0.0 && self.rng.gen::<f64>() < self.cfg.loss {
                self.frames_lost += 1;
                continue;
            }
            self.push(
                at,
                EventKind::Deliver {
                    to,
                    from,
                    frame: frame.clone(),
                },
            );
        }
    }

    fn deliver(&mut self, to: NodeId, from: NodeId, frame: RawFrame) {
        self.frames_delivered += 1;
        let audit = self.is_adversary(from);
        let before = audit.then(|| self.node(to).state_digest());
        let now = self.now;
        self.behavior_mut(to).deliver(&frame, now);
        let events = self.node_mut(to).take_events();
        let notified = events.iter().find_map(|e| match e {
            NodeEvent::Notification(n) => Some(n.kind),
            _ => None,
        });
        if let Some(kind) = notified {
            let after = audit.then(|| self.node(to).state_digest());
            self.notifications.push(NotificationRecord {
                at: now,
                receiver: to,
                sender: from,
                kind,
                before,
                after,
            });
        }
        self.record_events(to, events);
    }

    fn drain_events(&mut self, id: NodeId) {
        let events = self.node_mut(id).take_events();
        self.record_events(id, events);
    }

    fn record_events(&mut self, id: NodeId, events: Vec<NodeEvent>) {
        for e in events {
            match e {
                NodeEvent::LsuOriginated { seq } => {
                    self.originations.insert((ip_of(id), seq), (id, self.now));
                }
                NodeEvent::LsuAccepted {
                    originator,
                    seq,
                    hops,
                    ..
                } => {
                    *self.accept_count.entry((originator, seq)).or_default() += 1;
                    *self.accept_hops.entry(hops).or_default() += 1;
                    if self.cfg.record_acceptors {
                        self.acceptors
                            .entry((originator, seq))
                            .or_default()
                            .insert(id, hops);
                    }
                }
                NodeEvent::RekeyStarted | NodeEvent::RekeyCompleted { .. } => {
                    self.rekey_log.push((self.now, id, e));
                }
                NodeEvent::PkdOriginated { .. }
                | NodeEvent::PkdAccepted { .. }
                | NodeEvent::Notification(_) => {}
            }
        }
    }

    fn churn(&mut self) {
        let n = self.len();
        if n < 2 {
            return;
        }
        for _ in 0..16 {
            let a = self.churn_rng.gen_range(0..n);
            let b = self.churn_rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let e = (a.min(b), a.max(b));
            if self.graph.has_edge(a, b) {
                self.graph.remove_edge(a, b);
                if !self.graph.is_connected() {
                    self.graph.add_edge(a, b);
                    continue;
                }
                self.edge_birth.remove(&e);
            } else {
                self.graph.add_edge(a, b);
                self.edge_birth.insert(e, self.now);
                self.ever_edges.insert(e);
            }
            self.churn_flips += 1;
            return;
        }
    }

    fn endpoint_is_benign(&self, ip: Ipv4Addr) -> bool {
        self.id_of(ip).is_some_and(|i| !self.is_adversary(i))
    }

    fn is_true_edge(&self, a: Ipv4Addr, b: Ipv4Addr) -> bool {
        match (self.id_of(a), self.id_of(b)) {
            (Some(x), Some(y)) => self.graph.has_edge(x, y),
            _ => false,
        }
    }

    fn ever_existed(&self, a: Ipv4Addr, b: Ipv4Addr) -> bool {
        match (self.id_of(a), self.id_of(b)) {
            (Some(x), Some(y)) => self.ever_edges.contains(&(x.min(y), x.max(y))),
            _ => false,
        }
    }

    /// Compares `id`'s confirmed links with the ground-truth edges between
    /// nodes of its true zone. Recall leaves out edges younger than the
    /// fresh-link grace period.
    pub fn topology_accuracy(&self, id: NodeId) -> Accuracy {
        let node = self.node(id);
        let ball = self.graph.ball(id, u32::from(node.config().radius));
        let mut zone_edges = BTreeSet::new();
        let mut recall_edges = BTreeSet::new();
        for (a, b) in self.graph.edges() {
            if ball.contains(&a) && ball.contains(&b) {
                zone_edges.insert(edge(ip_of(a), ip_of(b)));
                let born = self.edge_birth.get(&(a, b)).copied().unwrap_or(SimTime::ZERO);
                if self.now.saturating_sub(born) >= self.cfg.fresh_link_grace {
                    recall_edges.insert(edge(ip_of(a), ip_of(b)));
                }
            }
        }
        let mut acc = Accuracy {
            precision: 1.0,
            recall: 1.0,
            confirmed: 0,
            true_links: recall_edges.len(),
            fabricated_benign: Vec::new(),
            adversarial_pairs: Vec::new(),
            fabricated_adversarial: Vec::new(),
        };
        let mut counted = 0usize;
        let mut correct = 0usize;
        let mut recalled = 0usize;
        for l in node.lsdb().confirmed_links() {
            let (a, b) = l.endpoints;
            acc.confirmed += 1;
            let exists = self.is_true_edge(a, b);
            let real = exists || self.ever_existed(a, b);
            if recall_edges.contains(&(a, b)) {
                recalled += 1;
            }
            if !self.endpoint_is_benign(a) && !self.endpoint_is_benign(b) {
                acc.adversarial_pairs.push((a, b));
                if !real {
                    acc.fabricated_adversarial.push((a, b));
                }
                continue;
            }
            counted += 1;
            if zone_edges.contains(&(a, b)) {
                correct += 1;
            }
            if !real {
                acc.fabricated_benign.push((a, b));
            }
        }
        if counted > 0 {
            acc.precision = correct as f64 / counted as f64;
        }
        if !recall_edges.is_empty() {
            acc.recall = recalled as f64 / recall_edges.len() as f64;
        }
        acc
    }

    fn sample(&mut self) {
        let t = self.now.as_secs_f64();
        for id in 0..self.len() {
            let benign = !self.is_adversary(id);
            if self.cfg.check_invariants {
                if let Err(e) = self.node(id).lsdb().check_invariants() {
                    self.violations.push(format!("t={t}: node {id}: {e}"));
                }
            }
            if !benign && !self.cfg.keep_samples {
                continue;
            }
            let acc = self.topology_accuracy(id);
            if benign {
                self.fabricated_benign.extend(acc.fabricated_benign.iter().copied());
                self.fabricated_adversarial
                    .extend(acc.fabricated_adversarial.iter().copied());
            }
            if self.cfg.keep_samples {
                let node = self.node(id);
                let c = node.counters();
                self.samples.push(NodeSample {
                    record: "sample",
                    t,
                    node: id,
                    ip: ip_of(id),
                    role: self.adversary_kind(id).map_or("benign", AdversaryKind::label),
                    precision: acc.precision,
                    recall: acc.recall,
                    confirmed: acc.confirmed,
                    true_links: acc.true_links,
                    fabricated_benign: acc.fabricated_benign.len(),
                    fabricated_adversarial: acc.fabricated_adversarial.len(),
                    neighbors: node.nlp().len(),
                    keys: node.key_store().len(),
                    frames_sent: c.frames_sent,
                    lsu_accepted: c.lsu_accepted,
                    discards: c.discards.clone(),
                    sched: node.scheduler().counters().clone(),
                });
            }
        }
    }

    /// Final summary at the current time.
    pub fn summary(&mut self) -> Summary {
        let mut s = Summary::new_record();
        s.scenario = self.cfg.name.clone();
        s.seed = self.cfg.seed;
        s.duration_s = self.now.as_secs_f64();
        s.nodes = self.len();
        s.edges = self.graph.edge_count();
        let benign = self.benign_ids();
        let mut precisions = Vec::new();
        let mut recalls = Vec::new();
        for &id in &benign {
            let acc = self.topology_accuracy(id);
            self.fabricated_benign.extend(acc.fabricated_benign.iter().copied());
            self.fabricated_adversarial
                .extend(acc.fabricated_adversarial.iter().copied());
            precisions.push(acc.precision);
            recalls.push(acc.recall);
        }
        let mean = |v: &[f64]| if v.is_empty() { 1.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let min = |v: &[f64]| v.iter().copied().fold(1.0, f64::min);
        s.benign_mean_precision = mean(&precisions);
        s.benign_mean_recall = mean(&recalls);
        s.benign_min_precision = min(&precisions);
        s.benign_min_recall = min(&recalls);
        s.fabricated_links_with_benign_endpoint = self.fabricated_benign.len();
        s.fabricated_adversarial_links = self.fabricated_adversarial.len();
        for id in 0..self.len() {
            if let Some(k) = self.adversary_kind(id) {
                s.adversaries.insert(id, k.label());
            }
            let node = self.node(id);
            let c = node.counters();
            s.frames_sent += self.tx[id].len() as u64;
            s.lsu_originated += c.lsu_originated;
            s.lsu_accepted += c.lsu_accepted;
            s.pkd_accepted += c.pkd_accepted;
            s.relayed += c.relayed;
            s.rekeys += c.rekeys;
            for (r, n) in &c.discards {
                *s.discards.entry(*r).or_default() += n;
            }
            for (k, n) in &c.notifications {
                *s.notifications.entry(*k).or_default() += n;
            }
            let sc = node.scheduler().counters();
            s.sched_served += sc.served.values().sum::<u64>();
            s.sched_dropped_full += sc.dropped_full.values().sum::<u64>();
            s.sched_dropped_starved += sc.dropped_starved.values().sum::<u64>();
        }
        s.frames_delivered = self.frames_delivered;
        s.frames_lost = self.frames_lost;
        s.accept_hops = self.accept_hops.clone();
        for key in self.originations.keys() {
            let reach = self.accept_count.get(key).copied().unwrap_or(0);
            *s.lsu_reach.entry(reach).or_default() += 1;
        }
        s.churn_flips = self.churn_flips;
        s.invariant_violations = self.violations.len();
        s
    }

    pub fn discards(&self, id: NodeId, r: DiscardReason) -> u64 {
        self.node(id).counters().discarded(r)
    }
}
