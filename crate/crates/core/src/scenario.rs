//! Scenario files: parsing with validation, then execution.
//!
//! A scenario is a TOML document. The grammar is documented in
//! `scenarios/README.md`; bundled scenarios live next to it and are compiled
//! into the library.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::net::Ipv4Addr;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::engine::{DiscardReason, NodeConfig, PkdMode};
use crate::nlp::NotificationKind;
use crate::sim::{
    derive_seed, ip_of, mac_of, write_jsonl, AdversaryKind, FloodPacket, Graph, HopMode,
    MobilityModel, NodeId, NodeSample, SimWorld, Summary, WorldConfig,
};
use crate::time::{SimDuration, SimTime};

pub const BUNDLED: &[(&str, &str)] = &[
    ("two_node_basic", include_str!("../scenarios/two_node_basic.toml")),
    ("single_forger", include_str!("../scenarios/single_forger.toml")),
    ("colluder_pair", include_str!("../scenarios/colluder_pair.toml")),
    ("replay", include_str!("../scenarios/replay.toml")),
    ("flooder", include_str!("../scenarios/flooder.toml")),
    ("ip_changed", include_str!("../scenarios/ip_changed.toml")),
    ("duplicate_ip", include_str!("../scenarios/duplicate_ip.toml")),
    ("self_mac_spoof", include_str!("../scenarios/self_mac_spoof.toml")),
    ("hop_extender", include_str!("../scenarios/hop_extender.toml")),
    ("carried_farther", include_str!("../scenarios/carried_farther.toml")),
    ("adversary_catalog", include_str!("../scenarios/adversary_catalog.toml")),
    ("churn", include_str!("../scenarios/churn.toml")),
    ("rekey", include_str!("../scenarios/rekey.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{origin}: {message}")]
    NoLocation { origin: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown bundled scenario {0:?}")]
    UnknownBundled(String),
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

struct Ctx<'a> {
    origin: &'a str,
    src: &'a str,
}

impl Ctx<'_> {
    fn err(&self, span: Range<usize>, message: impl fmt::Display) -> ScenarioError {
        ScenarioError::Parse {
            origin: self.origin.to_owned(),
            line: line_of(self.src, span.start),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: String,
    seed: u64,
    duration: Spanned<f64>,
    topology: Spanned<RawTopology>,
    #[serde(default)]
    node: Option<Spanned<NodeSection>>,
    #[serde(default)]
    node_override: Vec<Spanned<NodeOverride>>,
    #[serde(default)]
    adversary: Vec<Spanned<RawAdversary>>,
    #[serde(default)]
    sim: Option<Spanned<SimSection>>,
    #[serde(default)]
    expect: Option<Spanned<Expectations>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    kind: String,
    nodes: Option<usize>,
    extra_edges: Option<usize>,
    rows: Option<usize>,
    cols: Option<usize>,
    edges: Option<Vec<(NodeId, NodeId)>>,
    seed: Option<u64>,
}

/// How the ground-truth graph is built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologySpec {
    Line { nodes: usize },
    Grid { rows: usize, cols: usize },
    /// Random connected graph; `seed` defaults to the scenario seed.
    Random {
        nodes: usize,
        extra_edges: usize,
        seed: Option<u64>,
    },
    Edges {
        nodes: usize,
        edges: Vec<(NodeId, NodeId)>,
    },
}

impl TopologySpec {
    pub fn node_count(&self) -> usize {
        match self {
            TopologySpec::Line { nodes }
            | TopologySpec::Random { nodes, .. }
            | TopologySpec::Edges { nodes, .. } => *nodes,
            TopologySpec::Grid { rows, cols } => rows * cols,
        }
    }

    pub fn build(&self, scenario_seed: u64) -> Result<Graph, crate::sim::GraphError> {
        match self {
            TopologySpec::Line { nodes } => Graph::line(*nodes),
            TopologySpec::Grid { rows, cols } => Graph::grid(*rows, *cols),
            TopologySpec::Random {
                nodes,
                extra_edges,
                seed,
            } => {
                let s = seed.unwrap_or_else(|| derive_seed(scenario_seed, 0, "topology"));
                Graph::random_connected(*nodes, *extra_edges, &mut ChaCha8Rng::seed_from_u64(s))
            }
            TopologySpec::Edges { nodes, edges } => Graph::from_edges(*nodes, edges),
        }
    }
}

/// Per-node protocol settings; durations in seconds.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSection {
    radius: Option<u8>,
    lsu_period: Option<f64>,
    hello_period: Option<f64>,
    confirm_ls: Option<f64>,
    lsu_flush: Option<f64>,
    lost_neighbor: Option<f64>,
    pkd_mode: Option<String>,
    extended_pkd_radius: Option<u8>,
    rate_half_life: Option<f64>,
    keystore_capacity: Option<usize>,
    key_change_threshold: Option<f64>,
    max_key_interval: Option<f64>,
    dup_cache_age: Option<f64>,
    band_bounds: Option<Vec<f64>>,
    quanta: Option<Vec<usize>>,
    queue_cap: Option<usize>,
    starvation_timeout: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct NodeOverride {
    ids: Vec<NodeId>,
    /// Moves the node's sequence counter before the run starts.
    start_seq: Option<u32>,
    #[serde(flatten)]
    settings: BTreeMap<String, toml::Value>,
}

fn secs(v: f64, what: &str) -> Result<SimDuration, String> {
    if v.is_finite() && v >= 0.0 {
        Ok(SimDuration::from_secs_f64(v))
    } else {
        Err(format!("{what} must be a non-negative number of seconds, got {v}"))
    }
}

impl NodeSection {
    fn apply(&self, c: &mut NodeConfig) -> Result<(), String> {
        if let Some(v) = self.radius {
            c.radius = v;
        }
        let durations = [
            (self.hello_period, "hello_period", &mut c.hello_period),
            (self.confirm_ls, "confirm_ls", &mut c.confirm_ls),
            (self.lsu_flush, "lsu_flush", &mut c.lsu_flush),
            (self.lost_neighbor, "lost_neighbor", &mut c.lost_neighbor),
            (self.rate_half_life, "rate_half_life", &mut c.rate_half_life),
            (self.max_key_interval, "max_key_interval", &mut c.max_key_interval),
            (self.dup_cache_age, "dup_cache_age", &mut c.dup_cache_age),
            (
                self.starvation_timeout,
                "starvation_timeout",
                &mut c.sched.starvation_timeout,
            ),
        ];
        for (v, name, slot) in durations {
            if let Some(v) = v {
                *slot = secs(v, name)?;
            }
        }
        if let Some(m) = &self.pkd_mode {
            c.pkd_mode = match m.as_str() {
                "standalone_pkd" => PkdMode::StandalonePkd,
                "lsu_attached" => PkdMode::LsuAttached,
                other => {
                    return Err(format!(
                        "pkd_mode must be \"standalone_pkd\" or \"lsu_attached\", got {other:?}"
                    ))
                }
            };
        }
        if self.extended_pkd_radius.is_some() {
            c.extended_pkd_radius = self.extended_pkd_radius;
        }
        if let Some(v) = self.keystore_capacity {
            c.keystore_capacity = v;
        }
        if let Some(v) = self.key_change_threshold {
            c.key_change_threshold = v;
        }
        if let Some(v) = &self.band_bounds {
            c.sched.band_bounds = v.clone();
        }
        if let Some(v) = &self.quanta {
            c.sched.quanta = v.clone();
        }
        if let Some(v) = self.queue_cap {
            c.sched.queue_cap = v;
        }
        Ok(())
    }

    /// Defaults, re-derived from `lsu_period` when given, then overridden.
    fn resolve(&self, tick: SimDuration) -> Result<NodeConfig, String> {
        let mut c = match self.lsu_period {
            Some(p) => NodeConfig::with_lsu_period(secs(p, "lsu_period")?),
            None => NodeConfig::default(),
        };
        c.tick = tick;
        self.apply(&mut c)?;
        Ok(c)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdversary {
    id: NodeId,
    kind: String,
    victims: Option<Vec<NodeId>>,
    claim_node: Option<NodeId>,
    claim_ip: Option<Ipv4Addr>,
    target: Option<NodeId>,
    start: Option<f64>,
    copies: Option<u32>,
    spacing: Option<f64>,
    packet: Option<FloodPacket>,
    rate: Option<f64>,
    mode: Option<HopMode>,
    partner: Option<NodeId>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    tick: Option<f64>,
    latency: Option<f64>,
    loss: Option<f64>,
    sample_interval: Option<f64>,
    mobility: Option<MobilityModel>,
    fresh_link_grace: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstNotification {
    pub receiver: NodeId,
    pub kind: NotificationKind,
}

/// Self-check assertions evaluated against the final summary.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub min_precision: Option<f64>,
    pub min_recall: Option<f64>,
    pub min_mean_precision: Option<f64>,
    pub min_mean_recall: Option<f64>,
    pub fabricated_links_with_benign_endpoint: Option<usize>,
    pub fabricated_adversarial_links: Option<usize>,
    #[serde(default)]
    pub min_notifications: BTreeMap<NotificationKind, u64>,
    #[serde(default)]
    pub max_notifications: BTreeMap<NotificationKind, u64>,
    #[serde(default)]
    pub min_discards: BTreeMap<DiscardReason, u64>,
    pub first_notification: Option<FirstNotification>,
    /// Every notification raised by an adversary's frame left the receiver's
    /// LSDB and key store untouched.
    pub notifications_state_clean: Option<bool>,
    pub min_rekeys: Option<u64>,
    pub min_churn_flips: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub duration: SimDuration,
    pub topology: TopologySpec,
    pub node_configs: Vec<NodeConfig>,
    pub start_seq: BTreeMap<NodeId, u32>,
    pub adversaries: Vec<(NodeId, AdversaryKind)>,
    pub world: WorldConfig,
    pub expect: Expectations,
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Scenario, ScenarioError> {
        let src = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        Scenario::parse(&src, &path.display().to_string())
    }

    pub fn from_bundled(name: &str) -> Result<Scenario, ScenarioError> {
        let src = bundled(name).ok_or_else(|| ScenarioError::UnknownBundled(name.to_owned()))?;
        Scenario::parse(src, &format!("<bundled {name}>"))
    }

    /// Parses and validates; `origin` labels error messages.
    pub fn parse(src: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let ctx = Ctx { origin, src };
        let raw: RawScenario = toml::from_str(src).map_err(|e| match e.span() {
            Some(span) => ctx.err(span, e.message()),
            None => ScenarioError::NoLocation {
                origin: origin.to_owned(),
                message: e.message().to_owned(),
            },
        })?;

        let duration_span = raw.duration.span();
        let duration = secs(*raw.duration.get_ref(), "duration").map_err(|m| ctx.err(duration_span.clone(), m))?;
        if duration == SimDuration::ZERO {
            return Err(ctx.err(duration_span, "duration must be positive"));
        }

        let topo_span = raw.topology.span();
        let topology = parse_topology(raw.topology.into_inner()).map_err(|m| ctx.err(topo_span.clone(), m))?;
        let n = topology.node_count();
        if n == 0 {
            return Err(ctx.err(topo_span, "topology has no nodes"));
        }
        topology
            .build(raw.seed)
            .map_err(|e| ctx.err(topo_span.clone(), e))?;

        let mut world = WorldConfig {
            seed: raw.seed,
            name: raw.name.clone(),
            ..WorldConfig::default()
        };
        let mut tick = SimDuration::from_millis(100);
        if let Some(sim) = raw.sim {
            let span = sim.span();
            let s = sim.into_inner();
            let e = |m: String| ctx.err(span.clone(), m);
            if let Some(v) = s.tick {
                tick = secs(v, "tick").map_err(e)?;
            }
            if let Some(v) = s.latency {
                world.latency = secs(v, "latency").map_err(e)?;
            }
            if let Some(v) = s.loss {
                if !(0.0..1.0).contains(&v) {
                    return Err(e(format!("loss must lie in [0, 1), got {v}")));
                }
                world.loss = v;
            }
            if let Some(v) = s.sample_interval {
                world.sample_interval = secs(v, "sample_interval").map_err(e)?;
            }
            if let Some(v) = s.fresh_link_grace {
                world.fresh_link_grace = secs(v, "fresh_link_grace").map_err(e)?;
            }
            if let Some(m) = s.mobility {
                if let MobilityModel::RandomEdgeChurn { rate } = m {
                    if !(rate.is_finite() && rate >= 0.0) {
                        return Err(e(format!("churn rate must be non-negative, got {rate}")));
                    }
                }
                world.mobility = m;
            }
            if tick == SimDuration::ZERO {
                return Err(e("tick must be positive".into()));
            }
            if world.latency >= tick {
                return Err(e("latency must be shorter than tick".into()));
            }
            if world.sample_interval == SimDuration::ZERO || !world.sample_interval.0.is_multiple_of(tick.0) {
                return Err(e("sample_interval must be a positive multiple of tick".into()));
            }
        }

        let (base_section, base_span) = match raw.node {
            Some(s) => {
                let span = s.span();
                (s.into_inner(), span)
            }
            None => (NodeSection::default(), 0..0),
        };
        let base = base_section
            .resolve(tick)
            .map_err(|m| ctx.err(base_span.clone(), m))?;
        base.validate()
            .map_err(|e| ctx.err(base_span.clone(), format!("invalid node settings: {e}")))?;
        let mut node_configs = vec![base; n];
        let mut start_seq = BTreeMap::new();
        for o in raw.node_override {
            let span = o.span();
            let o = o.into_inner();
            let e = |m: String| ctx.err(span.clone(), m);
            let settings: NodeSection = toml::Value::Table(o.settings.into_iter().collect())
                .try_into()
                .map_err(|err: toml::de::Error| e(format!("node_override: {}", err.message())))?;
            if settings.lsu_period.is_some() {
                return Err(e("lsu_period cannot be overridden per node".into()));
            }
            for &id in &o.ids {
                if id >= n {
                    return Err(e(format!("node_override references node {id}, but the topology has {n} nodes")));
                }
                settings.apply(&mut node_configs[id]).map_err(e)?;
                node_configs[id]
                    .validate()
                    .map_err(|err| e(format!("invalid settings for node {id}: {err}")))?;
                if let Some(s) = o.start_seq {
                    start_seq.insert(id, s);
                }
            }
        }

        let mut adversaries = Vec::new();
        let mut seen = BTreeSet::new();
        for a in raw.adversary {
            let span = a.span();
            let a = a.into_inner();
            let e = |m: String| ctx.err(span.clone(), m);
            let id = a.id;
            if id >= n {
                return Err(e(format!("adversary id {id} out of range (topology has {n} nodes)")));
            }
            if !seen.insert(id) {
                return Err(e(format!("node {id} has more than one adversary entry")));
            }
            let kind = parse_adversary(&a, n).map_err(e)?;
            adversaries.push((id, kind));
        }

        let expect = match raw.expect {
            Some(x) => {
                let span = x.span();
                let x = x.into_inner();
                if let Some(f) = &x.first_notification {
                    if f.receiver >= n {
                        return Err(ctx.err(span, format!("first_notification receiver {} out of range", f.receiver)));
                    }
                }
                x
            }
            None => Expectations::default(),
        };

        Ok(Scenario {
            name: raw.name,
            description: raw.description,
            seed: raw.seed,
            duration,
            topology,
            node_configs,
            start_seq,
            adversaries,
            world,
            expect,
        })
    }

    /// The same scenario with every adversary replaced by a benign node.
    pub fn without_adversaries(&self) -> Scenario {
        Scenario {
            adversaries: Vec::new(),
            ..self.clone()
        }
    }

    /// Builds the world at time zero.
    pub fn build_world(&self, opts: &RunOptions) -> Result<SimWorld, ScenarioError> {
        let seed = opts.seed.unwrap_or(self.seed);
        let err = |m: String| ScenarioError::NoLocation {
            origin: self.name.clone(),
            message: m,
        };
        let graph = self.topology.build(seed).map_err(|e| err(e.to_string()))?;
        let world_cfg = WorldConfig {
            seed,
            check_invariants: opts.check,
            keep_samples: true,
            record_acceptors: opts.record_acceptors,
            ..self.world.clone()
        };
        let mut world = SimWorld::new(graph, self.node_configs.clone(), world_cfg).map_err(|e| err(e.to_string()))?;
        for (&id, &s) in &self.start_seq {
            world.node_mut(id).force_next_seq(s);
        }
        for (id, kind) in &self.adversaries {
            world
                .inject_adversary(*id, kind.clone())
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(world)
    }
}

fn parse_topology(t: RawTopology) -> Result<TopologySpec, String> {
    let need = |v: Option<usize>, f: &str| v.ok_or_else(|| format!("topology kind {:?} needs `{f}`", t.kind));
    let unexpected = |present: bool, f: &str| {
        if present {
            Err(format!("`{f}` does not apply to topology kind {:?}", t.kind))
        } else {
            Ok(())
        }
    };
    match t.kind.as_str() {
        "line" => {
            unexpected(t.edges.is_some() || t.rows.is_some() || t.cols.is_some() || t.extra_edges.is_some() || t.seed.is_some(), "edges/rows/cols/extra_edges/seed")?;
            Ok(TopologySpec::Line {
                nodes: need(t.nodes, "nodes")?,
            })
        }
        "grid" => {
            unexpected(t.edges.is_some() || t.nodes.is_some() || t.extra_edges.is_some() || t.seed.is_some(), "edges/nodes/extra_edges/seed")?;
            Ok(TopologySpec::Grid {
                rows: need(t.rows, "rows")?,
                cols: need(t.cols, "cols")?,
            })
        }
        "random" => {
            unexpected(t.edges.is_some() || t.rows.is_some() || t.cols.is_some(), "edges/rows/cols")?;
            Ok(TopologySpec::Random {
                nodes: need(t.nodes, "nodes")?,
                extra_edges: t.extra_edges.unwrap_or(0),
                seed: t.seed,
            })
        }
        "edges" => {
            unexpected(t.rows.is_some() || t.cols.is_some() || t.extra_edges.is_some() || t.seed.is_some(), "rows/cols/extra_edges/seed")?;
            let edges = t.edges.clone().ok_or("topology kind \"edges\" needs `edges`")?;
            let nodes = match t.nodes {
                Some(n) => n,
                None => edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0),
            };
            Ok(TopologySpec::Edges { nodes, edges })
        }
        other => Err(format!(
            "unknown topology kind {other:?} (expected line, grid, random or edges)"
        )),
    }
}

fn parse_adversary(a: &RawAdversary, n: usize) -> Result<AdversaryKind, String> {
    let node_ref = |v: NodeId, f: &str| {
        if v < n {
            Ok(v)
        } else {
            Err(format!("`{f}` references node {v}, but the topology has {n} nodes"))
        }
    };
    let start = |v: Option<f64>| secs(v.unwrap_or(0.0), "start").map(|d| SimTime(d.0));
    let allowed: &[&str] = match a.kind.as_str() {
        "link_forger" => &["victims"],
        "ip_spoofer" => &["claim_node", "claim_ip", "start"],
        "mac_spoofer" => &["target", "start"],
        "replayer" => &["copies", "spacing"],
        "flooder" => &["packet", "rate", "start"],
        "hop_extender" => &["mode"],
        "dropper" => &[],
        "colluder_pair" => &["partner"],
        other => return Err(format!("unknown adversary kind {other:?}")),
    };
    let present = [
        ("victims", a.victims.is_some()),
        ("claim_node", a.claim_node.is_some()),
        ("claim_ip", a.claim_ip.is_some()),
        ("target", a.target.is_some()),
        ("start", a.start.is_some()),
        ("copies", a.copies.is_some()),
        ("spacing", a.spacing.is_some()),
        ("packet", a.packet.is_some()),
        ("rate", a.rate.is_some()),
        ("mode", a.mode.is_some()),
        ("partner", a.partner.is_some()),
    ];
    for (f, p) in present {
        if p && !allowed.contains(&f) {
            return Err(format!("`{f}` does not apply to adversary kind {:?}", a.kind));
        }
    }
    let missing = |f: &str| format!("adversary kind {:?} needs `{f}`", a.kind);
    Ok(match a.kind.as_str() {
        "link_forger" => {
            let victims = a.victims.as_ref().ok_or_else(|| missing("victims"))?;
            let mut ips = Vec::new();
            for &v in victims {
                ips.push(ip_of(node_ref(v, "victims")?));
            }
            AdversaryKind::LinkForger { victims: ips }
        }
        "ip_spoofer" => {
            let claimed_ip = match (a.claim_node, a.claim_ip) {
                (Some(v), None) => ip_of(node_ref(v, "claim_node")?),
                (None, Some(ip)) => ip,
                _ => return Err("ip_spoofer needs exactly one of `claim_node`, `claim_ip`".into()),
            };
            AdversaryKind::IpSpoofer {
                claimed_ip,
                start: start(a.start)?,
            }
        }
        "mac_spoofer" => AdversaryKind::MacSpoofer {
            target_mac: mac_of(node_ref(a.target.ok_or_else(|| missing("target"))?, "target")?),
            start: start(a.start)?,
        },
        "replayer" => AdversaryKind::Replayer {
            copies: a.copies.unwrap_or(5),
            spacing: secs(a.spacing.unwrap_or(1.0), "spacing")?,
        },
        "flooder" => {
            let rate = a.rate.ok_or_else(|| missing("rate"))?;
            if !(rate.is_finite() && rate > 0.0) {
                return Err(format!("flooder rate must be positive, got {rate}"));
            }
            AdversaryKind::Flooder {
                packet: a.packet.unwrap_or(FloodPacket::Lsu),
                rate,
                start: start(a.start)?,
            }
        }
        "hop_extender" => AdversaryKind::HopExtender {
            mode: a.mode.ok_or_else(|| missing("mode"))?,
        },
        "dropper" => AdversaryKind::Dropper,
        "colluder_pair" => AdversaryKind::ColluderPair {
            partner: node_ref(a.partner.ok_or_else(|| missing("partner"))?, "partner")?,
        },
        _ => unreachable!("kind checked above"),
    })
}

/// Command-line style overrides for one run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub duration: Option<SimDuration>,
    /// Check protocol invariants while running.
    pub check: bool,
    pub record_acceptors: bool,
    /// Where to write the JSONL metrics.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    ScenarioError = 1,
    InvariantViolation = 2,
    AssertionFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub summary: Summary,
    pub samples: Vec<NodeSample>,
    pub violations: Vec<String>,
    pub failures: Vec<String>,
    pub status: ExitStatus,
    pub world: SimWorld,
}

impl RunReport {
    pub fn metrics_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &self.samples, &self.summary).expect("writing to memory");
        buf
    }
}

/// Runs a scenario to completion and evaluates its self-checks.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    let mut world = sc.build_world(opts)?;
    let duration = opts.duration.unwrap_or(sc.duration);
    world.run_until(SimTime(duration.0));
    let summary = world.summary();
    let violations = world.violations().to_vec();
    let failures = check_expectations(&sc.expect, &summary, &world);
    let status = if !violations.is_empty() {
        ExitStatus::InvariantViolation
    } else if !failures.is_empty() {
        ExitStatus::AssertionFailure
    } else {
        ExitStatus::Ok
    };
    let report = RunReport {
        summary,
        samples: world.samples().to_vec(),
        violations,
        failures,
        status,
        world,
    };
    if let Some(path) = &opts.out {
        fs::write(path, report.metrics_jsonl()).map_err(|source| ScenarioError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(report)
}

pub fn check_expectations(x: &Expectations, s: &Summary, world: &SimWorld) -> Vec<String> {
    let mut f = Vec::new();
    let mut at_least = |name: &str, got: f64, want: Option<f64>| {
        if let Some(w) = want {
            if got < w {
                f.push(format!("{name} = {got}, expected >= {w}"));
            }
        }
    };
    at_least("benign_min_precision", s.benign_min_precision, x.min_precision);
    at_least("benign_min_recall", s.benign_min_recall, x.min_recall);
    at_least("benign_mean_precision", s.benign_mean_precision, x.min_mean_precision);
    at_least("benign_mean_recall", s.benign_mean_recall, x.min_mean_recall);
    at_least("rekeys", s.rekeys as f64, x.min_rekeys.map(|v| v as f64));
    at_least("churn_flips", s.churn_flips as f64, x.min_churn_flips.map(|v| v as f64));
    if let Some(w) = x.fabricated_links_with_benign_endpoint {
        if s.fabricated_links_with_benign_endpoint != w {
            f.push(format!(
                "fabricated_links_with_benign_endpoint = {}, expected {w}",
                s.fabricated_links_with_benign_endpoint
            ));
        }
    }
    if let Some(w) = x.fabricated_adversarial_links {
        if s.fabricated_adversarial_links != w {
            f.push(format!(
                "fabricated_adversarial_links = {}, expected {w}",
                s.fabricated_adversarial_links
            ));
        }
    }
    for (k, &w) in &x.min_notifications {
        let got = s.notifications.get(k).copied().unwrap_or(0);
        if got < w {
            f.push(format!("notifications[{k:?}] = {got}, expected >= {w}"));
        }
    }
    for (k, &w) in &x.max_notifications {
        let got = s.notifications.get(k).copied().unwrap_or(0);
        if got > w {
            f.push(format!("notifications[{k:?}] = {got}, expected <= {w}"));
        }
    }
    for (r, &w) in &x.min_discards {
        let got = s.discards.get(r).copied().unwrap_or(0);
        if got < w {
            f.push(format!("discards[{r:?}] = {got}, expected >= {w}"));
        }
    }
    if let Some(first) = &x.first_notification {
        match world
            .notifications()
            .iter()
            .find(|n| n.receiver == first.receiver)
        {
            None => f.push(format!("node {} raised no notification", first.receiver)),
            Some(n) if n.kind != first.kind => f.push(format!(
                "first notification at node {} was {:?}, expected {:?}",
                first.receiver, n.kind, first.kind
            )),
            Some(_) => {}
        }
    }
    if x.notifications_state_clean == Some(true) {
        let dirty = world
            .notifications()
            .iter()
            .filter(|n| n.before.is_some() && n.before != n.after)
            .count();
        if dirty > 0 {
            f.push(format!("{dirty} notifications changed LSDB/key store state"));
        }
    }
    f
}
