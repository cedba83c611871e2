//! Metric records emitted by the simulator.
//!
//! Output is line-delimited JSON: one `sample` record per node per sampling
//! interval, then one `summary` record. Every map is ordered and every value
//! is derived from simulated state only, so identical runs serialize to
//! identical bytes.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::engine::DiscardReason;
use crate::nlp::NotificationKind;
use crate::sched::SchedCounters;
use crate::sim::graph::NodeId;

/// Confirmed-link quality of one node against ground truth within its true
/// zone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Accuracy {
    pub precision: f64,
    pub recall: f64,
    pub confirmed: usize,
    pub true_links: usize,
    /// Confirmed links that never existed in the ground-truth graph, with at
    /// least one benign endpoint. Stale links left by churn are not counted.
    pub fabricated_benign: Vec<(Ipv4Addr, Ipv4Addr)>,
    /// Confirmed links whose endpoints are both adversaries, fabricated or
    /// not. Excluded from precision.
    pub adversarial_pairs: Vec<(Ipv4Addr, Ipv4Addr)>,
    /// Subset of `adversarial_pairs` that never existed in ground truth.
    pub fabricated_adversarial: Vec<(Ipv4Addr, Ipv4Addr)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeSample {
    #[serde(rename = "type")]
    pub record: &'static str,
    pub t: f64,
    pub node: NodeId,
    pub ip: Ipv4Addr,
    pub role: &'static str,
    pub precision: f64,
    pub recall: f64,
    pub confirmed: usize,
    pub true_links: usize,
    pub fabricated_benign: usize,
    pub fabricated_adversarial: usize,
    pub neighbors: usize,
    pub keys: usize,
    pub frames_sent: u64,
    pub lsu_accepted: u64,
    pub discards: BTreeMap<DiscardReason, u64>,
    pub sched: SchedCounters,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    #[serde(rename = "type")]
    pub record: &'static str,
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub nodes: usize,
    pub edges: usize,
    pub adversaries: BTreeMap<NodeId, &'static str>,
    pub benign_mean_precision: f64,
    pub benign_mean_recall: f64,
    pub benign_min_precision: f64,
    pub benign_min_recall: f64,
    /// Distinct fabricated links with a benign endpoint ever confirmed by a
    /// benign node, over all samples and the final state.
    pub fabricated_links_with_benign_endpoint: usize,
    /// Distinct fabricated links between two adversaries ever confirmed by a
    /// benign node.
    pub fabricated_adversarial_links: usize,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_lost: u64,
    pub lsu_originated: u64,
    pub lsu_accepted: u64,
    pub pkd_accepted: u64,
    pub relayed: u64,
    pub discards: BTreeMap<DiscardReason, u64>,
    pub notifications: BTreeMap<NotificationKind, u64>,
    pub sched_served: u64,
    pub sched_dropped_full: u64,
    pub sched_dropped_starved: u64,
    /// Acceptances by hop index `i`.
    pub accept_hops: BTreeMap<u8, u64>,
    /// Number of LSUs by count of accepting nodes.
    pub lsu_reach: BTreeMap<usize, u64>,
    pub rekeys: u64,
    pub churn_flips: u64,
    pub invariant_violations: usize,
}

impl Summary {
    pub fn new_record() -> Self {
        Summary {
            record: "summary",
            ..Summary::default()
        }
    }
}

/// Writes samples then the summary as JSON lines.
pub fn write_jsonl(mut w: impl Write, samples: &[NodeSample], summary: &Summary) -> io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut w, summary)?;
    w.write_all(b"\n")?;
    Ok(())
}
