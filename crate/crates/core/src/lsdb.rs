//! Zone-scoped link state database with two-sided link confirmation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkReport {
    pub reporter: Ipv4Addr,
    pub peer: Ipv4Addr,
    pub seq: u32,
    pub reported_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfirmedLink {
    /// Ordered (low, high).
    pub endpoints: (Ipv4Addr, Ipv4Addr),
    pub confirmed_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OriginatorRecord {
    pub ip: Ipv4Addr,
    pub highest_seq: u32,
    pub last_update: SimTime,
    unreachable_since: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Fresh,
    Duplicate,
}

/// Deterministic export: sorted confirmed edges and per-originator sequence
/// numbers. Contains no timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LsdbSnapshot {
    pub confirmed: Vec<(Ipv4Addr, Ipv4Addr)>,
    pub originators: Vec<(Ipv4Addr, u32)>,
}

pub fn edge(a: Ipv4Addr, b: Ipv4Addr) -> (Ipv4Addr, Ipv4Addr) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
pub struct LinkStateDatabase {
    confirm_ls: SimDuration,
    originators: BTreeMap<Ipv4Addr, OriginatorRecord>,
    reports: BTreeMap<Ipv4Addr, BTreeMap<Ipv4Addr, LinkReport>>,
    confirmed: BTreeMap<(Ipv4Addr, Ipv4Addr), ConfirmedLink>,
}

impl LinkStateDatabase {
    pub fn new(confirm_ls: SimDuration) -> Self {
        LinkStateDatabase {
            confirm_ls,
            originators: BTreeMap::new(),
            reports: BTreeMap::new(),
            confirmed: BTreeMap::new(),
        }
    }

    fn has_report(&self, reporter: Ipv4Addr, peer: Ipv4Addr) -> bool {
        self.reports
            .get(&reporter)
            .is_some_and(|m| m.contains_key(&peer))
    }

    /// Stores a validated full-state report from `originator`.
    pub fn ingest_report(
        &mut self,
        originator: Ipv4Addr,
        seq: u32,
        links: &[Ipv4Addr],
        now: SimTime,
    ) -> Ingest {
        if let Some(rec) = self.originators.get(&originator) {
            if seq <= rec.highest_seq {
                return Ingest::Duplicate;
            }
        }
        self.originators.insert(
            originator,
            OriginatorRecord {
                ip: originator,
                highest_seq: seq,
                last_update: now,
                unreachable_since: self
                    .originators
                    .get(&originator)
                    .and_then(|r| r.unreachable_since),
            },
        );
        let new: BTreeMap<Ipv4Addr, LinkReport> = links
            .iter()
            .filter(|&&p| p != originator)
            .map(|&peer| {
                (
                    peer,
                    LinkReport {
                        reporter: originator,
                        peer,
                        seq,
                        reported_at: now,
                    },
                )
            })
            .collect();
        let old = self.reports.insert(originator, new).unwrap_or_default();
        for peer in old.keys() {
            if !links.contains(peer) {
                self.confirmed.remove(&edge(originator, *peer));
            }
        }
        for &peer in links {
            if peer != originator && self.has_report(peer, originator) {
                self.confirmed
                    .entry(edge(originator, peer))
                    .or_insert(ConfirmedLink {
                        endpoints: edge(originator, peer),
                        confirmed_at: now,
                    });
            }
        }
        Ingest::Fresh
    }

    fn remove_report(&mut self, reporter: Ipv4Addr, peer: Ipv4Addr) {
        if let Some(m) = self.reports.get_mut(&reporter) {
            m.remove(&peer);
        }
        self.confirmed.remove(&edge(reporter, peer));
    }

    fn remove_originator_reports(&mut self, originator: Ipv4Addr) -> usize {
        let Some(m) = self.reports.remove(&originator) else {
            return 0;
        };
        for peer in m.keys() {
            self.confirmed.remove(&edge(originator, *peer));
        }
        m.len()
    }

    /// Drops one-sided reports older than the confirmLS timeout.
    pub fn expire_unconfirmed(&mut self, now: SimTime) -> usize {
        let mut doomed = Vec::new();
        for (reporter, m) in &self.reports {
            for r in m.values() {
                if now.saturating_sub(r.reported_at) > self.confirm_ls
                    && !self.has_report(r.peer, *reporter)
                {
                    doomed.push((*reporter, r.peer));
                }
            }
        }
        for (a, b) in &doomed {
            self.remove_report(*a, *b);
        }
        doomed.len()
    }

    /// Drops every report of originators not refreshed within `max_age`.
    pub fn flush_stale(&mut self, now: SimTime, max_age: SimDuration) -> usize {
        let stale: Vec<Ipv4Addr> = self
            .originators
            .values()
            .filter(|r| now.saturating_sub(r.last_update) > max_age)
            .map(|r| r.ip)
            .collect();
        stale
            .into_iter()
            .map(|ip| self.remove_originator_reports(ip))
            .sum()
    }

    /// Removes reports of originators farther than `radius` confirmed hops
    /// from `self_ip`, and of originators unreachable for longer than
    /// confirmLS. Returns the number of reports removed.
    pub fn prune_out_of_zone(&mut self, self_ip: Ipv4Addr, radius: u8, now: SimTime) -> usize {
        let dist = self.distances_from(self_ip);
        let originators: Vec<Ipv4Addr> = self.reports.keys().copied().collect();
        let mut removed = 0;
        for o in originators {
            match dist.get(&o) {
                Some(&d) if d <= u32::from(radius) => {
                    if let Some(rec) = self.originators.get_mut(&o) {
                        rec.unreachable_since = None;
                    }
                }
                Some(_) => removed += self.remove_originator_reports(o),
                None => {
                    let since = self
                        .originators
                        .get_mut(&o)
                        .map(|rec| *rec.unreachable_since.get_or_insert(now))
                        .unwrap_or(now);
                    if now.saturating_sub(since) > self.confirm_ls {
                        removed += self.remove_originator_reports(o);
                    }
                }
            }
        }
        removed
    }

    /// Forgets everything about `originator`, including its sequence floor.
    /// Used when the originator re-keys.
    pub fn reset_originator(&mut self, originator: Ipv4Addr) {
        self.remove_originator_reports(originator);
        self.originators.remove(&originator);
    }

    pub fn adjacency(&self) -> BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>> {
        let mut adj: BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>> = BTreeMap::new();
        for &(a, b) in self.confirmed.keys() {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        }
        adj
    }

    /// Hop distances over confirmed links.
    pub fn distances_from(&self, src: Ipv4Addr) -> BTreeMap<Ipv4Addr, u32> {
        bfs(&self.adjacency(), src)
    }

    pub fn distance(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Option<u32> {
        self.distances_from(src).get(&dst).copied()
    }

    /// Shortest confirmed-link path; among equal-length paths the
    /// lexicographically smallest address sequence.
    pub fn route(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Option<Vec<Ipv4Addr>> {
        if src == dst {
            return Some(vec![src]);
        }
        let adj = self.adjacency();
        let to_dst = bfs(&adj, dst);
        let mut d = *to_dst.get(&src)?;
        let mut path = vec![src];
        let mut cur = src;
        while d > 0 {
            cur = *adj[&cur]
                .iter()
                .find(|n| to_dst.get(n) == Some(&(d - 1)))
                .expect("bfs predecessor exists");
            path.push(cur);
            d -= 1;
        }
        Some(path)
    }

    pub fn is_confirmed(&self, a: Ipv4Addr, b: Ipv4Addr) -> bool {
        self.confirmed.contains_key(&edge(a, b))
    }

    pub fn confirmed_links(&self) -> impl Iterator<Item = &ConfirmedLink> {
        self.confirmed.values()
    }

    pub fn reports(&self) -> impl Iterator<Item = &LinkReport> {
        self.reports.values().flat_map(|m| m.values())
    }

    pub fn originator(&self, ip: Ipv4Addr) -> Option<&OriginatorRecord> {
        self.originators.get(&ip)
    }

    /// Originators that currently have reports stored.
    pub fn live_originators(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.reports.keys().copied()
    }

    pub fn snapshot(&self) -> LsdbSnapshot {
        LsdbSnapshot {
            confirmed: self.confirmed.keys().copied().collect(),
            originators: self
                .originators
                .values()
                .map(|r| (r.ip, r.highest_seq))
                .collect(),
        }
    }

    /// Checks the internal confirmation invariant; returns a description of
    /// the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        for &(a, b) in self.confirmed.keys() {
            if !self.has_report(a, b) || !self.has_report(b, a) {
                return Err(format!("confirmed link {a}-{b} lacks a constituent report"));
            }
        }
        for (reporter, m) in &self.reports {
            for r in m.values() {
                if r.peer == *reporter {
                    return Err(format!("self-report by {reporter}"));
                }
                if self.has_report(r.peer, *reporter) && !self.is_confirmed(*reporter, r.peer) {
                    return Err(format!("mutual reports {reporter}-{} unconfirmed", r.peer));
                }
            }
        }
        Ok(())
    }
}

fn bfs(adj: &BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>>, src: Ipv4Addr) -> BTreeMap<Ipv4Addr, u32> {
    let mut dist = BTreeMap::new();
    dist.insert(src, 0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        let du = dist[&u];
        for &v in adj.get(&u).into_iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(du + 1);
                q.push_back(v);
            }
        }
    }
    dist
}
