//! Neighbor Lookup Protocol: MAC↔IP bindings learned from overheard frames,
//! discrepancy notifications, per-neighbor rate estimates and lost-neighbor
//! expiry.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::crypto::SignatureVerifier;
use crate::keystore::KeyStore;
use crate::time::{SimDuration, SimTime};
use crate::wire::{signable_bytes, HelloPacket, MacAddr, Packet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationKind {
    /// A known neighbor used an IP address different from its recorded one.
    IpChanged,
    /// Two neighbors used the same IP address.
    DuplicateIp,
    /// A frame carried the receiving node's own MAC address.
    SelfMacSpoofed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NlpNotification {
    pub kind: NotificationKind,
    pub offending_mac: MacAddr,
    pub offending_ip: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub first_heard: SimTime,
    pub last_heard: SimTime,
    /// EWMA value as of `rate_at`.
    pub rate_estimate: f64,
    pub rate_at: SimTime,
    pub hello_verified: bool,
}

impl NeighborEntry {
    fn decayed_rate(&self, now: SimTime, half_life: SimDuration) -> f64 {
        let dt = now.saturating_sub(self.rate_at).as_secs_f64();
        self.rate_estimate * (-dt / half_life.as_secs_f64()).exp2()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NlpConfig {
    pub rate_half_life: SimDuration,
    pub lost_neighbor: SimDuration,
}

#[derive(Debug, Clone)]
pub struct NeighborTable {
    cfg: NlpConfig,
    entries: BTreeMap<MacAddr, NeighborEntry>,
    by_ip: BTreeMap<Ipv4Addr, MacAddr>,
    expired: Vec<Ipv4Addr>,
}

impl NeighborTable {
    pub fn new(cfg: NlpConfig) -> Self {
        NeighborTable {
            cfg,
            entries: BTreeMap::new(),
            by_ip: BTreeMap::new(),
            expired: Vec::new(),
        }
    }

    pub fn config(&self) -> NlpConfig {
        self.cfg
    }

    fn is_stale(&self, e: &NeighborEntry, now: SimTime) -> bool {
        now.saturating_sub(e.last_heard) > self.cfg.lost_neighbor
    }

    fn remove(&mut self, mac: MacAddr) -> Option<NeighborEntry> {
        let e = self.entries.remove(&mac)?;
        if self.by_ip.get(&e.ip) == Some(&mac) {
            self.by_ip.remove(&e.ip);
        }
        Some(e)
    }

    fn expire_if_stale(&mut self, mac: MacAddr, now: SimTime) {
        if let Some(e) = self.entries.get(&mac) {
            if self.is_stale(e, now) {
                let e = self.remove(mac).expect("entry present");
                self.expired.push(e.ip);
            }
        }
    }

    fn bump_rate(&mut self, mac: MacAddr, now: SimTime) {
        let hl = self.cfg.rate_half_life;
        if let Some(e) = self.entries.get_mut(&mac) {
            // Increment of ln2/h makes the steady-state value equal the
            // arrival rate for inter-arrival gaps well below the half-life.
            e.rate_estimate = e.decayed_rate(now, hl) + std::f64::consts::LN_2 / hl.as_secs_f64();
            e.rate_at = now;
        }
    }

    /// Records an overheard frame from (`src_mac`, `ip`).
    ///
    /// On a notification the binding is left untouched (apart from charging
    /// the rate of an already-known sender) and the caller must drop the
    /// packet.
    pub fn observe_frame(
        &mut self,
        src_mac: MacAddr,
        ip: Ipv4Addr,
        now: SimTime,
        self_mac: MacAddr,
    ) -> Option<NlpNotification> {
        let notify = |kind| NlpNotification {
            kind,
            offending_mac: src_mac,
            offending_ip: ip,
        };
        if src_mac == self_mac {
            return Some(notify(NotificationKind::SelfMacSpoofed));
        }
        self.expire_if_stale(src_mac, now);
        if let Some(&holder) = self.by_ip.get(&ip) {
            if holder != src_mac {
                self.expire_if_stale(holder, now);
            }
        }
        if let Some(&holder) = self.by_ip.get(&ip) {
            if holder != src_mac {
                self.bump_rate(src_mac, now);
                return Some(notify(NotificationKind::DuplicateIp));
            }
        }
        if let Some(e) = self.entries.get(&src_mac) {
            if e.ip != ip {
                self.bump_rate(src_mac, now);
                return Some(notify(NotificationKind::IpChanged));
            }
        }
        let entry = self.entries.entry(src_mac).or_insert_with(|| NeighborEntry {
            mac: src_mac,
            ip,
            first_heard: now,
            last_heard: now,
            rate_estimate: 0.0,
            rate_at: now,
            hello_verified: false,
        });
        entry.last_heard = now;
        self.by_ip.insert(ip, src_mac);
        self.bump_rate(src_mac, now);
        None
    }

    /// Packets per second, decayed to `now`. Unknown MACs have zero rate.
    pub fn rate_of(&self, mac: MacAddr, now: SimTime) -> f64 {
        self.entries
            .get(&mac)
            .map_or(0.0, |e| e.decayed_rate(now, self.cfg.rate_half_life))
    }

    /// Removes neighbors idle for longer than the lost-neighbor timeout and
    /// returns their addresses, including those expired lazily since the
    /// previous call.
    pub fn expire_lost(&mut self, now: SimTime) -> Vec<Ipv4Addr> {
        let stale: Vec<MacAddr> = self
            .entries
            .values()
            .filter(|e| self.is_stale(e, now))
            .map(|e| e.mac)
            .collect();
        for mac in stale {
            if let Some(e) = self.remove(mac) {
                self.expired.push(e.ip);
            }
        }
        std::mem::take(&mut self.expired)
    }

    pub fn set_verified(&mut self, mac: MacAddr, verified: bool) {
        if let Some(e) = self.entries.get_mut(&mac) {
            e.hello_verified = verified;
        }
    }

    /// Clears the verified flag of whoever is bound to `ip`.
    pub fn unverify_ip(&mut self, ip: Ipv4Addr) {
        if let Some(mac) = self.by_ip.get(&ip).copied() {
            self.set_verified(mac, false);
        }
    }

    pub fn get(&self, mac: MacAddr) -> Option<&NeighborEntry> {
        self.entries.get(&mac)
    }

    pub fn mac_of(&self, ip: Ipv4Addr) -> Option<MacAddr> {
        self.by_ip.get(&ip).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Addresses of neighbors whose signed hello verified, sorted.
    pub fn verified_neighbors(&self) -> Vec<Ipv4Addr> {
        let mut v: Vec<_> = self
            .entries
            .values()
            .filter(|e| e.hello_verified)
            .map(|e| e.ip)
            .collect();
        v.sort();
        v
    }
}

/// Checks a hello's signature under the key stored for `hello.ip`.
pub fn verify_hello(hello: &HelloPacket, known_keys: &KeyStore, verifier: &impl SignatureVerifier) -> bool {
    let Some(entry) = known_keys.get(hello.ip) else {
        return false;
    };
    let Ok(msg) = signable_bytes(&Packet::Hello(hello.clone())) else {
        return false;
    };
    verifier.verify(&entry.public_key, &msg, &hello.signature)
}
