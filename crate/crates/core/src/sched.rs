//! Anti-clogging scheduler for inbound control traffic.
//!
//! Each neighbor MAC gets its own bounded FIFO. Neighbors are ranked into
//! priority classes by their measured rate (lowest rate, highest priority);
//! every round each class serves its queues round-robin, one packet per queue
//! per pass, for as many passes as the class quantum allows.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::time::{SimDuration, SimTime};
use crate::wire::MacAddr;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedConfigError {
    #[error("need exactly one more quantum than rate band boundaries ({quanta} quanta, {bands} bands)")]
    ClassCount { quanta: usize, bands: usize },
    #[error("quanta must be positive and strictly decreasing")]
    Quanta,
    #[error("rate band boundaries must be positive and strictly increasing")]
    Bands,
    #[error("queue capacity must be positive")]
    Capacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedConfig {
    /// Upper rate bounds (packets/s) of classes `0..C-1`; the last class is
    /// unbounded.
    pub band_bounds: Vec<f64>,
    pub quanta: Vec<usize>,
    pub queue_cap: usize,
    pub starvation_timeout: SimDuration,
}

impl Default for SchedConfig {
    fn default() -> Self {
        SchedConfig {
            band_bounds: vec![16.0, 32.0, 64.0],
            quanta: vec![8, 4, 2, 1],
            queue_cap: 64,
            starvation_timeout: SimDuration::from_secs(20),
        }
    }
}

impl SchedConfig {
    pub fn validate(&self) -> Result<(), SchedConfigError> {
        if self.quanta.len() != self.band_bounds.len() + 1 {
            return Err(SchedConfigError::ClassCount {
                quanta: self.quanta.len(),
                bands: self.band_bounds.len(),
            });
        }
        if self.quanta.contains(&0) || self.quanta.windows(2).any(|w| w[0] <= w[1]) {
            return Err(SchedConfigError::Quanta);
        }
        if self.band_bounds.iter().any(|&b| b <= 0.0 || !b.is_finite())
            || self.band_bounds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(SchedConfigError::Bands);
        }
        if self.queue_cap == 0 {
            return Err(SchedConfigError::Capacity);
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.quanta.len()
    }

    pub fn class_for(&self, rate: f64) -> usize {
        self.band_bounds
            .iter()
            .position(|&hi| rate < hi)
            .unwrap_or(self.band_bounds.len())
    }

    pub fn classes(&self) -> Vec<PriorityClass> {
        (0..self.class_count())
            .map(|i| PriorityClass {
                class_index: i,
                rate_band: (
                    if i == 0 { 0.0 } else { self.band_bounds[i - 1] },
                    self.band_bounds.get(i).copied().unwrap_or(f64::INFINITY),
                ),
                quantum: self.quanta[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityClass {
    pub class_index: usize,
    /// Half-open `[lo, hi)` in packets/s.
    pub rate_band: (f64, f64),
    pub quantum: usize,
}

#[derive(Debug, Clone)]
struct Pending<T> {
    item: T,
    enqueued_at: SimTime,
}

#[derive(Debug, Clone)]
pub struct NeighborQueue<T> {
    pub mac: MacAddr,
    pending: VecDeque<Pending<T>>,
    pub assigned_class: usize,
}

impl<T> NeighborQueue<T> {
    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[derive(Debug)]
pub enum Enqueue<T> {
    Queued,
    /// The queue was full; the returned oldest item was dropped to make room.
    DroppedFull(T),
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SchedCounters {
    pub served_per_class: Vec<u64>,
    pub served: BTreeMap<MacAddr, u64>,
    pub dropped_full: BTreeMap<MacAddr, u64>,
    pub dropped_starved: BTreeMap<MacAddr, u64>,
}

#[derive(Debug, Clone)]
pub struct Scheduler<T> {
    cfg: SchedConfig,
    queues: BTreeMap<MacAddr, NeighborQueue<T>>,
    last_served: Vec<Option<MacAddr>>,
    counters: SchedCounters,
}

impl<T> Scheduler<T> {
    pub fn new(cfg: SchedConfig) -> Result<Self, SchedConfigError> {
        cfg.validate()?;
        let c = cfg.class_count();
        Ok(Scheduler {
            cfg,
            queues: BTreeMap::new(),
            last_served: vec![None; c],
            counters: SchedCounters {
                served_per_class: vec![0; c],
                ..Default::default()
            },
        })
    }

    pub fn config(&self) -> &SchedConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &SchedCounters {
        &self.counters
    }

    pub fn queue(&self, mac: MacAddr) -> Option<&NeighborQueue<T>> {
        self.queues.get(&mac)
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(|q| q.len()).sum()
    }

    pub fn enqueue(&mut self, mac: MacAddr, item: T, now: SimTime) -> Enqueue<T> {
        let cap = self.cfg.queue_cap;
        let q = self.queues.entry(mac).or_insert_with(|| NeighborQueue {
            mac,
            pending: VecDeque::new(),
            assigned_class: 0,
        });
        let dropped = if q.pending.len() >= cap {
            q.pending.pop_front()
        } else {
            None
        };
        q.pending.push_back(Pending {
            item,
            enqueued_at: now,
        });
        match dropped {
            Some(p) => {
                *self.counters.dropped_full.entry(mac).or_default() += 1;
                Enqueue::DroppedFull(p.item)
            }
            None => Enqueue::Queued,
        }
    }

    /// Reclassifies all queues with `rate_of` and serves one round. Returns
    /// `(source, item)` in service order.
    pub fn run_round(&mut self, rate_of: impl Fn(MacAddr) -> f64) -> Vec<(MacAddr, T)> {
        for q in self.queues.values_mut() {
            q.assigned_class = self.cfg.class_for(rate_of(q.mac));
        }
        let mut out = Vec::new();
        for class in 0..self.cfg.class_count() {
            let members: Vec<MacAddr> = self
                .queues
                .values()
                .filter(|q| q.assigned_class == class && !q.is_empty())
                .map(|q| q.mac)
                .collect();
            if members.is_empty() {
                continue;
            }
            let start = match self.last_served[class] {
                Some(last) => members.iter().position(|&m| m > last).unwrap_or(0),
                None => 0,
            };
            let order: Vec<MacAddr> = members[start..]
                .iter()
                .chain(&members[..start])
                .copied()
                .collect();
            for _ in 0..self.cfg.quanta[class] {
                let mut any = false;
                for &mac in &order {
                    let q = self.queues.get_mut(&mac).expect("member exists");
                    if let Some(p) = q.pending.pop_front() {
                        any = true;
                        self.last_served[class] = Some(mac);
                        self.counters.served_per_class[class] += 1;
                        *self.counters.served.entry(mac).or_default() += 1;
                        out.push((mac, p.item));
                    }
                }
                if !any {
                    break;
                }
            }
        }
        self.queues.retain(|_, q| !q.is_empty());
        out
    }

    /// Removes items queued longer than the starvation timeout.
    pub fn drop_starved(&mut self, now: SimTime) -> Vec<(MacAddr, T)> {
        let limit = self.cfg.starvation_timeout;
        let mut out = Vec::new();
        for q in self.queues.values_mut() {
            while let Some(p) = q.pending.front() {
                if now.saturating_sub(p.enqueued_at) > limit {
                    let p = q.pending.pop_front().expect("front exists");
                    *self.counters.dropped_starved.entry(q.mac).or_default() += 1;
                    out.push((q.mac, p.item));
                } else {
                    break;
                }
            }
        }
        self.queues.retain(|_, q| !q.is_empty());
        out
    }
}
