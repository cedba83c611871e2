//! Bounded FIFO store of learned public keys.

use std::net::Ipv4Addr;

use indexmap::IndexMap;

use crate::crypto::PublicKey;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyEntry {
    pub ip: Ipv4Addr,
    pub public_key: PublicKey,
    /// Highest LSU/PKD sequence number accepted under this key, if any.
    pub highest_seq: Option<u32>,
}

/// Outcome of [`KeyStore::insert`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Insert {
    New { evicted: Option<KeyEntry> },
    Replaced { old: KeyEntry },
}

/// At most one key per address; once full, the oldest insertion is evicted.
#[derive(Debug, Clone)]
pub struct KeyStore {
    capacity: usize,
    entries: IndexMap<Ipv4Addr, KeyEntry>,
}

impl KeyStore {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "key store capacity must be positive");
        KeyStore {
            capacity,
            entries: IndexMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, ip: Ipv4Addr) -> Option<&KeyEntry> {
        self.entries.get(&ip)
    }

    pub fn contains_key(&self, key: &PublicKey) -> bool {
        self.entries.values().any(|e| e.public_key == *key)
    }

    /// Inserts or replaces the key for `ip`. A replacement moves the entry to
    /// the back of the eviction order.
    pub fn insert(&mut self, ip: Ipv4Addr, public_key: PublicKey, seq: Option<u32>) -> Insert {
        let entry = KeyEntry {
            ip,
            public_key,
            highest_seq: seq,
        };
        if let Some(old) = self.entries.shift_remove(&ip) {
            self.entries.insert(ip, entry);
            return Insert::Replaced { old };
        }
        let evicted = if self.entries.len() >= self.capacity {
            self.entries.shift_remove_index(0).map(|(_, e)| e)
        } else {
            None
        };
        self.entries.insert(ip, entry);
        Insert::New { evicted }
    }

    pub fn note_seq(&mut self, ip: Ipv4Addr, seq: u32) {
        if let Some(e) = self.entries.get_mut(&ip) {
            e.highest_seq = Some(e.highest_seq.map_or(seq, |h| h.max(seq)));
        }
    }

    pub fn remove(&mut self, ip: Ipv4Addr) -> Option<KeyEntry> {
        self.entries.shift_remove(&ip)
    }

    /// Entries in eviction order (oldest first).
    pub fn iter(&self) -> impl Iterator<Item = &KeyEntry> {
        self.entries.values()
    }
}
