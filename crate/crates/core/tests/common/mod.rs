//! Reference implementations used as test oracles. Nothing here calls into
//! the library's own hashing or path code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use sha2::{Digest as _, Sha256};

/// `H^n(x)` with SHA-256 applied directly.
pub fn sha_iter(x: [u8; 32], n: u32) -> [u8; 32] {
    let mut cur = x;
    for _ in 0..n {
        cur = Sha256::digest(cur).into();
    }
    cur
}

/// True iff `(ttl, hops)` sits at some hop index `i` in `1..=r` of a chain
/// anchored at `anchor`.
pub fn chain_consistent(r: u8, ttl: u8, hops: [u8; 32], anchor: [u8; 32]) -> bool {
    ttl < r && sha_iter(hops, u32::from(ttl)) == anchor
}

pub type Adj = BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>>;

fn bfs_dist(adj: &Adj, src: Ipv4Addr) -> BTreeMap<Ipv4Addr, u32> {
    let mut d = BTreeMap::new();
    d.insert(src, 0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in adj.get(&u).into_iter().flatten() {
            if !d.contains_key(&v) {
                d.insert(v, d[&u] + 1);
                q.push_back(v);
            }
        }
    }
    d
}

/// Enumerates every shortest path from `src` to `dst` and returns the
/// lexicographically smallest one.
pub fn smallest_shortest_path(adj: &Adj, src: Ipv4Addr, dst: Ipv4Addr) -> Option<Vec<Ipv4Addr>> {
    let ds = bfs_dist(adj, src);
    let dd = bfs_dist(adj, dst);
    let total = *ds.get(&dst)?;
    let mut all = Vec::new();
    let mut path = vec![src];
    fn walk(
        adj: &Adj,
        dd: &BTreeMap<Ipv4Addr, u32>,
        dst: Ipv4Addr,
        path: &mut Vec<Ipv4Addr>,
        all: &mut Vec<Vec<Ipv4Addr>>,
    ) {
        let u = *path.last().unwrap();
        if u == dst {
            all.push(path.clone());
            return;
        }
        for &v in adj.get(&u).into_iter().flatten() {
            if dd.get(&v).is_some_and(|&x| x + 1 == dd[&u]) {
                path.push(v);
                walk(adj, dd, dst, path, all);
                path.pop();
            }
        }
    }
    walk(adj, &dd, dst, &mut path, &mut all);
    debug_assert!(all.iter().all(|p| p.len() as u32 == total + 1));
    all.into_iter().min()
}
