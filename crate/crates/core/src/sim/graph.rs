//! Undirected ground-truth topology and generators.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    OutOfRange(NodeId, NodeId, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("graph needs at least one node")]
    Empty,
    #[error("grid dimensions must be positive")]
    BadGrid,
}

/// Simple undirected graph over `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Graph {
    adj: Vec<BTreeSet<NodeId>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            adj: vec![BTreeSet::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut g = Graph::empty(n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::OutOfRange(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            g.add_edge(a, b);
        }
        Ok(g)
    }

    pub fn line(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &edges)
    }

    pub fn grid(rows: usize, cols: usize) -> Result<Self, GraphError> {
        if rows == 0 || cols == 0 {
            return Err(GraphError::BadGrid);
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        Graph::from_edges(rows * cols, &edges)
    }

    /// Random spanning tree (each node attaches to a uniformly chosen earlier
    /// node in a shuffled order) plus `extra` distinct random chords.
    pub fn random_connected(n: usize, extra: usize, rng: &mut impl Rng) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut order: Vec<NodeId> = (0..n).collect();
        order.shuffle(rng);
        let mut g = Graph::empty(n);
        for i in 1..n {
            let j = rng.gen_range(0..i);
            g.add_edge(order[i], order[j]);
        }
        let max_extra = n * (n - 1) / 2 - (n - 1);
        let want = extra.min(max_extra);
        let mut added = 0;
        while added < want {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b && g.add_edge(a, b) {
                added += 1;
            }
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Returns false if the edge already existed.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        assert_ne!(a, b, "self-loop");
        let fresh = self.adj[a].insert(b);
        self.adj[b].insert(a);
        fresh
    }

    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        let had = self.adj[a].remove(&b);
        self.adj[b].remove(&a);
        had
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, a: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj[a].iter().copied()
    }

    pub fn degree(&self, a: NodeId) -> usize {
        self.adj[a].len()
    }

    /// Edges as (low, high), sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (a, ns) in self.adj.iter().enumerate() {
            for &b in ns.range(a + 1..) {
                out.push((a, b));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Hop distances from `src`; `None` for unreachable nodes.
    pub fn distances(&self, src: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.len()];
        dist[src] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in &self.adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Nodes within `radius` hops of `src`, including `src`.
    pub fn ball(&self, src: NodeId, radius: u32) -> BTreeSet<NodeId> {
        self.distances(src)
            .into_iter()
            .enumerate()
            .filter_map(|(v, d)| d.filter(|&d| d <= radius).map(|_| v))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.distances(0).iter().all(Option::is_some)
    }
}
