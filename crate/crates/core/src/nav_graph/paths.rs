use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{NavGraph, NodeId};
use crate::Result;

/// Relative tolerance used when deciding whether an edge lies on a shortest
/// path (sums of float lengths differ by rounding depending on order).
pub const DISTANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPath {
    pub nodes: Vec<NodeId>,
    pub length: f64,
}

impl ShortestPath {
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// The first move along the path, or `None` when source == destination.
    pub fn first_step(&self) -> Option<NodeId> {
        self.nodes.get(1).copied()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(super) fn dijkstra(graph: &NavGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        index: source,
    });
    while let Some(Entry { dist: d, index: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in graph.adjacency_by_index(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry { dist: nd, index: v });
            }
        }
    }
    dist
}

fn on_shortest_path(dist_u: f64, edge: f64, dist_v: f64) -> bool {
    (dist_u - (edge + dist_v)).abs() <= DISTANCE_TOLERANCE * dist_u.max(1.0)
}

impl NavGraph {
    /// Single-source shortest distances, indexed like [`NavGraph::nodes`].
    /// Unreachable nodes get `f64::INFINITY`.
    pub fn distances_from(&self, source: NodeId) -> Result<Vec<f64>> {
        Ok(dijkstra(self, self.index_of(source)?))
    }

    pub fn shortest_distance(&self, src: NodeId, dst: NodeId) -> Result<Option<f64>> {
        let dist = self.distances_from(src)?;
        let d = dist[self.index_of(dst)?];
        Ok(d.is_finite().then_some(d))
    }

    /// Minimum-length path from `src` to `dst`.
    ///
    /// Among equal-length shortest paths the lexicographically smallest node
    /// id sequence is returned: distances to `dst` are computed first and the
    /// path is then walked forward, always taking the smallest-id neighbor
    /// that stays on a shortest path. Returns `Ok(None)` when unreachable.
    /// The reported length is the left-to-right sum of the path's edges.
    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Result<Option<ShortestPath>> {
        let (s, t) = (self.index_of(src)?, self.index_of(dst)?);
        let to_dst = dijkstra(self, t);
        self.walk_shortest(s, t, &to_dst)
    }

    /// Like [`NavGraph::shortest_path`] but reuses distances to `dst` that
    /// were computed with [`NavGraph::distances_from`]`(dst)`.
    pub fn shortest_path_with(
        &self,
        src: NodeId,
        dst: NodeId,
        to_dst: &[f64],
    ) -> Result<Option<ShortestPath>> {
        let (s, t) = (self.index_of(src)?, self.index_of(dst)?);
        self.walk_shortest(s, t, to_dst)
    }

    fn walk_shortest(&self, s: usize, t: usize, to_dst: &[f64]) -> Result<Option<ShortestPath>> {
        if !to_dst[s].is_finite() {
            return Ok(None);
        }
        let mut visited = vec![false; self.node_count()];
        let mut nodes = vec![self.nodes[s].id];
        let mut length = 0.0;
        let mut u = s;
        visited[u] = true;
        while u != t {
            let (v, w) = self
                .adjacency_by_index(u)
                .iter()
                .copied()
                .find(|&(v, w)| !visited[v] && on_shortest_path(to_dst[u], w, to_dst[v]))
                .expect("a finite distance always has a successor on a shortest path");
            visited[v] = true;
            nodes.push(self.nodes[v].id);
            length += w;
            u = v;
        }
        Ok(Some(ShortestPath { nodes, length }))
    }

    /// Sum of edge lengths along `path`; `None` if a consecutive pair is not
    /// an edge.
    pub fn path_length(&self, path: &[NodeId]) -> Option<f64> {
        path.windows(2)
            .map(|w| self.edge_length(w[0], w[1]))
            .sum::<Option<f64>>()
    }
}
