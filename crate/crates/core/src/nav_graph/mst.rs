use std::collections::{BTreeMap, HashMap};

use super::NodeId;
use crate::{Error, Result};

/// Disjoint-set forest with path halving and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    sets: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            sets: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        self.sets -= 1;
        true
    }

    pub fn set_count(&self) -> usize {
        self.sets
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub a: NodeId,
    pub b: NodeId,
    pub weight: f64,
}

impl WeightedEdge {
    fn key(&self) -> (NodeId, NodeId) {
        super::edge_key(self.a, self.b)
    }
}

/// Kruskal's algorithm over `candidates`.
///
/// Edges are considered in `(weight, smaller id, larger id)` order, so the
/// result does not depend on the order the candidates are supplied in. The
/// returned edges are normalized to `a < b` and listed in acceptance order.
pub fn minimum_spanning_tree(
    nodes: &[NodeId],
    candidates: &[WeightedEdge],
) -> Result<Vec<WeightedEdge>> {
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut sorted: Vec<WeightedEdge> = Vec::with_capacity(candidates.len());
    for e in candidates {
        if !e.weight.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite weight on candidate edge ({}, {})",
                e.a, e.b
            )));
        }
        for id in [e.a, e.b] {
            if !index.contains_key(&id) {
                return Err(Error::UnknownNode(id));
            }
        }
        let (a, b) = e.key();
        sorted.push(WeightedEdge { a, b, weight: e.weight });
    }
    sorted.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });

    let mut uf = UnionFind::new(nodes.len());
    let mut tree = Vec::with_capacity(nodes.len().saturating_sub(1));
    for e in sorted {
        if e.a != e.b && uf.union(index[&e.a], index[&e.b]) {
            tree.push(e);
            if tree.len() + 1 == nodes.len() {
                break;
            }
        }
    }

    if uf.set_count() > 1 {
        let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for (i, &id) in nodes.iter().enumerate() {
            groups.entry(uf.find(i)).or_default().push(id);
        }
        let mut components: Vec<Vec<NodeId>> = groups
            .into_values()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        components.sort();
        return Err(Error::Disconnected { components });
    }
    Ok(tree)
}
