//! Navigation graphs over panoramic capture points, plus the geometric
//! primitives shared by the rest of the toolkit.

mod grid;
mod mst;
mod paths;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use grid::{DistanceField, GridDocument, OccupancyGrid};
pub use mst::{minimum_spanning_tree, UnionFind, WeightedEdge};
pub use paths::{ShortestPath, DISTANCE_TOLERANCE};

pub type NodeId = u32;

/// Tolerance used when checking stored edge lengths against positions.
pub const LENGTH_TOLERANCE: f64 = 1e-9;

/// A point in meters; `z` is vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn horizontal_distance(&self, other: &Point3) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Compass bearing towards `other` in radians, clockwise from +y
    /// ("north"), normalized to `[0, 2π)`.
    pub fn bearing_to(&self, other: &Point3) -> f64 {
        normalize_angle((other.x - self.x).atan2(other.y - self.y))
    }

    /// Elevation angle towards `other` in radians (positive = up).
    pub fn elevation_to(&self, other: &Point3) -> f64 {
        (other.z - self.z).atan2(self.horizontal_distance(other))
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Wraps an angle in radians into `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let wrapped = angle.rem_euclid(tau);
    // rem_euclid can round up to exactly tau for tiny negative inputs
    if wrapped >= tau {
        0.0
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanoNode {
    pub id: NodeId,
    pub position: Point3,
}

/// An undirected edge, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub length: f64,
}

/// Normalizes an unordered pair so the smaller id comes first.
pub fn edge_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Navigation graph: panos as nodes, navigability as undirected edges.
///
/// Nodes are kept sorted by id and adjacency lists sorted by neighbor id, so
/// every traversal in the crate is deterministic. Edge lengths are always
/// derived from node positions.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGraph {
    nodes: Vec<PanoNode>,
    edges: Vec<Edge>,
    index: HashMap<NodeId, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NavGraph {
    pub fn new(
        mut nodes: Vec<PanoNode>,
        pairs: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if !node.position.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "node {} has a non-finite position",
                    node.id
                )));
            }
            if index.insert(node.id, i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node id {}", node.id)));
            }
        }

        let mut keys = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            for id in [a, b] {
                if !index.contains_key(&id) {
                    return Err(Error::InvalidGraph(format!("edge endpoint {id} does not exist")));
                }
            }
            keys.insert(edge_key(a, b));
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::with_capacity(keys.len());
        for (a, b) in keys {
            let (ia, ib) = (index[&a], index[&b]);
            let length = nodes[ia].position.distance(&nodes[ib].position);
            adjacency[ia].push((ib, length));
            adjacency[ib].push((ia, length));
            edges.push(Edge { a, b, length });
        }
        // indices follow id order, so sorting by index sorts by neighbor id
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }

        Ok(Self {
            nodes,
            edges,
            index,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[PanoNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn index_of(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn node(&self, id: NodeId) -> Result<&PanoNode> {
        Ok(&self.nodes[self.index_of(id)?])
    }

    pub fn position(&self, id: NodeId) -> Result<Point3> {
        Ok(self.node(id)?.position)
    }

    /// Neighbors of `id` in ascending id order, with edge lengths.
    pub fn neighbors(&self, id: NodeId) -> Result<impl Iterator<Item = (NodeId, f64)> + '_> {
        let i = self.index_of(id)?;
        Ok(self.adjacency[i]
            .iter()
            .map(move |&(j, len)| (self.nodes[j].id, len)))
    }

    pub fn degree(&self, id: NodeId) -> Result<usize> {
        Ok(self.adjacency[self.index_of(id)?].len())
    }

    pub fn edge_length(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let ia = *self.index.get(&a)?;
        let ib = *self.index.get(&b)?;
        self.adjacency[ia]
            .binary_search_by_key(&ib, |&(j, _)| j)
            .ok()
            .map(|pos| self.adjacency[ia][pos].1)
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edge_length(a, b).is_some()
    }

    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges.iter().map(|e| (e.a, e.b)).collect()
    }

    /// A copy of this graph with `extra` edges added.
    pub fn with_edges(&self, extra: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        let pairs: Vec<_> = self.edge_set().into_iter().chain(extra).collect();
        Self::new(self.nodes.clone(), pairs)
    }

    pub(crate) fn adjacency_by_index(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn mean_degree(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.nodes.len() as f64
    }

    /// Connected components as sorted id lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = vec![false; self.nodes.len()];
        let mut components = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut members = Vec::new();
            while let Some(i) = stack.pop() {
                members.push(self.nodes[i].id);
                for &(j, _) in &self.adjacency[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }
        components
    }

    /// True iff the graph has at most one connected component.
    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    x: n.position.x,
                    y: n.position.y,
                    z: n.position.z,
                })
                .collect(),
            edges: self.edges.iter().map(|e| [e.a, e.b]).collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        let nodes = doc
            .nodes
            .iter()
            .map(|n| PanoNode {
                id: n.id,
                position: Point3::new(n.x, n.y, n.z),
            })
            .collect();
        let graph = Self::new(nodes, doc.edges.iter().map(|e| (e[0], e[1])))?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    /// Re-checks the structural invariants (lengths against positions).
    pub fn validate(&self) -> Result<()> {
        for e in &self.edges {
            let expected = self.position(e.a)?.distance(&self.position(e.b)?);
            if (expected - e.length).abs() > LENGTH_TOLERANCE {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) length {} disagrees with positions ({expected})",
                    e.a, e.b, e.length
                )));
            }
        }
        Ok(())
    }
}

/// On-disk form: `{nodes:[{id,x,y,z}], edges:[[i,j]]}`. Lengths are not
/// stored; they are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<[NodeId; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}
