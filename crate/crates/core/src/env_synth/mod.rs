//! Procedural desk-scale environments: floorplans, pano placements, a
//! reference navigation graph, a noisy edge-probability provider and
//! synthetic panoramic features.

mod bundle;
mod features;
mod floorplan;
mod provider;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nav_graph::{NavGraph, NodeId, OccupancyGrid, PanoNode, Point3, UnionFind};
use crate::seed::rng_for;
use crate::{Error, Result};

pub use bundle::{load_environment, save_environment, EnvironmentMeta, FEATURE_MAGIC};
pub use features::{generate_features, FeatureStore, DEFAULT_FEATURE_DIM, VIEWS_PER_PANO};
pub use provider::{
    bucket_index, noisy_probability, oracle_edge_probability, BucketGrid, EdgeProbabilityProvider,
    DISTANCE_BUCKETS, HEADING_BUCKETS, NON_EDGE_PROBABILITY, PITCH_BUCKETS, REFERENCE_EDGE_PROBABILITY,
};

/// Reference edges join panos with line of sight within this range.
pub const REFERENCE_MAX_EDGE_M: f64 = 3.5;
/// Reference edges never span more than this vertical offset.
pub const REFERENCE_MAX_DZ_M: f64 = 3.0;
/// Spacing used when inserting bridge panos to connect components.
const BRIDGE_SPACING_M: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSeen => "val_seen",
            Split::ValUnseen => "val_unseen",
            Split::Test => "test",
        }
    }

    /// Splits whose environments may be pre-explored.
    pub fn is_evaluation(&self) -> bool {
        matches!(self, Split::ValUnseen | Split::Test)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val_seen" => Ok(Split::ValSeen),
            "val_unseen" => Ok(Split::ValUnseen),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    pub rooms: usize,
    pub width_m: f64,
    pub height_m: f64,
    pub cell_size: f64,
    /// Target panos per square meter of free space.
    pub pano_density: f64,
    /// Lower bound on the number of panos regardless of density.
    pub min_panos: usize,
    pub camera_height_m: f64,
    /// Uniform jitter on pano height, in meters.
    pub z_jitter_m: f64,
    pub split: Split,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            rooms: 5,
            width_m: 16.0,
            height_m: 12.0,
            cell_size: 0.25,
            pano_density: 0.2,
            min_panos: 1,
            camera_height_m: 1.5,
            z_jitter_m: 0.15,
            split: Split::Train,
        }
    }
}

impl EnvParams {
    fn validate(&self) -> Result<()> {
        let positive = [self.width_m, self.height_m, self.cell_size];
        if self.rooms == 0 || self.min_panos == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("environment parameters must be positive: {self:?}")));
        }
        if !(self.pano_density >= 0.0 && self.pano_density.is_finite()) || self.z_jitter_m < 0.0 {
            return Err(Error::Domain(format!("invalid density or jitter: {self:?}")));
        }
        Ok(())
    }

    /// Minimum distance between sampled panos.
    fn pano_spacing(&self) -> f64 {
        if self.pano_density <= 0.0 {
            return BRIDGE_SPACING_M;
        }
        (0.75 / self.pano_density.sqrt()).clamp(1.0, BRIDGE_SPACING_M)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub id: String,
    pub seed: u64,
    pub params: EnvParams,
    pub grid: OccupancyGrid,
    pub reference_graph: NavGraph,
}

impl Environment {
    pub fn panos(&self) -> &[PanoNode] {
        self.reference_graph.nodes()
    }

    pub fn split(&self) -> Split {
        self.params.split
    }

    /// Re-checks the environment invariants.
    pub fn validate(&self) -> Result<()> {
        for pano in self.panos() {
            if !self.grid.is_free_point(pano.position.xy()) {
                return Err(Error::InvalidEnvironment(format!("pano {} is not in a free cell", pano.id)));
            }
        }
        if !self.reference_graph.is_connected() {
            return Err(Error::InvalidEnvironment("reference graph is disconnected".into()));
        }
        for e in self.reference_graph.edges() {
            let (pa, pb) = (self.reference_graph.position(e.a)?, self.reference_graph.position(e.b)?);
            if e.length > REFERENCE_MAX_EDGE_M || (pa.z - pb.z).abs() > REFERENCE_MAX_DZ_M {
                return Err(Error::InvalidEnvironment(format!("reference edge ({}, {}) exceeds limits", e.a, e.b)));
            }
        }
        Ok(())
    }
}

/// Whether two panos would be joined in a reference graph.
pub fn reference_pair(grid: &OccupancyGrid, a: &Point3, b: &Point3) -> bool {
    a.distance(b) <= REFERENCE_MAX_EDGE_M
        && (a.z - b.z).abs() <= REFERENCE_MAX_DZ_M
        && grid.line_of_sight(a.xy(), b.xy())
}

fn reference_edges(grid: &OccupancyGrid, nodes: &[PanoNode]) -> Vec<(NodeId, NodeId)> {
    let mut pairs = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if reference_pair(grid, &a.position, &b.position) {
                pairs.push((a.id, b.id));
            }
        }
    }
    pairs
}

/// Generates a complete environment deterministically from `seed`.
pub fn generate_environment(id: &str, seed: u64, params: &EnvParams) -> Result<Environment> {
    params.validate()?;
    let mut rng = rng_for(seed, &["environment"]);
    let grid = floorplan::generate_floorplan(
        &floorplan::FloorplanSpec {
            rooms: params.rooms,
            width_m: params.width_m,
            height_m: params.height_m,
            cell_size: params.cell_size,
            min_room_m: 2.5,
            door_m: 1.0,
        },
        &mut rng,
    )?;

    let mut nodes = place_panos(&grid, params, &mut rng);
    let mut edges = reference_edges(&grid, &nodes);
    // each bridging round merges at least one component
    for _ in 0..=nodes.len() {
        let components = components_of(&nodes, &edges);
        if components.len() <= 1 {
            break;
        }
        bridge(&grid, params, &mut nodes, &components, &mut rng)?;
        edges = reference_edges(&grid, &nodes);
    }
    let reference_graph = NavGraph::new(nodes, edges)?;
    let env = Environment {
        id: id.to_string(),
        seed,
        params: params.clone(),
        grid,
        reference_graph,
    };
    env.validate()?;
    Ok(env)
}

fn jittered_z<R: Rng>(params: &EnvParams, rng: &mut R) -> f64 {
    if params.z_jitter_m > 0.0 {
        params.camera_height_m + rng.random_range(-params.z_jitter_m..=params.z_jitter_m)
    } else {
        params.camera_height_m
    }
}

/// Dart-throwing Poisson-disk placement over cells with free 4-neighbors.
fn place_panos<R: Rng>(grid: &OccupancyGrid, params: &EnvParams, rng: &mut R) -> Vec<PanoNode> {
    let cs = grid.cell_size();
    let free_area = grid.free_cell_count() as f64 * cs * cs;
    let target = ((params.pano_density * free_area).round() as usize).max(params.min_panos);
    let spacing = params.pano_spacing();

    let clear = |c: usize, r: usize| {
        !grid.is_blocked(c, r)
            && c > 0
            && r > 0
            && c + 1 < grid.width()
            && r + 1 < grid.height()
            && !grid.is_blocked(c - 1, r)
            && !grid.is_blocked(c + 1, r)
            && !grid.is_blocked(c, r - 1)
            && !grid.is_blocked(c, r + 1)
    };
    let mut cells: Vec<(usize, usize)> = (0..grid.height())
        .flat_map(|r| (0..grid.width()).map(move |c| (c, r)))
        .filter(|&(c, r)| clear(c, r))
        .collect();
    if cells.is_empty() {
        cells = (0..grid.height())
            .flat_map(|r| (0..grid.width()).map(move |c| (c, r)))
            .filter(|&(c, r)| !grid.is_blocked(c, r))
            .collect();
    }

    let mut nodes: Vec<PanoNode> = Vec::with_capacity(target);
    let mut attempts = 0;
    while nodes.len() < target && attempts < 60 * target {
        attempts += 1;
        let (c, r) = cells[rng.random_range(0..cells.len())];
        let [cx, cy] = grid.cell_center(c, r);
        let x = cx + rng.random_range(-0.5..0.5) * cs;
        let y = cy + rng.random_range(-0.5..0.5) * cs;
        let z = jittered_z(params, rng);
        let p = Point3::new(x, y, z);
        if nodes.iter().all(|n| n.position.horizontal_distance(&p) >= spacing) {
            nodes.push(PanoNode {
                id: nodes.len() as NodeId,
                position: p,
            });
        }
    }
    nodes
}

fn components_of(nodes: &[PanoNode], edges: &[(NodeId, NodeId)]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(nodes.len());
    for &(a, b) in edges {
        uf.union(a as usize, b as usize);
    }
    let mut groups = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    for i in 0..nodes.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
    comps.sort();
    comps
}

/// Connects the component holding pano 0 to its geodesically nearest other
/// component by dropping panos along the grid path between them, each
/// within line of sight and [`BRIDGE_SPACING_M`] of the previous one.
fn bridge<R: Rng>(
    grid: &OccupancyGrid,
    params: &EnvParams,
    nodes: &mut Vec<PanoNode>,
    components: &[Vec<usize>],
    rng: &mut R,
) -> Result<()> {
    let source: Vec<usize> = components[0].clone();
    let sources: Vec<[f64; 2]> = source.iter().map(|&i| nodes[i].position.xy()).collect();
    let field = grid.distance_field_multi(&sources)?;
    let target = components[1..]
        .iter()
        .flatten()
        .filter_map(|&i| field.at(nodes[i].position.xy()).map(|d| (d, i)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .ok_or_else(|| Error::InvalidEnvironment("panos lie in disconnected free regions".into()))?;
    let (tc, tr) = grid.cell_of(nodes[target].position.xy()).expect("pano inside grid");
    let cells = field.path_to(tc, tr).expect("target reachable");

    let start_cell = cells[0];
    let start = source
        .iter()
        .copied()
        .find(|&i| grid.cell_of(nodes[i].position.xy()) == Some(start_cell))
        .expect("path starts at a source pano");

    // waypoints: intermediate cell centers, then the target pano itself
    let mut points: Vec<[f64; 2]> = cells[1..cells.len().saturating_sub(1)]
        .iter()
        .map(|&(c, r)| grid.cell_center(c, r))
        .collect();
    points.push(nodes[target].position.xy());

    let mut last = nodes[start].position.xy();
    let mut prev: Option<[f64; 2]> = None;
    for q in points {
        let dist = (q[0] - last[0]).hypot(q[1] - last[1]);
        if !grid.line_of_sight(last, q) || dist > BRIDGE_SPACING_M {
            let place = prev.expect("consecutive path cells are mutually visible");
            let occupied = nodes
                .iter()
                .any(|n| (n.position.x - place[0]).hypot(n.position.y - place[1]) < 1e-6);
            if !occupied {
                let z = jittered_z(params, rng);
                nodes.push(PanoNode {
                    id: nodes.len() as NodeId,
                    position: Point3::new(place[0], place[1], z),
                });
            }
            last = place;
        }
        prev = Some(q);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_environment() {
        let params = EnvParams::default();
        let a = generate_environment("env", 1, &params).unwrap();
        let b = generate_environment("env", 1, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reference_graph.to_json().unwrap(), b.reference_graph.to_json().unwrap());
        let c = generate_environment("env", 2, &params).unwrap();
        assert_ne!(a.reference_graph, c.reference_graph);
    }

    #[test]
    fn single_forced_pano() {
        let params = EnvParams {
            pano_density: 0.0,
            min_panos: 1,
            ..EnvParams::default()
        };
        let env = generate_environment("solo", 3, &params).unwrap();
        assert_eq!(env.reference_graph.node_count(), 1);
        assert_eq!(env.reference_graph.edge_count(), 0);
        assert!(env.reference_graph.is_connected());
    }

    #[test]
    fn generated_environments_satisfy_invariants() {
        for seed in 0..25 {
            let params = EnvParams {
                rooms: 1 + (seed as usize % 7),
                ..EnvParams::default()
            };
            let env = generate_environment("e", seed, &params).unwrap();
            env.validate().unwrap();
            assert!(env.reference_graph.node_count() > 5, "seed {seed}");
            for e in env.reference_graph.edges() {
                assert!(e.length <= REFERENCE_MAX_EDGE_M);
            }
        }
    }

    #[test]
    fn zero_sized_params_are_rejected() {
        let params = EnvParams {
            width_m: 0.0,
            ..EnvParams::default()
        };
        assert!(generate_environment("bad", 0, &params).is_err());
    }
}
