//! Trajectory sampling: pick random waypoints, order them with an exact
//! open-path TSP, stitch the shortest paths together and reject anything
//! longer than 40 m or 16 steps.

mod tsp;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_synth::Split;
use crate::io::read_jsonl;
use crate::nav_graph::{NavGraph, NodeId, LENGTH_TOLERANCE};
use crate::seed::rng_for;
use crate::{Error, Result};

pub use tsp::{
    solve_by_enumeration, solve_held_karp, tsp_order, TspTour, WaypointDistances, MAX_ENUMERATION_WAYPOINTS,
    MAX_WAYPOINTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_id: String,
    pub nodes: Vec<NodeId>,
    pub length_m: f64,
    pub steps: usize,
    #[serde(default)]
    pub pre_explore: bool,
}

impl Trajectory {
    /// Builds a trajectory from a node walk, checking adjacency.
    pub fn from_nodes(graph: &NavGraph, env_id: &str, nodes: Vec<NodeId>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidTrajectory("trajectory has no nodes".into()));
        }
        for &n in &nodes {
            if !graph.contains(n) {
                return Err(Error::InvalidTrajectory(format!("node {n} is not in the graph")));
            }
        }
        let length_m = graph.path_length(&nodes).ok_or_else(|| {
            Error::InvalidTrajectory(format!("consecutive nodes of {nodes:?} are not all adjacent"))
        })?;
        Ok(Self {
            env_id: env_id.to_string(),
            steps: nodes.len() - 1,
            nodes,
            length_m,
            pre_explore: false,
        })
    }

    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn goal(&self) -> NodeId {
        *self.nodes.last().expect("non-empty trajectory")
    }

    /// Adjacency, stored length and step count against `graph`.
    pub fn validate(&self, graph: &NavGraph) -> Result<()> {
        let rebuilt = Self::from_nodes(graph, &self.env_id, self.nodes.clone())?;
        if (rebuilt.length_m - self.length_m).abs() > LENGTH_TOLERANCE {
            return Err(Error::InvalidTrajectory(format!(
                "stored length {} differs from recomputed {}",
                self.length_m, rebuilt.length_m
            )));
        }
        if rebuilt.steps != self.steps {
            return Err(Error::InvalidTrajectory(format!(
                "stored steps {} differ from node count {}",
                self.steps,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    pub fn within_limits(&self, config: &SampleConfig) -> bool {
        self.steps <= config.max_steps && self.length_m <= config.max_length_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub waypoints: usize,
    pub max_length_m: f64,
    pub max_steps: usize,
    pub per_env_cap: usize,
    pub seed: u64,
    /// Sampling attempts per environment, as a multiple of the cap.
    pub attempts_per_path: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            waypoints: 3,
            max_length_m: 40.0,
            max_steps: 16,
            per_env_cap: 3000,
            seed: 0,
            attempts_per_path: 4,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints < 2 || self.waypoints > MAX_WAYPOINTS || self.per_env_cap == 0 {
            return Err(Error::Domain(format!("invalid sampling configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleOutcome {
    Accepted(Trajectory),
    Rejected { steps: usize, length_m: f64 },
}

/// Draws `config.waypoints` distinct panos uniformly, visits them in TSP
/// order along shortest paths and applies the length/step filters.
pub fn sample_trajectory<R: Rng>(
    graph: &NavGraph,
    env_id: &str,
    config: &SampleConfig,
    rng: &mut R,
) -> Result<SampleOutcome> {
    let ids: Vec<NodeId> = graph.node_ids().collect();
    if ids.len() < config.waypoints {
        return Err(Error::Domain(format!(
            "graph has {} nodes, fewer than {} waypoints",
            ids.len(),
            config.waypoints
        )));
    }
    let picks: Vec<NodeId> = rand::seq::index::sample(rng, ids.len(), config.waypoints)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    let tour = tsp_order(graph, &picks)?;

    let mut nodes = vec![tour.order[0]];
    for leg in tour.order.windows(2) {
        let path = graph
            .shortest_path(leg[0], leg[1])?
            .ok_or(Error::Unreachable { from: leg[0], to: leg[1] })?;
        // the leg starts where the previous one ended
        nodes.extend_from_slice(&path.nodes[1..]);
    }
    let trajectory = Trajectory::from_nodes(graph, env_id, nodes)?;
    Ok(if trajectory.within_limits(config) {
        SampleOutcome::Accepted(trajectory)
    } else {
        SampleOutcome::Rejected {
            steps: trajectory.steps,
            length_m: trajectory.length_m,
        }
    })
}

/// A graph to sample from, with its environment id and split.
#[derive(Debug, Clone, Copy)]
pub struct EnvGraph<'a> {
    pub env_id: &'a str,
    pub split: Split,
    pub graph: &'a NavGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSample {
    pub env_id: String,
    pub trajectories: Vec<Trajectory>,
    pub attempts: usize,
}

/// Samples one environment until the cap is reached or the attempt budget
/// runs out. The random stream is keyed by `(seed, env_id)`.
pub fn sample_env(env: EnvGraph<'_>, config: &SampleConfig) -> Result<EnvSample> {
    config.validate()?;
    let mut out = EnvSample {
        env_id: env.env_id.to_string(),
        trajectories: Vec::new(),
        attempts: 0,
    };
    if env.graph.node_count() < config.waypoints {
        return Ok(out);
    }
    if !env.graph.is_connected() {
        return Err(Error::InvalidGraph(format!("graph of {} is disconnected", env.env_id)));
    }
    let mut rng = rng_for(config.seed, &["sample", env.env_id]);
    let budget = config.per_env_cap.saturating_mul(config.attempts_per_path.max(1));
    while out.trajectories.len() < config.per_env_cap && out.attempts < budget {
        out.attempts += 1;
        if let SampleOutcome::Accepted(t) = sample_trajectory(env.graph, env.env_id, config, &mut rng)? {
            out.trajectories.push(t);
        }
    }
    Ok(out)
}

/// Samples every environment (in id order) and concatenates the results.
pub fn sample_dataset(envs: &[EnvGraph<'_>], config: &SampleConfig) -> Result<Vec<EnvSample>> {
    if envs.is_empty() {
        return Err(Error::Domain("no environments to sample".into()));
    }
    let mut sorted = envs.to_vec();
    sorted.sort_by(|a, b| a.env_id.cmp(b.env_id));
    sorted.par_iter().map(|env| sample_env(*env, config)).collect()
}

/// Sampling restricted to evaluation splits (val-unseen and test), with
/// every trajectory tagged as pre-exploration data.
pub fn pre_exploration_sample(envs: &[EnvGraph<'_>], config: &SampleConfig) -> Result<Vec<EnvSample>> {
    let eval: Vec<EnvGraph<'_>> = envs.iter().copied().filter(|e| e.split.is_evaluation()).collect();
    if eval.is_empty() {
        return Ok(Vec::new());
    }
    let mut samples = sample_dataset(&eval, config)?;
    for sample in &mut samples {
        for t in &mut sample.trajectories {
            t.pre_explore = true;
        }
    }
    Ok(samples)
}

pub fn flatten(samples: Vec<EnvSample>) -> Vec<Trajectory> {
    samples.into_iter().flat_map(|s| s.trajectories).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub count: usize,
    pub mean_steps: f64,
    pub mean_length_m: f64,
    pub per_env: BTreeMap<String, usize>,
}

pub fn dataset_stats(trajectories: &[Trajectory]) -> SampleStats {
    let count = trajectories.len();
    let mut per_env = BTreeMap::new();
    for t in trajectories {
        *per_env.entry(t.env_id.clone()).or_insert(0) += 1;
    }
    let (steps, length) = trajectories
        .iter()
        .fold((0.0, 0.0), |(s, l), t| (s + t.steps as f64, l + t.length_m));
    let n = count.max(1) as f64;
    SampleStats {
        count,
        mean_steps: steps / n,
        mean_length_m: length / n,
        per_env,
    }
}

/// Loads a trajectory JSONL file and revalidates every record against its
/// environment's graph.
pub fn load_trajectories<'a>(
    path: &Path,
    graph_for: impl Fn(&str) -> Option<&'a NavGraph>,
) -> Result<Vec<Trajectory>> {
    let trajectories: Vec<Trajectory> = read_jsonl(path)?;
    for t in &trajectories {
        let graph = graph_for(&t.env_id)
            .ok_or_else(|| Error::InvalidTrajectory(format!("no graph for environment {}", t.env_id)))?;
        t.validate(graph)?;
    }
    Ok(trajectories)
}
