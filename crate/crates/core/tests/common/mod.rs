#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vln_core::env_synth::{generate_environment, generate_features, EnvParams, Environment, FeatureStore};
use vln_core::episode_sim::{Action, Simulator};
use vln_core::il_pipeline::{make_episodes, Episode, InstructionConfig};
use vln_core::traj_sampler::{sample_dataset, EnvGraph, SampleConfig};
use vln_core::{NavGraph, NodeId, PanoNode, Point3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected random graph: points in a square, edges between points closer
/// than `radius`, plus a chain through all nodes in id order.
pub fn random_graph(rng: &mut impl Rng, n: usize, side: f64, radius: f64) -> NavGraph {
    let nodes: Vec<PanoNode> = (0..n)
        .map(|i| PanoNode {
            id: i as NodeId * 3 + 1,
            position: Point3::new(rng.random_range(0.0..side), rng.random_range(0.0..side), rng.random_range(0.0..0.5)),
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || nodes[i].position.distance(&nodes[j].position) < radius {
                pairs.push((nodes[i].id, nodes[j].id));
            }
        }
    }
    NavGraph::new(nodes, pairs).unwrap()
}

/// All-pairs shortest distances, indexed like `graph.nodes()`.
pub fn floyd_warshall(graph: &NavGraph) -> Vec<Vec<f64>> {
    let n = graph.node_count();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in graph.edges() {
        let (a, b) = (graph.index_of(e.a).unwrap(), graph.index_of(e.b).unwrap());
        d[a][b] = e.length;
        d[b][a] = e.length;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Smallest-id neighbour of `from` that lies on some shortest path to `to`.
pub fn oracle_first_step(graph: &NavGraph, d: &[Vec<f64>], from: NodeId, to: NodeId) -> Option<NodeId> {
    if from == to {
        return None;
    }
    let (f, t) = (graph.index_of(from).unwrap(), graph.index_of(to).unwrap());
    let mut options: Vec<NodeId> = graph
        .neighbors(from)
        .unwrap()
        .filter(|&(v, w)| close(w + d[graph.index_of(v).unwrap()][t], d[f][t]))
        .map(|(v, _)| v)
        .collect();
    options.sort();
    options.first().copied()
}

/// Brute-force expert: returns the action and the reference index matched
/// (if the agent is on the reference).
pub fn oracle_expert(
    graph: &NavGraph,
    d: &[Vec<f64>],
    gt: &[NodeId],
    gt_length: f64,
    current: NodeId,
    last_match: Option<usize>,
) -> (Action, Option<usize>) {
    let hits: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == current).collect();
    if !hits.is_empty() {
        let k = last_match
            .and_then(|l| hits.iter().copied().find(|&i| i > l))
            .unwrap_or(hits[0]);
        let action = if k + 1 < gt.len() { Action::Move(gt[k + 1]) } else { Action::Stop };
        return (action, Some(k));
    }
    let idx = |n: NodeId| graph.index_of(n).unwrap();
    let goal = *gt.last().unwrap();
    let shortest = d[idx(gt[0])][idx(goal)];
    if (gt_length - shortest).abs() <= 1e-6 {
        let step = oracle_first_step(graph, d, current, goal);
        return (step.map_or(Action::Stop, Action::Move), None);
    }
    let c = idx(current);
    let best = gt.iter().map(|&g| d[c][idx(g)]).fold(f64::INFINITY, f64::min);
    let k = (0..gt.len()).rev().find(|&k| close(d[c][idx(gt[k])], best)).unwrap();
    let step = oracle_first_step(graph, d, current, gt[k]);
    (step.map_or(Action::Stop, Action::Move), None)
}

/// Synthetic environments with instructed episodes, split per environment
/// into a training head and an evaluation tail.
pub struct Bench {
    pub envs: Vec<Environment>,
    pub features: Vec<FeatureStore>,
    pub train: Vec<Episode>,
    pub eval: Vec<Episode>,
}

impl Bench {
    pub fn new(n_envs: u64, per_env: usize, train_per_env: usize, dim: usize, seed: u64) -> Self {
        let envs: Vec<Environment> = (0..n_envs)
            .map(|s| generate_environment(&format!("env_{s:02}"), s, &EnvParams::default()).unwrap())
            .collect();
        let features = envs.iter().map(|e| generate_features(e, seed, dim).unwrap()).collect();
        let graphs: Vec<EnvGraph> =
            envs.iter().map(|e| EnvGraph { env_id: &e.id, split: e.split(), graph: &e.reference_graph }).collect();
        let config = SampleConfig { per_env_cap: per_env, seed, ..SampleConfig::default() };
        let samples = sample_dataset(&graphs, &config).unwrap();
        let (mut train, mut eval) = (Vec::new(), Vec::new());
        for (sample, env) in samples.iter().zip(&envs) {
            assert_eq!(sample.trajectories.len(), per_env, "environment {} under-sampled", env.id);
            let episodes =
                make_episodes(&env.reference_graph, &sample.trajectories, &InstructionConfig::default(), seed).unwrap();
            let (a, b) = episodes.split_at(train_per_env);
            train.extend_from_slice(a);
            eval.extend_from_slice(b);
        }
        Self { envs, features, train, eval }
    }

    pub fn sims(&self) -> BTreeMap<String, Simulator<'_>> {
        self.envs
            .iter()
            .zip(&self.features)
            .map(|(e, f)| (e.id.clone(), Simulator::new(&e.id, &e.reference_graph, f)))
            .collect()
    }

    pub fn graph(&self, env_id: &str) -> &NavGraph {
        &self.envs.iter().find(|e| e.id == env_id).unwrap().reference_graph
    }
}
