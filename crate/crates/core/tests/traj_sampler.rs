mod common;

use common::{close, floyd_warshall, random_graph, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use vln_core::env_synth::{generate_environment, EnvParams, Environment};
use vln_core::io::write_jsonl;
use vln_core::traj_sampler::*;
use vln_core::{NavGraph, NodeId};

/// Every ordering of `ids` (sorted input gives lexicographic output).
fn permutations(ids: &[NodeId]) -> Vec<Vec<NodeId>> {
    if ids.len() <= 1 {
        return vec![ids.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..ids.len() {
        let mut rest = ids.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn tour_cost(graph: &NavGraph, d: &[Vec<f64>], order: &[NodeId]) -> f64 {
    order
        .windows(2)
        .map(|w| d[graph.index_of(w[0]).unwrap()][graph.index_of(w[1]).unwrap()])
        .sum()
}

/// Lexicographically smallest optimal ordering by brute force.
fn oracle_tour(graph: &NavGraph, d: &[Vec<f64>], waypoints: &[NodeId]) -> (Vec<NodeId>, f64) {
    let mut ids = waypoints.to_vec();
    ids.sort();
    let all = permutations(&ids);
    let best = all.iter().map(|p| tour_cost(graph, d, p)).fold(f64::INFINITY, f64::min);
    let order = all.into_iter().find(|p| close(tour_cost(graph, d, p), best)).unwrap();
    (order, best)
}

fn pick(r: &mut impl Rng, graph: &NavGraph, k: usize) -> Vec<NodeId> {
    let mut ids: Vec<NodeId> = graph.node_ids().collect();
    ids.shuffle(r);
    ids.truncate(k);
    ids
}

#[test]
fn tsp_matches_enumeration_oracle() {
    let mut r = rng(11);
    for _ in 0..500 {
        let n = r.random_range(6..14);
        let graph = random_graph(&mut r, n, 10.0, 4.0);
        let d = floyd_warshall(&graph);
        let k = r.random_range(2..=MAX_ENUMERATION_WAYPOINTS.min(n));
        let waypoints = pick(&mut r, &graph, k);
        let (order, cost) = oracle_tour(&graph, &d, &waypoints);
        let tour = tsp_order(&graph, &waypoints).unwrap();
        assert!(close(tour.cost, cost), "{} vs {cost}", tour.cost);
        assert_eq!(tour.order, order);
    }
}

#[test]
fn held_karp_matches_enumeration_on_larger_sets() {
    let mut r = rng(12);
    for k in 7..=9 {
        for _ in 0..5 {
            let graph = random_graph(&mut r, 14, 10.0, 4.0);
            let d = floyd_warshall(&graph);
            let waypoints = pick(&mut r, &graph, k);
            let (order, cost) = oracle_tour(&graph, &d, &waypoints);
            let tour = tsp_order(&graph, &waypoints).unwrap();
            assert!(close(tour.cost, cost));
            assert_eq!(tour.order, order);
        }
    }
}

#[test]
fn held_karp_agrees_with_enumeration_on_small_sets() {
    let mut r = rng(13);
    for _ in 0..200 {
        let graph = random_graph(&mut r, 10, 10.0, 4.0);
        let k = r.random_range(2..=MAX_ENUMERATION_WAYPOINTS);
        let dist = WaypointDistances::compute(&graph, &pick(&mut r, &graph, k)).unwrap();
        assert_eq!(solve_held_karp(&dist), solve_by_enumeration(&dist));
    }
}

proptest! {
    #[test]
    fn tsp_ignores_waypoint_input_order(seed in 0u64..10_000, k in 2usize..7) {
        let mut r = rng(seed);
        let graph = random_graph(&mut r, 10, 10.0, 4.0);
        let mut waypoints = pick(&mut r, &graph, k);
        let a = tsp_order(&graph, &waypoints).unwrap();
        waypoints.shuffle(&mut r);
        prop_assert_eq!(a, tsp_order(&graph, &waypoints).unwrap());
    }
}

fn line(n: u32) -> NavGraph {
    let nodes = (0..n)
        .map(|i| vln_core::PanoNode { id: i, position: vln_core::Point3::new(i as f64 * 2.0, 0.0, 0.0) })
        .collect();
    NavGraph::new(nodes, (1..n).map(|i| (i - 1, i))).unwrap()
}

#[test]
fn two_waypoints_and_collinear_cases() {
    let g = line(8);
    let t = tsp_order(&g, &[6, 2]).unwrap();
    assert_eq!((t.order, t.cost), (vec![2, 6], 8.0));
    // on a line the optimum sweeps from one extreme to the other
    let t = tsp_order(&g, &[5, 1, 7, 3]).unwrap();
    assert_eq!((t.order, t.cost), (vec![1, 3, 5, 7], 12.0));
    assert!(tsp_order(&g, &[4]).is_err());
    assert!(tsp_order(&g, &[4, 4]).is_err());
}

fn envs(n: u64) -> Vec<Environment> {
    (0..n)
        .map(|s| generate_environment(&format!("env_{s:02}"), 100 + s, &EnvParams::default()).unwrap())
        .collect()
}

fn env_graphs(envs: &[Environment]) -> Vec<EnvGraph<'_>> {
    envs.iter().map(|e| EnvGraph { env_id: &e.id, split: e.split(), graph: &e.reference_graph }).collect()
}

#[test]
fn sampled_paths_respect_constraints() {
    let envs = envs(8);
    let config = SampleConfig { per_env_cap: 1500, seed: 4, ..SampleConfig::default() };
    let samples = sample_dataset(&env_graphs(&envs), &config).unwrap();
    let mut total = 0;
    for (sample, env) in samples.iter().zip(&envs) {
        assert_eq!(sample.env_id, env.id);
        assert!(sample.trajectories.len() <= config.per_env_cap);
        assert!(sample.attempts <= config.per_env_cap * config.attempts_per_path);
        assert!(sample.attempts >= sample.trajectories.len());
        for t in &sample.trajectories {
            assert!(t.steps <= 16 && t.length_m <= 40.0);
            assert_eq!(t.steps, t.nodes.len() - 1);
            assert!(t.steps >= 2, "three distinct waypoints need at least two moves");
            t.validate(&env.reference_graph).unwrap();
            assert!(!t.pre_explore);
        }
        total += sample.trajectories.len();
    }
    assert!(total >= 10_000, "only {total} samples");
    let stats = dataset_stats(&flatten(samples));
    assert_eq!(stats.count, total);
    assert_eq!(stats.per_env.values().sum::<usize>(), total);
}

#[test]
fn accepted_paths_are_optimal_tours_over_drawn_waypoints() {
    let envs = envs(4);
    let config = SampleConfig::default();
    let mut checked = 0;
    let mut r = rng(14);
    for env in &envs {
        let mut accepted = 0;
        let g = &env.reference_graph;
        let d = floyd_warshall(g);
        let ids: Vec<NodeId> = g.node_ids().collect();
        while accepted < 5 {
            let mut replay = r.clone();
            let outcome = sample_trajectory(g, &env.id, &config, &mut r).unwrap();
            let drawn: Vec<NodeId> =
                rand::seq::index::sample(&mut replay, ids.len(), 3).into_iter().map(|i| ids[i]).collect();
            let (order, cost) = oracle_tour(g, &d, &drawn);
            match outcome {
                SampleOutcome::Accepted(t) => {
                    assert!(close(t.length_m, cost));
                    assert_eq!((t.start(), t.goal()), (order[0], order[2]));
                    assert!(t.nodes.contains(&order[1]));
                    accepted += 1;
                }
                SampleOutcome::Rejected { steps, length_m } => {
                    assert!(close(length_m, cost));
                    assert!(steps > 16 || length_m > 40.0);
                }
            }
        }
        checked += accepted;
    }
    assert_eq!(checked, 20);
}

#[test]
fn sampling_is_deterministic_and_keyed_per_environment() {
    let envs = envs(3);
    let graphs = env_graphs(&envs);
    let config = SampleConfig { per_env_cap: 50, seed: 9, ..SampleConfig::default() };
    let a = sample_dataset(&graphs, &config).unwrap();
    let mut reversed = graphs.clone();
    reversed.reverse();
    assert_eq!(a, sample_dataset(&reversed, &config).unwrap());
    assert_eq!(a[1], sample_env(graphs[1], &config).unwrap());
    let other = sample_dataset(&graphs, &SampleConfig { seed: 10, ..config.clone() }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn tight_limits_exhaust_the_attempt_budget() {
    let envs = envs(1);
    let config = SampleConfig { max_steps: 2, max_length_m: 1.0, per_env_cap: 20, ..SampleConfig::default() };
    let s = sample_env(env_graphs(&envs)[0], &config).unwrap();
    assert!(s.trajectories.is_empty());
    assert_eq!(s.attempts, 80);
    assert!(SampleConfig { waypoints: 1, ..SampleConfig::default() }.validate().is_err());
    assert!(SampleConfig { per_env_cap: 0, ..SampleConfig::default() }.validate().is_err());
}

#[test]
fn pre_exploration_covers_only_evaluation_splits() {
    let envs = envs(12);
    let graphs = env_graphs(&envs);
    let config = SampleConfig { per_env_cap: 5, ..SampleConfig::default() };
    let pre = pre_exploration_sample(&graphs, &config).unwrap();
    let eval: Vec<&str> = graphs.iter().filter(|g| g.split.is_evaluation()).map(|g| g.env_id).collect();
    assert_eq!(pre.iter().map(|s| s.env_id.as_str()).collect::<Vec<_>>(), eval);
    assert!(pre.iter().flat_map(|s| &s.trajectories).all(|t| t.pre_explore));
}

#[test]
fn loading_revalidates_against_graphs() {
    let envs = envs(2);
    let samples = sample_dataset(&env_graphs(&envs), &SampleConfig { per_env_cap: 10, ..SampleConfig::default() })
        .unwrap();
    let trajs = flatten(samples);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.jsonl");
    write_jsonl(&path, &trajs).unwrap();
    let lookup = |id: &str| envs.iter().find(|e| e.id == id).map(|e| &e.reference_graph);
    assert_eq!(load_trajectories(&path, lookup).unwrap(), trajs);

    let mut broken = trajs.clone();
    broken[3].length_m += 0.5;
    write_jsonl(&path, &broken).unwrap();
    assert!(load_trajectories(&path, lookup).is_err());
    let mut broken = trajs.clone();
    broken[0].nodes.swap(0, 2);
    write_jsonl(&path, &broken).unwrap();
    assert!(load_trajectories(&path, lookup).is_err());
    assert!(load_trajectories(&path, |_| None).is_err());
}
