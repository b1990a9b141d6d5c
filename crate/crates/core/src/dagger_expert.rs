//! Expert actions relative to a ground-truth trajectory.
//!
//! On the path the expert follows it; off the path it either heads straight
//! for the goal (when the reference is itself a shortest path) or walks back
//! to the nearest reference node.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use crate::episode_sim::{Action, EpisodeState, Simulator};
use crate::nav_graph::{NavGraph, NodeId, DISTANCE_TOLERANCE};
use crate::traj_sampler::Trajectory;
use crate::{Error, Result};

/// Absolute tolerance, in meters, for deciding that the reference path is
/// a shortest path.
pub const SHORTEST_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ExpertContext<'a> {
    pub graph: &'a NavGraph,
    pub gt: &'a Trajectory,
    pub gt_is_shortest: bool,
    // distances from every distinct reference node, indexed like graph.nodes()
    dist_from: HashMap<NodeId, Vec<f64>>,
}

impl<'a> ExpertContext<'a> {
    pub fn new(graph: &'a NavGraph, gt: &'a Trajectory) -> Result<Self> {
        gt.validate(graph)?;
        let mut dist_from = HashMap::new();
        for &n in &gt.nodes {
            if let Entry::Vacant(slot) = dist_from.entry(n) {
                slot.insert(graph.distances_from(n)?);
            }
        }
        let shortest = dist_from[&gt.goal()][graph.index_of(gt.start())?];
        let gt_is_shortest = (gt.length_m - shortest).abs() <= SHORTEST_TOLERANCE_M;
        Ok(Self { graph, gt, gt_is_shortest, dist_from })
    }

    fn distance(&self, from: NodeId, gt_node: NodeId) -> Result<f64> {
        Ok(self.dist_from[&gt_node][self.graph.index_of(from)?])
    }

    fn first_step_toward(&self, from: NodeId, to: NodeId) -> Result<Action> {
        if from == to {
            return Ok(Action::Stop);
        }
        let path = self
            .graph
            .shortest_path_with(from, to, &self.dist_from[&to])?
            .ok_or(Error::Unreachable { from, to })?;
        Ok(Action::Move(path.nodes[1]))
    }
}

/// Which branch of the expert produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertCase {
    OnPath { index: usize },
    ToGoal,
    Rejoin { index: usize },
}

/// Per-episode record of reference indices matched so far, keyed by step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpertMemory {
    matches: Vec<(usize, usize)>,
}

impl ExpertMemory {
    /// Last matched index strictly before step `t`.
    fn last_before(&self, t: usize) -> Option<usize> {
        self.matches.iter().rev().find(|&&(step, _)| step < t).map(|&(_, k)| k)
    }

    fn record(&mut self, t: usize, k: usize) {
        self.matches.retain(|&(step, _)| step < t);
        self.matches.push((t, k));
    }
}

/// Index of `node` in the reference: the first occurrence after `last`,
/// falling back to the first occurrence overall.
pub fn match_index(gt: &[NodeId], node: NodeId, last: Option<usize>) -> Option<usize> {
    let after = last.and_then(|l| (l + 1..gt.len()).find(|&i| gt[i] == node));
    after.or_else(|| gt.iter().position(|&n| n == node))
}

pub fn expert_action(ctx: &ExpertContext<'_>, state: &EpisodeState, memory: &mut ExpertMemory) -> Result<Action> {
    expert_decision(ctx, state, memory).map(|(a, _)| a)
}

pub fn expert_decision(
    ctx: &ExpertContext<'_>,
    state: &EpisodeState,
    memory: &mut ExpertMemory,
) -> Result<(Action, ExpertCase)> {
    if state.done {
        return Err(Error::InvalidAction("episode is already finished".into()));
    }
    let here = state.current_node;
    let gt = &ctx.gt.nodes;
    if let Some(k) = match_index(gt, here, memory.last_before(state.t)) {
        memory.record(state.t, k);
        let action = gt.get(k + 1).map_or(Action::Stop, |&n| Action::Move(n));
        return Ok((action, ExpertCase::OnPath { index: k }));
    }
    if ctx.gt_is_shortest {
        return Ok((ctx.first_step_toward(here, ctx.gt.goal())?, ExpertCase::ToGoal));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, &n) in gt.iter().enumerate() {
        let d = ctx.distance(here, n)?;
        if !d.is_finite() {
            continue;
        }
        // later indices win ties
        let better = match best {
            None => true,
            Some((_, bd)) => d <= bd + DISTANCE_TOLERANCE * bd.max(1.0),
        };
        if better {
            best = Some((k, d.min(best.map_or(d, |b| b.1))));
        }
    }
    let (k, _) = best.ok_or(Error::Unreachable { from: here, to: ctx.gt.goal() })?;
    Ok((ctx.first_step_toward(here, gt[k])?, ExpertCase::Rejoin { index: k }))
}

/// Follows the expert from `start` until it stops or the step cap hits.
pub fn expert_rollout(ctx: &ExpertContext<'_>, sim: &Simulator<'_>, start: EpisodeState) -> Result<EpisodeState> {
    let mut memory = ExpertMemory::default();
    let mut state = start;
    while !state.done {
        let action = expert_action(ctx, &state, &mut memory)?;
        state = sim.step(&state, action)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_synth::FeatureStore;
    use crate::episode_sim::DoneReason;
    use crate::nav_graph::{PanoNode, Point3};
    use crate::views::NUM_VIEWS;

    // 0 - 1 - 2 - 3 along x, with a detour 1 - 4 - 2 above and 5 hanging off 4
    fn graph() -> NavGraph {
        let pts = [(0.0, 0.0), (2.0, 0.0), (4.0, 0.0), (6.0, 0.0), (3.0, 2.0), (3.0, 4.0)];
        let nodes = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| PanoNode { id: i as u32, position: Point3::new(x, y, 0.0) })
            .collect();
        NavGraph::new(nodes, [(0, 1), (1, 2), (2, 3), (1, 4), (4, 2), (4, 5)]).unwrap()
    }

    fn features(n: usize) -> FeatureStore {
        FeatureStore::new(1, (0..n as u32).collect(), vec![0.0; n * NUM_VIEWS]).unwrap()
    }

    fn state(sim: &Simulator, at: NodeId, t: usize) -> EpisodeState {
        let mut s = sim.reset_at(at, 0.0, 20).unwrap();
        s.t = t;
        s
    }

    #[test]
    fn follows_reference_and_stops_at_goal() {
        let g = graph();
        let f = features(6);
        let sim = Simulator::new("e", &g, &f);
        let gt = Trajectory::from_nodes(&g, "e", vec![0, 1, 4, 2, 3]).unwrap();
        let ctx = ExpertContext::new(&g, &gt).unwrap();
        assert!(!ctx.gt_is_shortest);
        let end = expert_rollout(&ctx, &sim, sim.reset(&gt, 0.0).unwrap()).unwrap();
        assert_eq!(end.trace, gt.nodes);
        assert_eq!(end.done_reason, Some(DoneReason::Stop));
    }

    #[test]
    fn off_path_rejoins_latest_nearest_node() {
        let g = graph();
        let f = features(6);
        let sim = Simulator::new("e", &g, &f);
        let gt = Trajectory::from_nodes(&g, "e", vec![0, 1, 2, 3]).unwrap();
        let ctx = ExpertContext::new(&g, &gt).unwrap();
        assert!(ctx.gt_is_shortest);
        // shortest reference: head for the goal
        let (a, case) = expert_decision(&ctx, &state(&sim, 5, 3), &mut ExpertMemory::default()).unwrap();
        assert_eq!((a, case), (Action::Move(4), ExpertCase::ToGoal));

        let gt = Trajectory::from_nodes(&g, "e", vec![0, 1, 2, 1, 0]).unwrap();
        let ctx = ExpertContext::new(&g, &gt).unwrap();
        // node 4 is equally far from reference nodes 1 and 2; the later index wins (index 3 holds node 1)
        let (a, case) = expert_decision(&ctx, &state(&sim, 4, 2), &mut ExpertMemory::default()).unwrap();
        assert_eq!(case, ExpertCase::Rejoin { index: 3 });
        assert_eq!(a, Action::Move(1));
    }

    #[test]
    fn revisits_advance_monotonically() {
        let g = graph();
        let f = features(6);
        let sim = Simulator::new("e", &g, &f);
        let gt = Trajectory::from_nodes(&g, "e", vec![0, 1, 2, 1, 4]).unwrap();
        let ctx = ExpertContext::new(&g, &gt).unwrap();
        let mut memory = ExpertMemory::default();
        assert_eq!(expert_action(&ctx, &state(&sim, 1, 1), &mut memory).unwrap(), Action::Move(2));
        // asking again at the same step gives the same answer
        assert_eq!(expert_action(&ctx, &state(&sim, 1, 1), &mut memory).unwrap(), Action::Move(2));
        assert_eq!(expert_action(&ctx, &state(&sim, 2, 2), &mut memory).unwrap(), Action::Move(1));
        assert_eq!(expert_action(&ctx, &state(&sim, 1, 3), &mut memory).unwrap(), Action::Move(4));
        let end = expert_rollout(&ctx, &sim, sim.reset(&gt, 0.0).unwrap()).unwrap();
        assert_eq!(end.trace, gt.nodes);
    }

    #[test]
    fn match_index_rules() {
        let gt = [3, 1, 3, 2, 3];
        assert_eq!(match_index(&gt, 3, None), Some(0));
        assert_eq!(match_index(&gt, 3, Some(0)), Some(2));
        assert_eq!(match_index(&gt, 3, Some(4)), Some(0));
        assert_eq!(match_index(&gt, 9, None), None);
    }
}
