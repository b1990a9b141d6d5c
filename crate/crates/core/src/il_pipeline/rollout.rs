use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::examples::{build_input, record_episode, sim_for, sort_examples, HistoryEntry, StepExample, StepInput, DEFAULT_MASK_RATE};
use super::instruction::Episode;
use super::policy::LinearPolicy;
use crate::episode_sim::{EpisodeRecord, EpisodeState, Simulator};
use crate::metrics::{aggregate, evaluate_episode, AggregateMetrics, EvalResult};
use crate::seed::rng_for;
use crate::{Error, Result};

/// Anything that picks a candidate index from a step input.
pub trait Policy: Sync {
    fn choose(&self, input: &StepInput) -> Result<usize>;
}

impl Policy for LinearPolicy {
    fn choose(&self, input: &StepInput) -> Result<usize> {
        LinearPolicy::choose(self, input)
    }
}

/// Uniform choice among candidates, reproducible per (episode, step).
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub seed: u64,
}

impl Policy for RandomPolicy {
    fn choose(&self, input: &StepInput) -> Result<usize> {
        let t = input.t.to_string();
        let mut rng = rng_for(self.seed, &["random-policy", &input.instruction_id, &t]);
        Ok(rng.random_range(0..input.candidates.len()))
    }
}

/// Always picks the last candidate, which is STOP.
#[derive(Debug, Clone, Copy)]
pub struct StopPolicy;

impl Policy for StopPolicy {
    fn choose(&self, input: &StepInput) -> Result<usize> {
        Ok(input.candidates.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum StartMode {
    Reference,
    /// One random step away from the reference start.
    Perturbed { seed: u64 },
}

pub fn start_state(sim: &Simulator<'_>, episode: &Episode, mode: StartMode) -> Result<EpisodeState> {
    let reference = sim.reset(&episode.trajectory, episode.init_heading)?;
    let StartMode::Perturbed { seed } = mode else { return Ok(reference) };
    let start = episode.trajectory.start();
    let neighbors: Vec<_> = sim.graph.neighbors(start)?.map(|(n, _)| n).collect();
    let off_path: Vec<_> = neighbors.iter().copied().filter(|n| !episode.trajectory.nodes.contains(n)).collect();
    let pool = if off_path.is_empty() { &neighbors } else { &off_path };
    if pool.is_empty() {
        return Ok(reference);
    }
    let mut rng = rng_for(seed, &["perturb", episode.id()]);
    let node = pool[rng.random_range(0..pool.len())];
    sim.reset_at(node, episode.init_heading, episode.max_steps() + 1)
}

/// Runs `policy` greedily until it stops or hits the step cap.
pub fn rollout(policy: &dyn Policy, sim: &Simulator<'_>, episode: &Episode, mode: StartMode) -> Result<EpisodeState> {
    let mut state = start_state(sim, episode, mode)?;
    let mut history: Vec<HistoryEntry> = Vec::new();
    while !state.done {
        let input = build_input(sim, episode, &state, &history)?;
        let chosen = policy.choose(&input)?;
        let candidate = input
            .candidates
            .get(chosen)
            .ok_or_else(|| Error::InvalidAction(format!("choice {chosen} outside candidates")))?;
        history.push(HistoryEntry { pooled_obs: input.pooled_obs.clone(), chosen_rel_bucket: candidate.rel_bucket });
        state = sim.step(&state, candidate.action)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub episodes: Vec<(String, EvalResult)>,
    pub aggregate: AggregateMetrics,
    #[serde(skip)]
    pub records: Vec<EpisodeRecord>,
}

pub fn run_rollouts(
    policy: &dyn Policy,
    sims: &BTreeMap<String, Simulator<'_>>,
    episodes: &[Episode],
    mode: StartMode,
) -> Result<Vec<EpisodeRecord>> {
    episodes
        .par_iter()
        .map(|e| {
            let end = rollout(policy, sim_for(sims, e.env_id())?, e, mode)?;
            EpisodeRecord::from_state(&end, e.id())
        })
        .collect()
}

/// Scores rollout records against their episodes' reference paths.
pub fn score_records(
    sims: &BTreeMap<String, Simulator<'_>>,
    episodes: &[Episode],
    records: &[EpisodeRecord],
) -> Result<Vec<(String, EvalResult)>> {
    let by_id: BTreeMap<&str, &Episode> = episodes.iter().map(|e| (e.id(), e)).collect();
    records
        .par_iter()
        .map(|r| {
            let e = by_id
                .get(r.instruction_id.as_str())
                .ok_or_else(|| Error::Format(format!("no episode {}", r.instruction_id)))?;
            let sim = sim_for(sims, e.env_id())?;
            Ok((r.instruction_id.clone(), evaluate_episode(sim.graph, &r.trace, &e.trajectory.nodes)?))
        })
        .collect()
}

pub fn evaluate_policy(
    policy: &dyn Policy,
    sims: &BTreeMap<String, Simulator<'_>>,
    episodes: &[Episode],
    mode: StartMode,
) -> Result<PolicyEvaluation> {
    let records = run_rollouts(policy, sims, episodes, mode)?;
    let scored = score_records(sims, episodes, &records)?;
    let results: Vec<EvalResult> = scored.iter().map(|(_, r)| r.clone()).collect();
    Ok(PolicyEvaluation { aggregate: aggregate(&results)?, episodes: scored, records })
}

/// Rolls out `policy` on every episode, labels each visited state with the
/// expert, and returns `original` followed by the new examples, sorted.
/// The second value is the number of new examples.
pub fn dagger_iteration(
    policy: &dyn Policy,
    sims: &BTreeMap<String, Simulator<'_>>,
    episodes: &[Episode],
    original: Vec<StepExample>,
    mode: StartMode,
    seed: u64,
) -> Result<(Vec<StepExample>, usize)> {
    let fresh: Vec<Vec<StepExample>> = episodes
        .par_iter()
        .map(|e| {
            let sim = sim_for(sims, e.env_id())?;
            let start = start_state(sim, e, mode)?;
            let mut rng = rng_for(seed, &["mask", "dagger", e.id()]);
            let (examples, _) =
                record_episode(sim, e, start, DEFAULT_MASK_RATE, &mut rng, |input, _| policy.choose(input))?;
            Ok(examples)
        })
        .collect::<Result<_>>()?;
    let added: usize = fresh.iter().map(Vec::len).sum();
    let mut all = original;
    all.extend(fresh.into_iter().flatten());
    sort_examples(&mut all);
    Ok((all, added))
}
