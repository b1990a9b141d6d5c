use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::instruction::{mask_instruction, Episode};
use crate::dagger_expert::{expert_action, ExpertContext, ExpertMemory};
use crate::episode_sim::{ActionCandidate, EpisodeState, Simulator};
use crate::nav_graph::NodeId;
use crate::seed::rng_for;
use crate::{Error, Result};

pub const PROGRESS_CLASSES: usize = 20;
pub const DEFAULT_MASK_RATE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub pooled_obs: Vec<f32>,
    pub chosen_rel_bucket: u8,
}

/// Everything the policy sees at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub env_id: String,
    pub instruction_id: String,
    pub t: usize,
    pub node: NodeId,
    pub heading: f64,
    pub tokens: Vec<u32>,
    pub history: Vec<HistoryEntry>,
    /// Mean of the 36 view features at the current pano.
    pub pooled_obs: Vec<f32>,
    pub candidates: Vec<ActionCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLabels {
    pub constrained_idx: usize,
    pub unconstrained_bucket: u8,
    pub progress_class: u8,
    pub masked_tokens: Vec<(usize, u32)>,
    /// The instruction after span masking.
    pub masked_input: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepExample {
    pub input: StepInput,
    pub labels: StepLabels,
}

impl StepExample {
    pub fn check_consistency(&self) -> Result<()> {
        let c = self.input.candidates.get(self.labels.constrained_idx).ok_or_else(|| {
            Error::Format(format!(
                "label {} outside {} candidates",
                self.labels.constrained_idx,
                self.input.candidates.len()
            ))
        })?;
        if c.rel_bucket != self.labels.unconstrained_bucket {
            return Err(Error::Format(format!(
                "candidate bucket {} differs from label bucket {}",
                c.rel_bucket, self.labels.unconstrained_bucket
            )));
        }
        Ok(())
    }
}

/// `floor(20 t / T)` capped at the last class.
pub fn progress_class(t: usize, total_steps: usize) -> u8 {
    if total_steps == 0 {
        return (PROGRESS_CLASSES - 1) as u8;
    }
    ((PROGRESS_CLASSES * t) / total_steps).min(PROGRESS_CLASSES - 1) as u8
}

/// The policy input at `state`.
pub fn build_input(
    sim: &Simulator<'_>,
    episode: &Episode,
    state: &EpisodeState,
    history: &[HistoryEntry],
) -> Result<StepInput> {
    Ok(StepInput {
        env_id: state.env_id.clone(),
        instruction_id: episode.instruction.id.clone(),
        t: state.t,
        node: state.current_node,
        heading: state.heading,
        tokens: episode.instruction.tokens.clone(),
        history: history.to_vec(),
        pooled_obs: sim.features.pooled(state.current_node)?,
        candidates: sim.candidates(state)?,
    })
}

/// Runs one episode, choosing actions with `choose` and labelling every
/// decision point with the expert action. Returns the examples and the final
/// state.
pub fn record_episode<R: Rng>(
    sim: &Simulator<'_>,
    episode: &Episode,
    start: EpisodeState,
    mask_rate: f64,
    mask_rng: &mut R,
    mut choose: impl FnMut(&StepInput, usize) -> Result<usize>,
) -> Result<(Vec<StepExample>, EpisodeState)> {
    let ctx = ExpertContext::new(sim.graph, &episode.trajectory)?;
    let mut memory = ExpertMemory::default();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut examples = Vec::new();
    let mut state = start;
    while !state.done {
        let input = build_input(sim, episode, &state, &history)?;
        let expert = expert_action(&ctx, &state, &mut memory)?;
        let constrained_idx = input
            .candidates
            .iter()
            .position(|c| c.action == expert)
            .ok_or_else(|| Error::InvalidAction(format!("expert action {expert} is not a candidate")))?;
        let (masked_input, masked_tokens) = mask_instruction(&episode.instruction.tokens, mask_rate, mask_rng)?;
        let labels = StepLabels {
            constrained_idx,
            unconstrained_bucket: input.candidates[constrained_idx].rel_bucket,
            progress_class: progress_class(state.t, episode.trajectory.steps),
            masked_tokens,
            masked_input,
        };
        let chosen = choose(&input, constrained_idx)?;
        let candidate = input.candidates.get(chosen).ok_or_else(|| {
            Error::InvalidAction(format!("choice {chosen} outside {} candidates", input.candidates.len()))
        })?;
        let action = candidate.action;
        history.push(HistoryEntry {
            pooled_obs: input.pooled_obs.clone(),
            chosen_rel_bucket: candidate.rel_bucket,
        });
        examples.push(StepExample { input, labels });
        state = sim.step(&state, action)?;
    }
    Ok((examples, state))
}

/// One example per step along the reference path, including the final STOP.
pub fn emit_step_examples(sim: &Simulator<'_>, episode: &Episode, seed: u64) -> Result<Vec<StepExample>> {
    let start = sim.reset(&episode.trajectory, episode.init_heading)?;
    let mut rng = rng_for(seed, &["mask", episode.id()]);
    let (examples, end) = record_episode(sim, episode, start, DEFAULT_MASK_RATE, &mut rng, |_, label| Ok(label))?;
    debug_assert_eq!(end.trace, episode.trajectory.nodes);
    Ok(examples)
}

/// Looks up the simulator for an episode's environment.
pub fn sim_for<'s, 'a>(sims: &'s BTreeMap<String, Simulator<'a>>, env_id: &str) -> Result<&'s Simulator<'a>> {
    sims.get(env_id)
        .ok_or_else(|| Error::InvalidEnvironment(format!("no environment loaded for {env_id}")))
}

/// Sorts by (environment, instruction, step).
pub fn sort_examples(examples: &mut [StepExample]) {
    examples.sort_by(|a, b| {
        (&a.input.env_id, &a.input.instruction_id, a.input.t).cmp(&(&b.input.env_id, &b.input.instruction_id, b.input.t))
    });
}

pub fn emit_dataset(
    sims: &BTreeMap<String, Simulator<'_>>,
    episodes: &[Episode],
    seed: u64,
) -> Result<Vec<StepExample>> {
    let per_episode: Vec<Vec<StepExample>> = episodes
        .par_iter()
        .map(|e| emit_step_examples(sim_for(sims, e.env_id())?, e, seed))
        .collect::<Result<_>>()?;
    let mut examples: Vec<StepExample> = per_episode.into_iter().flatten().collect();
    sort_examples(&mut examples);
    Ok(examples)
}
