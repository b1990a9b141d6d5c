use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode_sim::default_max_steps;
use crate::nav_graph::{normalize_angle, NavGraph};
use crate::seed::rng_for;
use crate::traj_sampler::Trajectory;
use crate::views::{elevation_bin, relative_bucket, NUM_BUCKETS, STOP_BUCKET};
use crate::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: u32 = 4096;
pub const MASK_TOKEN: u32 = 0;
/// Token ids `DIRECTION_TOKEN_BASE + bucket` name the 37 relative buckets.
pub const DIRECTION_TOKEN_BASE: u32 = 1;
/// Ids from here up to the vocabulary size are fillers.
pub const FILLER_TOKEN_BASE: u32 = 64;
pub const LANGUAGE_TAGS: [&str; 3] = ["en", "hi", "te"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub env_id: String,
    pub tokens: Vec<u32>,
    pub language_tag: String,
}

impl Instruction {
    pub fn validate(&self, vocab_size: u32) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Domain(format!("instruction {} has no tokens", self.id)));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Domain(format!(
                "instruction {} has token {t} outside vocabulary of {vocab_size}",
                self.id
            )));
        }
        Ok(())
    }
}

/// An instruction paired with the path it describes and the agent's
/// initial heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub instruction: Instruction,
    pub trajectory: Trajectory,
    pub init_heading: f64,
}

impl Episode {
    pub fn id(&self) -> &str {
        &self.instruction.id
    }

    pub fn env_id(&self) -> &str {
        &self.trajectory.env_id
    }

    pub fn max_steps(&self) -> usize {
        default_max_steps(self.trajectory.steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstructionConfig {
    pub vocab_size: u32,
    /// Probability that a direction token is replaced by a filler.
    pub noise_rate: f64,
}

impl Default for InstructionConfig {
    fn default() -> Self {
        Self { vocab_size: DEFAULT_VOCAB_SIZE, noise_rate: 0.1 }
    }
}

/// Relative direction bucket of every move along `trajectory` for an agent
/// starting with `init_heading`, followed by the STOP bucket.
pub fn reference_buckets(graph: &NavGraph, trajectory: &Trajectory, init_heading: f64) -> Result<Vec<u8>> {
    let mut heading = normalize_angle(init_heading);
    let mut out = Vec::with_capacity(trajectory.nodes.len());
    for leg in trajectory.nodes.windows(2) {
        let (a, b) = (graph.position(leg[0])?, graph.position(leg[1])?);
        let bearing = a.bearing_to(&b);
        out.push(relative_bucket(bearing, elevation_bin(a.elevation_to(&b)), heading));
        heading = bearing;
    }
    out.push(STOP_BUCKET);
    Ok(out)
}

/// Synthetic instruction: one direction token per step, each replaced by a
/// random filler with probability `noise_rate`.
pub fn synthesize_instruction<R: Rng>(
    graph: &NavGraph,
    trajectory: &Trajectory,
    init_heading: f64,
    id: &str,
    config: &InstructionConfig,
    rng: &mut R,
) -> Result<Instruction> {
    if config.vocab_size <= FILLER_TOKEN_BASE || !(0.0..=1.0).contains(&config.noise_rate) {
        return Err(Error::Domain(format!("invalid instruction configuration {config:?}")));
    }
    debug_assert!(DIRECTION_TOKEN_BASE + NUM_BUCKETS as u32 <= FILLER_TOKEN_BASE);
    let tokens = reference_buckets(graph, trajectory, init_heading)?
        .into_iter()
        .map(|b| {
            if rng.random::<f64>() < config.noise_rate {
                rng.random_range(FILLER_TOKEN_BASE..config.vocab_size)
            } else {
                DIRECTION_TOKEN_BASE + b as u32
            }
        })
        .collect();
    let language_tag = LANGUAGE_TAGS[rng.random_range(0..LANGUAGE_TAGS.len())].to_string();
    Ok(Instruction {
        id: id.to_string(),
        env_id: trajectory.env_id.clone(),
        tokens,
        language_tag,
    })
}

/// Pairs every trajectory of one environment with a synthetic instruction
/// and a random initial heading. Ids are `<env>_<ordinal>`.
pub fn make_episodes(
    graph: &NavGraph,
    trajectories: &[Trajectory],
    config: &InstructionConfig,
    seed: u64,
) -> Result<Vec<Episode>> {
    let Some(first) = trajectories.first() else { return Ok(Vec::new()) };
    let env_id = &first.env_id;
    let mut rng = rng_for(seed, &["instructions", env_id]);
    trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if &t.env_id != env_id {
                return Err(Error::InvalidTrajectory(format!(
                    "trajectory from {} mixed into {env_id}",
                    t.env_id
                )));
            }
            let init_heading = rng.random_range(0.0..std::f64::consts::TAU);
            let instruction =
                synthesize_instruction(graph, t, init_heading, &format!("{env_id}_{i:05}"), config, &mut rng)?;
            Ok(Episode { instruction, trajectory: t.clone(), init_heading })
        })
        .collect()
}

/// Masked token sequence and its (position, original id) targets.
pub type MaskedTokens = (Vec<u32>, Vec<(usize, u32)>);

/// Span masking: each position is masked independently with probability
/// `rate`, and each maximal run of masked positions becomes one MASK token.
/// Returns the masked sequence and the (position, original id) targets.
pub fn mask_instruction<R: Rng>(tokens: &[u32], rate: f64, rng: &mut R) -> Result<MaskedTokens> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("mask rate {rate} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(tokens.len());
    let mut targets = Vec::new();
    let mut in_span = false;
    for (i, &tok) in tokens.iter().enumerate() {
        if rng.random::<f64>() < rate {
            targets.push((i, tok));
            if !in_span {
                out.push(MASK_TOKEN);
            }
            in_span = true;
        } else {
            out.push(tok);
            in_span = false;
        }
    }
    Ok((out, targets))
}
