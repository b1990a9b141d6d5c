//! Panoramic navigation simulator over a navigation graph.
//!
//! The agent stands on a pano, sees 36 views, and teleports to an adjacent
//! pano or stops. States are plain values; `step` returns a new one.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::env_synth::FeatureStore;
use crate::nav_graph::{normalize_angle, NavGraph, NodeId};
use crate::traj_sampler::Trajectory;
use crate::views::{
    elevation_bin, heading_bin, relative_bucket, view_elevation_bin, view_heading, view_index, NUM_VIEWS,
    STOP_BUCKET,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Move(NodeId),
    Stop,
}

impl Action {
    pub fn target(self) -> Option<NodeId> {
        match self {
            Action::Move(id) => Some(id),
            Action::Stop => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move(id) => write!(f, "{id}"),
            Action::Stop => f.write_str("STOP"),
        }
    }
}

// Serialized as the target node id, or the string "STOP".
impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Action::Move(id) => s.serialize_u32(*id),
            Action::Stop => s.serialize_str("STOP"),
        }
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(NodeId),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Id(id) => Ok(Action::Move(id)),
            Repr::Word(w) if w == "STOP" => Ok(Action::Stop),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("unknown action {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Stop,
    Cap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub env_id: String,
    pub current_node: NodeId,
    /// Compass heading in [0, 2π).
    pub heading: f64,
    pub t: usize,
    pub trace: Vec<NodeId>,
    /// Heading after each entry of `trace`.
    pub headings: Vec<f64>,
    pub actions: Vec<Action>,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
    pub max_steps: usize,
}

impl EpisodeState {
    pub fn start(&self) -> NodeId {
        self.trace[0]
    }
}

/// Step budget for an episode whose reference path has `gt_steps` moves.
pub fn default_max_steps(gt_steps: usize) -> usize {
    2 * gt_steps + 4
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord<'a> {
    pub feature: &'a [f32],
    pub abs_bucket: u8,
    pub rel_bucket: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation<'a> {
    pub views: Vec<ViewRecord<'a>>,
}

impl Observation<'_> {
    pub fn pooled(&self) -> Vec<f32> {
        let dim = self.views.first().map_or(0, |v| v.feature.len());
        let mut acc = vec![0.0f64; dim];
        for view in &self.views {
            for (a, x) in acc.iter_mut().zip(view.feature) {
                *a += *x as f64;
            }
        }
        let n = self.views.len().max(1) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionCandidate {
    pub action: Action,
    /// View feature pointing at the target; all zeros for STOP.
    pub feature: Vec<f32>,
    pub abs_bucket: u8,
    pub rel_bucket: u8,
}

/// The view index whose heading and elevation bins are nearest the
/// direction from `from` to `to`.
pub fn view_toward(graph: &NavGraph, from: NodeId, to: NodeId) -> Result<usize> {
    let (a, b) = (graph.position(from)?, graph.position(to)?);
    Ok(view_index(elevation_bin(a.elevation_to(&b)), heading_bin(a.bearing_to(&b))))
}

#[derive(Debug, Clone, Copy)]
pub struct Simulator<'a> {
    pub env_id: &'a str,
    pub graph: &'a NavGraph,
    pub features: &'a FeatureStore,
}

impl<'a> Simulator<'a> {
    pub fn new(env_id: &'a str, graph: &'a NavGraph, features: &'a FeatureStore) -> Self {
        Self { env_id, graph, features }
    }

    /// Starts an episode at the trajectory's first node.
    pub fn reset(&self, trajectory: &Trajectory, init_heading: f64) -> Result<EpisodeState> {
        trajectory.validate(self.graph)?;
        self.reset_at(trajectory.start(), init_heading, default_max_steps(trajectory.steps))
    }

    /// Starts an episode at an arbitrary node.
    pub fn reset_at(&self, start: NodeId, init_heading: f64, max_steps: usize) -> Result<EpisodeState> {
        if !self.graph.contains(start) {
            return Err(Error::UnknownNode(start));
        }
        if !init_heading.is_finite() {
            return Err(Error::Domain(format!("heading {init_heading} is not finite")));
        }
        let heading = normalize_angle(init_heading);
        Ok(EpisodeState {
            env_id: self.env_id.to_string(),
            current_node: start,
            heading,
            t: 0,
            trace: vec![start],
            headings: vec![heading],
            actions: Vec::new(),
            done: false,
            done_reason: None,
            max_steps,
        })
    }

    pub fn observe(&self, state: &EpisodeState) -> Result<Observation<'a>> {
        let views = (0..NUM_VIEWS)
            .map(|v| {
                Ok(ViewRecord {
                    feature: self.features.view(state.current_node, v)?,
                    abs_bucket: v as u8,
                    rel_bucket: relative_bucket(view_heading(v), view_elevation_bin(v), state.heading),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Observation { views })
    }

    /// Neighbors in ascending id order, then STOP.
    pub fn candidates(&self, state: &EpisodeState) -> Result<Vec<ActionCandidate>> {
        let here = self.graph.position(state.current_node)?;
        let mut out = Vec::with_capacity(self.graph.degree(state.current_node)? + 1);
        for (id, _) in self.graph.neighbors(state.current_node)? {
            let there = self.graph.position(id)?;
            let (bearing, elev) = (here.bearing_to(&there), elevation_bin(here.elevation_to(&there)));
            let view = view_index(elev, heading_bin(bearing));
            out.push(ActionCandidate {
                action: Action::Move(id),
                feature: self.features.view(state.current_node, view)?.to_vec(),
                abs_bucket: view as u8,
                rel_bucket: relative_bucket(bearing, elev, state.heading),
            });
        }
        out.sort_by_key(|c| c.action);
        out.push(ActionCandidate {
            action: Action::Stop,
            feature: vec![0.0; self.features.dim()],
            abs_bucket: STOP_BUCKET,
            rel_bucket: STOP_BUCKET,
        });
        Ok(out)
    }

    pub fn step(&self, state: &EpisodeState, action: Action) -> Result<EpisodeState> {
        if state.done {
            return Err(Error::InvalidAction("episode is already finished".into()));
        }
        let mut next = state.clone();
        next.actions.push(action);
        match action {
            Action::Stop => {
                next.done = true;
                next.done_reason = Some(DoneReason::Stop);
            }
            Action::Move(target) => {
                if !self.graph.has_edge(state.current_node, target) {
                    return Err(Error::InvalidAction(format!(
                        "{target} is not adjacent to {}",
                        state.current_node
                    )));
                }
                let (a, b) = (self.graph.position(state.current_node)?, self.graph.position(target)?);
                next.heading = a.bearing_to(&b);
                next.current_node = target;
                next.t += 1;
                next.trace.push(target);
                next.headings.push(next.heading);
                if next.t >= next.max_steps {
                    next.done = true;
                    next.done_reason = Some(DoneReason::Cap);
                }
            }
        }
        Ok(next)
    }

    /// Re-applies recorded actions from a fresh start.
    pub fn replay(&self, start: NodeId, init_heading: f64, max_steps: usize, actions: &[Action]) -> Result<EpisodeState> {
        let mut state = self.reset_at(start, init_heading, max_steps)?;
        for &action in actions {
            state = self.step(&state, action)?;
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub env_id: String,
    pub instruction_id: String,
    pub trace: Vec<NodeId>,
    pub headings: Vec<f64>,
    pub actions: Vec<Action>,
    pub done_reason: DoneReason,
}

impl EpisodeRecord {
    pub fn from_state(state: &EpisodeState, instruction_id: &str) -> Result<Self> {
        let done_reason = state
            .done_reason
            .ok_or_else(|| Error::InvalidAction("episode has not finished".into()))?;
        Ok(Self {
            env_id: state.env_id.clone(),
            instruction_id: instruction_id.to_string(),
            trace: state.trace.clone(),
            headings: state.headings.clone(),
            actions: state.actions.clone(),
            done_reason,
        })
    }
}
