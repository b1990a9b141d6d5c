//! Desk-scale toolkit for instruction-following navigation agents.
//!
//! The crate covers the data-engineering side (procedural environments,
//! navigation-graph construction, trajectory sampling) and the imitation
//! learning side (panoramic episode simulator, expert oracle, per-step
//! training examples, a linear two-head policy, behavioral cloning and
//! DAGGER) together with the standard path-fidelity metrics.

pub mod dagger_expert;
pub mod env_synth;
pub mod episode_sim;
pub mod error;
pub mod graph_builder;
pub mod il_pipeline;
pub mod io;
pub mod metrics;
pub mod nav_graph;
pub mod seed;
pub mod traj_sampler;
pub mod views;

pub use error::{Error, Result};
pub use nav_graph::{NavGraph, NodeId, OccupancyGrid, PanoNode, Point3};
