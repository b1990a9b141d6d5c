//! Environment bundles on disk:
//!
//! ```text
//! <dir>/graph.json     reference navigation graph
//! <dir>/grid.json      occupancy grid, rows of '0'/'1'
//! <dir>/features.bin   16-byte header (8-byte magic, u32 pano count, u32 dim)
//!                      followed by little-endian f32 [pano][view][dim]
//! <dir>/meta.json      id, seed, params, split, feature seed
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvParams, Environment, FeatureStore, Split, VIEWS_PER_PANO};
use crate::io::{read_f32_table, read_json, write_f32_table, write_json_pretty};
use crate::nav_graph::{GraphDocument, NavGraph, NodeId, OccupancyGrid};
use crate::nav_graph::GridDocument;
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"PANOFEAT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentMeta {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    pub params: EnvParams,
    pub feature_seed: u64,
    pub feature_dim: usize,
}

pub fn save_environment(dir: &Path, env: &Environment, features: &FeatureStore, feature_seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json_pretty(&dir.join("graph.json"), &env.reference_graph.to_document())?;
    write_json_pretty(&dir.join("grid.json"), &env.grid.to_document())?;
    write_features(&dir.join("features.bin"), features)?;
    let meta = EnvironmentMeta {
        id: env.id.clone(),
        seed: env.seed,
        split: env.split(),
        params: env.params.clone(),
        feature_seed,
        feature_dim: features.dim(),
    };
    write_json_pretty(&dir.join("meta.json"), &meta)
}

pub fn load_environment(dir: &Path) -> Result<(Environment, FeatureStore, EnvironmentMeta)> {
    let meta: EnvironmentMeta = read_json(&dir.join("meta.json"))?;
    let graph_doc: GraphDocument = read_json(&dir.join("graph.json"))?;
    let grid_doc: GridDocument = read_json(&dir.join("grid.json"))?;
    let mut params = meta.params.clone();
    params.split = meta.split;
    let env = Environment {
        id: meta.id.clone(),
        seed: meta.seed,
        params,
        grid: OccupancyGrid::from_document(&grid_doc)?,
        reference_graph: NavGraph::from_document(&graph_doc)?,
    };
    env.validate()?;
    let features = read_features(&dir.join("features.bin"), env.reference_graph.node_ids().collect())?;
    if features.dim() != meta.feature_dim {
        return Err(Error::Format(format!(
            "features.bin has dimension {} but meta.json says {}",
            features.dim(),
            meta.feature_dim
        )));
    }
    Ok((env, features, meta))
}

pub fn write_features(path: &Path, features: &FeatureStore) -> Result<()> {
    write_f32_table(path, FEATURE_MAGIC, features.pano_ids().len(), features.dim(), features.data())
}

pub fn read_features(path: &Path, ids: Vec<NodeId>) -> Result<FeatureStore> {
    let (count, dim, data) = read_f32_table(path, FEATURE_MAGIC, VIEWS_PER_PANO)?;
    if count != ids.len() {
        return Err(Error::Format(format!(
            "{}: {count} panos in features but {} in graph",
            path.display(),
            ids.len()
        )));
    }
    FeatureStore::new(dim, ids, data)
}
