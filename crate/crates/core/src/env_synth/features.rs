//! Synthetic panoramic features.
//!
//! Each view vector mixes a smooth spatial field sampled a little ahead of
//! the camera in the view direction, a per-direction latent shared by all
//! panos, and per-view noise. Nearby panos therefore look alike and the
//! view facing a neighbor resembles what that neighbor sees.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Environment;
use crate::nav_graph::NodeId;
use crate::seed::rng_for;
use crate::views::{view_elevation, view_heading, NUM_VIEWS};
use crate::{Error, Result};

pub const VIEWS_PER_PANO: usize = NUM_VIEWS;
pub const DEFAULT_FEATURE_DIM: usize = 640;

const FIELD_LENGTH_SCALE_M: f64 = 3.0;
const LOOK_AHEAD_M: f64 = 1.5;
const FIELD_WEIGHT: f64 = 1.0;
const DIRECTION_WEIGHT: f64 = 0.6;
const NOISE_WEIGHT: f64 = 0.4;

/// 36 view vectors of dimension `dim` per pano.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    data: Vec<f32>,
}

impl FeatureStore {
    /// `data` is row-major `[pano][view][dim]` in `ids` order.
    pub fn new(dim: usize, ids: Vec<NodeId>, data: Vec<f32>) -> Result<Self> {
        let expected = ids.len() * VIEWS_PER_PANO * dim;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Self { dim, ids, index, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pano_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn view(&self, pano: NodeId, view: usize) -> Result<&[f32]> {
        let i = *self.index.get(&pano).ok_or(Error::UnknownNode(pano))?;
        if view >= VIEWS_PER_PANO {
            return Err(Error::Domain(format!("view index {view} out of range")));
        }
        let start = (i * VIEWS_PER_PANO + view) * self.dim;
        Ok(&self.data[start..start + self.dim])
    }

    /// Mean of the 36 view vectors of a pano.
    pub fn pooled(&self, pano: NodeId) -> Result<Vec<f32>> {
        let mut acc = vec![0.0f64; self.dim];
        for v in 0..VIEWS_PER_PANO {
            for (a, x) in acc.iter_mut().zip(self.view(pano, v)?) {
                *a += *x as f64;
            }
        }
        Ok(acc.into_iter().map(|a| (a / VIEWS_PER_PANO as f64) as f32).collect())
    }
}

pub fn generate_features(env: &Environment, seed: u64, dim: usize) -> Result<FeatureStore> {
    if dim < 8 {
        return Err(Error::Domain(format!("feature dimension must be at least 8, got {dim}")));
    }
    let mut rng = rng_for(seed, &["features", &env.id]);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };

    let freqs: Vec<[f64; 2]> = (0..dim)
        .map(|_| [gauss() / FIELD_LENGTH_SCALE_M, gauss() / FIELD_LENGTH_SCALE_M])
        .collect();
    let mut direction = vec![0.0f64; NUM_VIEWS * dim];
    for x in direction.iter_mut() {
        *x = gauss();
    }
    let phases: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();

    let ids: Vec<NodeId> = env.reference_graph.node_ids().collect();
    let mut data = Vec::with_capacity(ids.len() * NUM_VIEWS * dim);
    let mut view_vec = vec![0.0f64; dim];
    for pano in env.reference_graph.nodes() {
        for v in 0..NUM_VIEWS {
            let (h, e) = (view_heading(v), view_elevation(v));
            let reach = LOOK_AHEAD_M * e.cos();
            let q = [pano.position.x + reach * h.sin(), pano.position.y + reach * h.cos()];
            for d in 0..dim {
                let field = std::f64::consts::SQRT_2 * (freqs[d][0] * q[0] + freqs[d][1] * q[1] + phases[d]).cos();
                let noise: f64 = StandardNormal.sample(&mut rng);
                view_vec[d] = FIELD_WEIGHT * field + DIRECTION_WEIGHT * direction[v * dim + d] + NOISE_WEIGHT * noise;
            }
            let norm = view_vec.iter().map(|x| x * x).sum::<f64>().sqrt();
            data.extend(view_vec.iter().map(|x| (x / norm) as f32));
        }
    }
    FeatureStore::new(dim, ids, data)
}
