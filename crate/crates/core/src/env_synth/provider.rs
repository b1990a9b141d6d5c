//! A label-free stand-in for a learned edge classifier: probabilities are
//! the reference adjacency blurred with Gaussian noise.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Environment;
use crate::nav_graph::{NodeId, Point3};
use crate::seed::rng_for;
use crate::{Error, Result};

pub const REFERENCE_EDGE_PROBABILITY: f64 = 0.9;
pub const NON_EDGE_PROBABILITY: f64 = 0.1;

pub const PITCH_BUCKETS: usize = 8;
pub const HEADING_BUCKETS: usize = 16;
pub const DISTANCE_BUCKETS: usize = 5;
const BUCKET_RANGE_M: f64 = 3.5;

/// `clamp(base + N(0, sigma), 0, 1)`; exactly `base` when `sigma == 0`.
pub fn noisy_probability<R: Rng>(base: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return base;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated by caller");
    (base + normal.sample(rng)).clamp(0.0, 1.0)
}

/// The (pitch, heading, distance) bucket of `to` as seen from `from`, or
/// `None` beyond the bucketed range. Pitch spans ±90° in 8 bins, heading
/// 360° in 16 bins, distance 0–3.5 m in 5 bins.
pub fn bucket_index(from: &Point3, to: &Point3) -> Option<(usize, usize, usize)> {
    let dist = from.distance(to);
    if dist > BUCKET_RANGE_M {
        return None;
    }
    let pitch = from.elevation_to(to).to_degrees();
    let heading = from.bearing_to(to).to_degrees();
    let p = (((pitch + 90.0) / (180.0 / PITCH_BUCKETS as f64)).floor() as usize).min(PITCH_BUCKETS - 1);
    let h = ((heading / (360.0 / HEADING_BUCKETS as f64)).floor() as usize).min(HEADING_BUCKETS - 1);
    let d = ((dist / (BUCKET_RANGE_M / DISTANCE_BUCKETS as f64)).floor() as usize).min(DISTANCE_BUCKETS - 1);
    Some((p, h, d))
}

/// Per-source-pano 8×16×5 probability volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketGrid {
    values: Vec<f64>,
}

impl BucketGrid {
    fn offset(p: usize, h: usize, d: usize) -> usize {
        (p * HEADING_BUCKETS + h) * DISTANCE_BUCKETS + d
    }

    pub fn get(&self, p: usize, h: usize, d: usize) -> f64 {
        self.values[Self::offset(p, h, d)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone)]
pub struct EdgeProbabilityProvider {
    ids: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    positions: Vec<Point3>,
    /// Row-major ordered-pair probabilities; the diagonal is unused.
    raw: Vec<f64>,
}

impl EdgeProbabilityProvider {
    /// Builds a provider from explicit ordered-pair probabilities.
    pub fn from_matrix(ids: Vec<NodeId>, positions: Vec<Point3>, raw: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if positions.len() != n || raw.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: raw.len(),
            });
        }
        if raw.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("edge probabilities must lie in [0, 1]".into()));
        }
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Self {
            ids,
            index,
            positions,
            raw,
        })
    }

    fn idx(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    /// Directed probability as predicted from pano `i` towards pano `j`.
    pub fn probability(&self, i: NodeId, j: NodeId) -> Result<f64> {
        let (a, b) = (self.idx(i)?, self.idx(j)?);
        Ok(self.raw[a * self.ids.len() + b])
    }

    /// `max(p(i→j), p(j→i))`.
    pub fn symmetric(&self, i: NodeId, j: NodeId) -> Result<f64> {
        Ok(self.probability(i, j)?.max(self.probability(j, i)?))
    }

    /// The bucket volume around pano `i`: each bucket holds the highest
    /// directed probability of any pano falling inside it, 0 when empty.
    pub fn bucket_grid(&self, i: NodeId) -> Result<BucketGrid> {
        let a = self.idx(i)?;
        let mut values = vec![0.0f64; PITCH_BUCKETS * HEADING_BUCKETS * DISTANCE_BUCKETS];
        for (b, pos) in self.positions.iter().enumerate() {
            if b == a {
                continue;
            }
            if let Some((p, h, d)) = bucket_index(&self.positions[a], pos) {
                let slot = &mut values[BucketGrid::offset(p, h, d)];
                *slot = slot.max(self.raw[a * self.ids.len() + b]);
            }
        }
        Ok(BucketGrid { values })
    }

    /// Reads `p(i→j)` back out of `i`'s bucket volume; `None` when `j` is
    /// outside the bucketed range.
    pub fn bucket_probability(&self, i: NodeId, j: NodeId) -> Result<Option<f64>> {
        let (a, b) = (self.idx(i)?, self.idx(j)?);
        let grid = self.bucket_grid(i)?;
        Ok(bucket_index(&self.positions[a], &self.positions[b]).map(|(p, h, d)| grid.get(p, h, d)))
    }
}

/// Noisy oracle: 0.9 for reference edges and 0.1 otherwise, each ordered
/// pair perturbed independently by `N(0, sigma)` and clamped to `[0, 1]`.
pub fn oracle_edge_probability(env: &Environment, sigma: f64, seed: u64) -> Result<EdgeProbabilityProvider> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let graph = &env.reference_graph;
    let ids: Vec<NodeId> = graph.node_ids().collect();
    let positions: Vec<Point3> = graph.nodes().iter().map(|n| n.position).collect();
    let n = ids.len();
    let mut rng = rng_for(seed, &["edge-probability", &env.id]);
    let mut raw = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let base = if graph.has_edge(ids[a], ids[b]) {
                REFERENCE_EDGE_PROBABILITY
            } else {
                NON_EDGE_PROBABILITY
            };
            raw[a * n + b] = noisy_probability(base, sigma, &mut rng);
        }
    }
    EdgeProbabilityProvider::from_matrix(ids, positions, raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_synth::{generate_environment, EnvParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_oracle_returns_base_values() {
        let env = generate_environment("p", 4, &EnvParams::default()).unwrap();
        let provider = oracle_edge_probability(&env, 0.0, 9).unwrap();
        let g = &env.reference_graph;
        let e = g.edges()[0];
        assert_eq!(provider.probability(e.a, e.b).unwrap(), 0.9);
        let ids: Vec<_> = g.node_ids().collect();
        let non_edge = ids
            .iter()
            .flat_map(|&a| ids.iter().map(move |&b| (a, b)))
            .find(|&(a, b)| a != b && !g.has_edge(a, b))
            .unwrap();
        assert_eq!(provider.probability(non_edge.0, non_edge.1).unwrap(), 0.1);
    }

    #[test]
    fn symmetrized_probability_ignores_query_order() {
        let env = generate_environment("p", 5, &EnvParams::default()).unwrap();
        let provider = oracle_edge_probability(&env, 0.3, 1).unwrap();
        let ids: Vec<_> = env.reference_graph.node_ids().collect();
        for &a in &ids {
            for &b in &ids {
                if a != b {
                    let p = provider.symmetric(a, b).unwrap();
                    assert_eq!(p, provider.symmetric(b, a).unwrap());
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let env = generate_environment("p", 5, &EnvParams::default()).unwrap();
        assert!(oracle_edge_probability(&env, -0.1, 1).is_err());
    }

    /// E[clamp(base + N(0, s), 0, 1)] by midpoint quadrature, independent
    /// of the sampler.
    fn clamped_normal_mean(base: f64, sigma: f64) -> f64 {
        let n = 200_000;
        let (lo, hi) = (-8.0 * sigma, 8.0 * sigma);
        let h = (hi - lo) / n as f64;
        (0..n)
            .map(|k| {
                let x = lo + (k as f64 + 0.5) * h;
                let pdf = (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                (base + x).clamp(0.0, 1.0) * pdf * h
            })
            .sum()
    }

    #[test]
    fn monte_carlo_mean_matches_clamped_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for base in [REFERENCE_EDGE_PROBABILITY, NON_EDGE_PROBABILITY] {
            let draws = 10_000;
            let mean: f64 = (0..draws).map(|_| noisy_probability(base, 0.2, &mut rng)).sum::<f64>() / draws as f64;
            let expected = clamped_normal_mean(base, 0.2);
            assert!((mean - expected).abs() < 0.01, "base {base}: {mean} vs {expected}");
            // clamping pulls the mean towards 0.5 by about 0.04 at sigma 0.2
            assert!((expected - base).abs() > 0.03);
        }
    }

    #[test]
    fn bucket_readout_matches_direct_query_for_isolated_neighbors() {
        let env = generate_environment("p", 6, &EnvParams::default()).unwrap();
        let provider = oracle_edge_probability(&env, 0.2, 2).unwrap();
        let g = &env.reference_graph;
        let mut checked = 0;
        for e in g.edges() {
            let (pa, pb) = (g.position(e.a).unwrap(), g.position(e.b).unwrap());
            let bucket = bucket_index(&pa, &pb).unwrap();
            let shared = g
                .nodes()
                .iter()
                .filter(|n| n.id != e.a && bucket_index(&pa, &n.position) == Some(bucket))
                .count();
            if shared == 1 {
                assert_eq!(
                    provider.bucket_probability(e.a, e.b).unwrap(),
                    Some(provider.probability(e.a, e.b).unwrap())
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}
