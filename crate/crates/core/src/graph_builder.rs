//! Navigation-graph construction from edge probabilities and obstacle
//! geometry.
//!
//! A pair of panos `i, j` is joined when
//!
//! ```text
//! (λ_d · g/s − λ_p · p ≤ 1) ∧ (s ≤ 3.5 m) ∧ (|z_i − z_j| ≤ 3 m)
//! ```
//!
//! with `g` the obstacle-avoiding geodesic, `s` the straight-line distance
//! and `p` the symmetrized edge probability. The pair-rule edges are then
//! OR-ed with a minimum spanning tree weighted by the first term so the
//! result is always connected.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_synth::{EdgeProbabilityProvider, Environment};
use crate::nav_graph::{edge_key, minimum_spanning_tree, NavGraph, NodeId, PanoNode, WeightedEdge};
use crate::{Error, Result};

pub type EdgeSet = BTreeSet<(NodeId, NodeId)>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRuleParams {
    pub lambda_d: f64,
    pub lambda_p: f64,
    #[serde(default = "default_max_euclidean")]
    pub max_euclidean: f64,
    #[serde(default = "default_max_dz")]
    pub max_dz: f64,
}

fn default_max_euclidean() -> f64 {
    3.5
}

fn default_max_dz() -> f64 {
    3.0
}

impl EdgeRuleParams {
    pub fn new(lambda_d: f64, lambda_p: f64) -> Self {
        Self {
            lambda_d,
            lambda_p,
            max_euclidean: default_max_euclidean(),
            max_dz: default_max_dz(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_d, self.lambda_p, self.max_euclidean, self.max_dz];
        if all.iter().any(|v| !v.is_finite()) || self.max_euclidean <= 0.0 {
            return Err(Error::Domain(format!("invalid edge rule parameters {self:?}")));
        }
        Ok(())
    }

    /// `λ_d · g/s − λ_p · p`.
    pub fn first_term(&self, g: f64, s: f64, p: f64) -> f64 {
        self.lambda_d * g / s - self.lambda_p * p
    }
}

/// The pair rule. `geodesic == None` means no obstacle-free path exists, in
/// which case the pair is never joined.
pub fn edge_rule(
    params: &EdgeRuleParams,
    geodesic: Option<f64>,
    s: f64,
    p: f64,
    z_i: f64,
    z_j: f64,
) -> Result<bool> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!(
            "straight-line distance must be positive, got {s} (coincident panos)"
        )));
    }
    let Some(g) = geodesic else {
        return Ok(false);
    };
    Ok(params.first_term(g, s, p) <= 1.0 && s <= params.max_euclidean && (z_i - z_j).abs() <= params.max_dz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphQuality {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl GraphQuality {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

pub fn quality_from_sets(predicted: &EdgeSet, reference: &EdgeSet) -> GraphQuality {
    let tp = predicted.intersection(reference).count();
    GraphQuality::from_counts(tp, predicted.len() - tp, reference.len() - tp)
}

/// Edge precision/recall/F1 of `predicted` against `reference`; both graphs
/// must have the same node ids.
pub fn graph_quality(predicted: &NavGraph, reference: &NavGraph) -> Result<GraphQuality> {
    if !predicted.node_ids().eq(reference.node_ids()) {
        return Err(Error::InvalidGraph("graphs have different node sets".into()));
    }
    Ok(quality_from_sets(&predicted.edge_set(), &reference.edge_set()))
}

/// Everything the rule needs about one unordered pano pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCandidate {
    pub a: NodeId,
    pub b: NodeId,
    /// Grid geodesic between the panos' cells; `None` if unreachable.
    pub geodesic: Option<f64>,
    pub euclidean: f64,
    pub probability: f64,
    pub z_a: f64,
    pub z_b: f64,
}

impl PairCandidate {
    /// Cell-to-cell geodesics can undershoot the straight line by up to two
    /// cells of discretization; the rule sees `max(g, s)`.
    pub fn effective_geodesic(&self) -> Option<f64> {
        self.geodesic.map(|g| g.max(self.euclidean))
    }

    pub fn passes(&self, params: &EdgeRuleParams) -> Result<bool> {
        edge_rule(params, self.effective_geodesic(), self.euclidean, self.probability, self.z_a, self.z_b)
    }
}

/// All pano pairs of one environment with their rule inputs precomputed.
#[derive(Debug, Clone)]
pub struct PairTable {
    pub env_id: String,
    pub nodes: Vec<PanoNode>,
    pub pairs: Vec<PairCandidate>,
}

impl PairTable {
    pub fn compute(env: &Environment, provider: &EdgeProbabilityProvider) -> Result<Self> {
        let nodes = env.panos().to_vec();
        let fields = nodes
            .par_iter()
            .map(|n| env.grid.distance_field(n.position.xy()))
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1) / 2);
        for (i, a) in nodes.iter().enumerate() {
            for (j, b) in nodes.iter().enumerate().skip(i + 1) {
                let forward = fields[i].at(b.position.xy());
                let backward = fields[j].at(a.position.xy());
                // both directions sum the same step costs; take the smaller
                let geodesic = match (forward, backward) {
                    (Some(f), Some(r)) => Some(f.min(r)),
                    _ => None,
                };
                let euclidean = a.position.distance(&b.position);
                if euclidean <= 0.0 {
                    return Err(Error::InvalidEnvironment(format!("panos {} and {} coincide", a.id, b.id)));
                }
                pairs.push(PairCandidate {
                    a: a.id,
                    b: b.id,
                    geodesic,
                    euclidean,
                    probability: provider.symmetric(a.id, b.id)?,
                    z_a: a.position.z,
                    z_b: b.position.z,
                });
            }
        }
        Ok(Self {
            env_id: env.id.clone(),
            nodes,
            pairs,
        })
    }

    /// Pair-rule edges only (no connectivity repair).
    pub fn rule_edges(&self, params: &EdgeRuleParams) -> Result<EdgeSet> {
        let mut set = EdgeSet::new();
        for pair in &self.pairs {
            if pair.passes(params)? {
                set.insert(edge_key(pair.a, pair.b));
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: NavGraph,
    pub rule_edges: EdgeSet,
    pub mst_edges: EdgeSet,
}

pub fn build_graph(
    env: &Environment,
    provider: &EdgeProbabilityProvider,
    params: &EdgeRuleParams,
) -> Result<BuiltGraph> {
    build_from_table(&PairTable::compute(env, provider)?, params)
}

/// Pair-rule edges ∪ MST over all reachable pairs weighted by
/// `max(0, λ_d·g/s − λ_p·p)`.
pub fn build_from_table(table: &PairTable, params: &EdgeRuleParams) -> Result<BuiltGraph> {
    params.validate()?;
    if table.nodes.is_empty() {
        return Err(Error::InvalidEnvironment("environment has no panos".into()));
    }
    let rule_edges = table.rule_edges(params)?;
    let candidates: Vec<WeightedEdge> = table
        .pairs
        .iter()
        .filter_map(|pair| {
            let g = pair.effective_geodesic()?;
            Some(WeightedEdge {
                a: pair.a,
                b: pair.b,
                weight: params.first_term(g, pair.euclidean, pair.probability).max(0.0),
            })
        })
        .collect();
    let ids: Vec<NodeId> = table.nodes.iter().map(|n| n.id).collect();
    let tree = minimum_spanning_tree(&ids, &candidates).map_err(|e| match e {
        Error::Disconnected { components } => Error::InvalidEnvironment(format!(
            "panos are geodesically unreachable from each other: components {components:?}"
        )),
        other => other,
    })?;
    let mst_edges: EdgeSet = tree.iter().map(|e| edge_key(e.a, e.b)).collect();
    let graph = NavGraph::new(table.nodes.clone(), rule_edges.union(&mst_edges).copied())?;
    Ok(BuiltGraph {
        graph,
        rule_edges,
        mst_edges,
    })
}

/// `{0, 0.1, …, 3.0}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=30).map(|k| k as f64 / 10.0).collect()
}

/// A pair table together with the reference edges it is scored against.
#[derive(Debug, Clone)]
pub struct LabeledTable {
    pub table: PairTable,
    pub reference: EdgeSet,
}

impl LabeledTable {
    pub fn from_env(env: &Environment, provider: &EdgeProbabilityProvider) -> Result<Self> {
        Ok(Self {
            table: PairTable::compute(env, provider)?,
            reference: env.reference_graph.edge_set(),
        })
    }
}

/// Pooled pair-rule quality of `params` over `tables`.
pub fn pooled_quality(tables: &[LabeledTable], params: &EdgeRuleParams) -> Result<GraphQuality> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for t in tables {
        let q = quality_from_sets(&t.table.rule_edges(params)?, &t.reference);
        tp += q.tp;
        fp += q.fp;
        fn_ += q.fn_;
    }
    Ok(GraphQuality::from_counts(tp, fp, fn_))
}

/// Exhaustive search for the `(λ_d, λ_p)` maximizing pooled pair-rule F1.
/// Ties go to the smaller `λ_d`, then the smaller `λ_p`.
pub fn grid_search(
    tables: &[LabeledTable],
    lambda_d_grid: &[f64],
    lambda_p_grid: &[f64],
) -> Result<(EdgeRuleParams, GraphQuality)> {
    if tables.is_empty() || lambda_d_grid.is_empty() || lambda_p_grid.is_empty() {
        return Err(Error::Domain("grid search needs environments and non-empty grids".into()));
    }
    let mut points: Vec<EdgeRuleParams> = lambda_d_grid
        .iter()
        .flat_map(|&d| lambda_p_grid.iter().map(move |&p| EdgeRuleParams::new(d, p)))
        .collect();
    points.sort_by(|x, y| x.lambda_d.total_cmp(&y.lambda_d).then(x.lambda_p.total_cmp(&y.lambda_p)));
    let scores = points
        .par_iter()
        .map(|params| pooled_quality(tables, params))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, q) in scores.iter().enumerate() {
        if q.f1 > scores[best].f1 {
            best = i;
        }
    }
    Ok((points[best], scores[best]))
}

/// Summary statistics of a navigation graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub mean_degree: f64,
    pub median_degree: f64,
    pub mean_edge_length: f64,
    pub median_edge_length: f64,
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

pub fn graph_stats<'a>(graphs: impl IntoIterator<Item = &'a NavGraph>) -> GraphStats {
    let mut degrees = Vec::new();
    let mut lengths = Vec::new();
    for g in graphs {
        for id in g.node_ids() {
            degrees.push(g.degree(id).expect("own node") as f64);
        }
        lengths.extend(g.edges().iter().map(|e| e.length));
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    GraphStats {
        nodes: degrees.len(),
        edges: lengths.len(),
        mean_degree: mean(&degrees),
        median_degree: median(degrees),
        mean_edge_length: mean(&lengths),
        median_edge_length: median(lengths),
    }
}
