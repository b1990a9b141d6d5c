//! Path-fidelity metrics over graph geodesics.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::nav_graph::{NavGraph, NodeId};
use crate::{Error, Result};

pub const SUCCESS_THRESHOLD_M: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ne_m: f64,
    pub success: bool,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub first_error_step: Option<usize>,
}

fn geodesic(graph: &NavGraph, a: NodeId, b: NodeId) -> Result<f64> {
    graph.shortest_distance(a, b)?.ok_or(Error::Unreachable { from: a, to: b })
}

pub fn navigation_error(graph: &NavGraph, last: NodeId, goal: NodeId) -> Result<f64> {
    geodesic(graph, last, goal)
}

pub fn success(ne_m: f64) -> bool {
    ne_m < SUCCESS_THRESHOLD_M
}

pub fn spl(success: bool, shortest_len: f64, traveled_len: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = shortest_len.max(traveled_len);
    if denom == 0.0 {
        1.0
    } else {
        shortest_len / denom
    }
}

/// Length of a walk in which a repeated node is a zero-length stay.
fn walk_length(graph: &NavGraph, path: &[NodeId]) -> Option<f64> {
    path.windows(2)
        .filter(|w| w[0] != w[1])
        .try_fold(0.0, |acc, w| graph.edge_length(w[0], w[1]).map(|l| acc + l))
}

/// Returns the walk length.
fn check_path(graph: &NavGraph, path: &[NodeId], what: &str) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::InvalidTrajectory(format!("{what} path is empty")));
    }
    if path.iter().any(|&n| !graph.contains(n)) {
        return Err(Error::InvalidTrajectory(format!("{what} path {path:?} has unknown nodes")));
    }
    walk_length(graph, path)
        .ok_or_else(|| Error::InvalidTrajectory(format!("{what} path {path:?} is not a walk in the graph")))
}

/// Dynamic time warping cost between two node paths, with geodesic
/// distance as the local cost.
pub fn dtw(pred: &[NodeId], reference: &[NodeId], graph: &NavGraph) -> Result<f64> {
    check_path(graph, pred, "predicted")?;
    check_path(graph, reference, "reference")?;
    let mut from_ref: HashMap<NodeId, Vec<f64>> = HashMap::new();
    for &r in reference {
        if let Entry::Vacant(slot) = from_ref.entry(r) {
            slot.insert(graph.distances_from(r)?);
        }
    }
    let pred_idx: Vec<usize> = pred.iter().map(|&p| graph.index_of(p)).collect::<Result<_>>()?;
    let cost = |i: usize, j: usize| -> Result<f64> {
        let d = from_ref[&reference[j]][pred_idx[i]];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Unreachable { from: pred[i], to: reference[j] })
        }
    };
    let (n, m) = (pred.len(), reference.len());
    let mut table = vec![vec![f64::INFINITY; m + 1]; n + 1];
    table[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = table[i - 1][j].min(table[i][j - 1]).min(table[i - 1][j - 1]);
            table[i][j] = cost(i - 1, j - 1)? + best;
        }
    }
    Ok(table[n][m])
}

pub fn ndtw(pred: &[NodeId], reference: &[NodeId], graph: &NavGraph) -> Result<f64> {
    ndtw_with(pred, reference, graph, SUCCESS_THRESHOLD_M)
}

pub fn ndtw_with(pred: &[NodeId], reference: &[NodeId], graph: &NavGraph, threshold: f64) -> Result<f64> {
    let cost = dtw(pred, reference, graph)?;
    Ok((-cost / (reference.len() as f64 * threshold)).exp())
}

pub fn sdtw(pred: &[NodeId], reference: &[NodeId], graph: &NavGraph) -> Result<f64> {
    let nd = ndtw(pred, reference, graph)?;
    let ne = navigation_error(graph, pred[pred.len() - 1], reference[reference.len() - 1])?;
    Ok(if success(ne) { nd } else { 0.0 })
}

/// First step at which the paths differ; a strict prefix diverges at its
/// own length. `None` for identical paths.
pub fn first_error_step(pred: &[NodeId], reference: &[NodeId]) -> Option<usize> {
    match pred.iter().zip(reference).position(|(a, b)| a != b) {
        Some(t) => Some(t),
        None if pred.len() == reference.len() => None,
        None => Some(pred.len().min(reference.len())),
    }
}

/// All metrics for one episode. SPL's shortest length is measured from the
/// episode's actual start, which may differ from the reference start.
pub fn evaluate_episode(graph: &NavGraph, pred: &[NodeId], reference: &[NodeId]) -> Result<EvalResult> {
    let traveled = check_path(graph, pred, "predicted")?;
    check_path(graph, reference, "reference")?;
    let goal = *reference.last().expect("checked non-empty");
    let ne_m = navigation_error(graph, *pred.last().expect("checked non-empty"), goal)?;
    let ok = success(ne_m);
    let shortest = geodesic(graph, pred[0], goal)?;
    let ndtw = ndtw(pred, reference, graph)?;
    Ok(EvalResult {
        ne_m,
        success: ok,
        spl: spl(ok, shortest, traveled),
        ndtw,
        sdtw: if ok { ndtw } else { 0.0 },
        first_error_step: first_error_step(pred, reference),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub episodes: usize,
    pub ne_m: f64,
    /// Success rate in percent.
    pub sr: f64,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    /// Episode count per first-error step.
    pub first_error_histogram: BTreeMap<usize, usize>,
    /// Episodes that matched the reference exactly.
    pub no_error: usize,
}

pub fn aggregate(results: &[EvalResult]) -> Result<AggregateMetrics> {
    if results.is_empty() {
        return Err(Error::Domain("cannot aggregate zero episodes".into()));
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&EvalResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let mut first_error_histogram = BTreeMap::new();
    let mut no_error = 0;
    for r in results {
        match r.first_error_step {
            Some(t) => *first_error_histogram.entry(t).or_insert(0) += 1,
            None => no_error += 1,
        }
    }
    Ok(AggregateMetrics {
        episodes: results.len(),
        ne_m: mean(&|r| r.ne_m),
        sr: 100.0 * mean(&|r| if r.success { 1.0 } else { 0.0 }),
        spl: mean(&|r| r.spl),
        ndtw: mean(&|r| r.ndtw),
        sdtw: mean(&|r| r.sdtw),
        first_error_histogram,
        no_error,
    })
}
