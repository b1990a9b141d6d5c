//! Exact open-path TSP over a handful of waypoints: the cheapest order to
//! visit every waypoint once, with graph shortest-path distances between
//! consecutive waypoints and no return to the start.

use crate::nav_graph::{NavGraph, NodeId};
use crate::{Error, Result};

/// Up to this many waypoints are solved by permutation enumeration; larger
/// sets use Held–Karp.
pub const MAX_ENUMERATION_WAYPOINTS: usize = 6;
pub const MAX_WAYPOINTS: usize = 12;

/// Costs within this relative margin of the optimum count as ties and are
/// resolved towards the lexicographically smallest id sequence.
const TIE_TOLERANCE: f64 = 1e-9;

fn within_tie(cost: f64, best: f64) -> bool {
    cost <= best + TIE_TOLERANCE * best.abs().max(1.0)
}

/// Symmetric pairwise shortest-path distances between sorted waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointDistances {
    ids: Vec<NodeId>,
    dist: Vec<f64>,
}

impl WaypointDistances {
    pub fn compute(graph: &NavGraph, waypoints: &[NodeId]) -> Result<Self> {
        let mut ids = waypoints.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(Error::Domain(format!("need at least 2 distinct waypoints, got {}", ids.len())));
        }
        if ids.len() > MAX_WAYPOINTS {
            return Err(Error::Unsupported(format!(
                "{} waypoints exceeds the exact-solver limit of {MAX_WAYPOINTS}",
                ids.len()
            )));
        }
        let k = ids.len();
        let mut dist = vec![0.0; k * k];
        for i in 0..k {
            let from_i = graph.distances_from(ids[i])?;
            for j in i + 1..k {
                let d = from_i[graph.index_of(ids[j])?];
                if !d.is_finite() {
                    return Err(Error::Unreachable { from: ids[i], to: ids[j] });
                }
                dist[i * k + j] = d;
                dist[j * k + i] = d;
            }
        }
        Ok(Self { ids, dist })
    }

    /// Builds from an explicit symmetric matrix (row-major, `ids` sorted).
    pub fn from_matrix(ids: Vec<NodeId>, dist: Vec<f64>) -> Result<Self> {
        let k = ids.len();
        if dist.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                actual: dist.len(),
            });
        }
        if !ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain("waypoint ids must be strictly ascending".into()));
        }
        Ok(Self { ids, dist })
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.ids.len() + j]
    }

    /// Left-to-right cost of visiting waypoints in the given index order.
    pub fn order_cost(&self, order: &[usize]) -> f64 {
        order.windows(2).fold(0.0, |acc, w| acc + self.get(w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TspTour {
    pub order: Vec<NodeId>,
    pub cost: f64,
}

pub fn tsp_order(graph: &NavGraph, waypoints: &[NodeId]) -> Result<TspTour> {
    let dist = WaypointDistances::compute(graph, waypoints)?;
    Ok(if dist.len() <= MAX_ENUMERATION_WAYPOINTS {
        solve_by_enumeration(&dist)
    } else {
        solve_held_karp(&dist)
    })
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let Some(i) = perm.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = perm.iter().rposition(|&x| x > perm[i]).expect("pivot has a successor");
    perm.swap(i, j);
    perm[i + 1..].reverse();
    true
}

/// Tries every ordering. Orderings are generated in lexicographic order,
/// which is also id order since waypoints are sorted.
pub fn solve_by_enumeration(dist: &WaypointDistances) -> TspTour {
    let mut perm: Vec<usize> = (0..dist.len()).collect();
    let mut tours = Vec::new();
    loop {
        tours.push((perm.clone(), dist.order_cost(&perm)));
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let best = tours.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let (order, cost) = tours
        .into_iter()
        .find(|t| within_tie(t.1, best))
        .expect("at least one ordering");
    TspTour {
        order: order.into_iter().map(|i| dist.ids()[i]).collect(),
        cost,
    }
}

/// Held–Karp dynamic program over (remaining set, current waypoint).
///
/// `rest[mask][i]` is the cheapest cost of starting at `i` and visiting
/// every waypoint in `mask`; the order is rebuilt front to back taking the
/// smallest index that stays optimal, which yields the lexicographically
/// smallest optimal sequence.
pub fn solve_held_karp(dist: &WaypointDistances) -> TspTour {
    let k = dist.len();
    let full = (1usize << k) - 1;
    let mut rest = vec![f64::INFINITY; (1 << k) * k];
    rest[..k].fill(0.0);
    let mut masks: Vec<usize> = (1..=full).collect();
    masks.sort_by_key(|m| m.count_ones());
    for mask in masks {
        for i in (0..k).filter(|i| mask & (1 << i) == 0) {
            let mut best = f64::INFINITY;
            for j in (0..k).filter(|j| mask & (1 << j) != 0) {
                let c = dist.get(i, j) + rest[(mask ^ (1 << j)) * k + j];
                if c < best {
                    best = c;
                }
            }
            rest[mask * k + i] = best;
        }
    }

    let optimum = (0..k).map(|i| rest[(full ^ (1 << i)) * k + i]).fold(f64::INFINITY, f64::min);
    let mut current = (0..k)
        .find(|&i| within_tie(rest[(full ^ (1 << i)) * k + i], optimum))
        .expect("some start attains the optimum");
    let mut order = vec![current];
    let mut mask = full ^ (1 << current);
    while mask != 0 {
        let target = rest[mask * k + current];
        let next = (0..k)
            .filter(|j| mask & (1 << j) != 0)
            .find(|&j| within_tie(dist.get(current, j) + rest[(mask ^ (1 << j)) * k + j], target))
            .expect("some successor attains the optimum");
        order.push(next);
        mask ^= 1 << next;
        current = next;
    }
    TspTour {
        cost: dist.order_cost(&order),
        order: order.into_iter().map(|i| dist.ids()[i]).collect(),
    }
}
