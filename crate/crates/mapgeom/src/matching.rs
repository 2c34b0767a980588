//! Point-order-agnostic bipartite matching between predicted and ground-truth
//! maps.
//!
//! A polyline does not have one canonical point sequence: an open instance can
//! be traversed in either direction, and a closed instance can additionally
//! start anywhere. Supervision must therefore not depend on which member of
//! that equivalence set the annotation happens to store. Matching handles this
//! by scoring every prediction/ground-truth pair at the *cheapest* equivalent
//! ordering of the ground-truth points, and remembering that ordering so the
//! losses can align points consistently.
//!
//! Instance-level assignment is a rectangular minimum-cost matching of
//! cardinality `min(num_preds, num_gts)` solved with the Jonker-Volgenant
//! shortest-augmenting-path scheme. Rows and columns are scanned in ascending
//! index order with strict improvement, so equal-cost optima resolve the same
//! way on every run and platform. A large constant penalty keeps
//! category-mismatched pairs out of the solution whenever any same-category
//! alternative exists, without making them infeasible when nothing else is
//! available.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{MapInstance, Polyline, VectorMap};
use crate::scalar::{cast, Scalar};

/// Added to the point cost of a pair whose categories differ. Large enough to
/// dominate any geometric cost in the normalized frame.
pub const CLASS_MISMATCH_PENALTY: f64 = 1e6;

/// One matched prediction/ground-truth pair.
///
/// `order` is the chosen ground-truth point ordering: ground-truth point
/// `order[j]` aligns with prediction point `j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchedPair<T> {
    pub pred: usize,
    pub gt: usize,
    pub order: Vec<usize>,
    pub cost: T,
}

/// Output of [`hungarian_match`]: pairs sorted by prediction index, plus the
/// predictions left unmatched (when there are more predictions than ground
/// truths).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult<T> {
    pub pairs: Vec<MatchedPair<T>>,
    pub unmatched_preds: Vec<usize>,
}

impl<T: Scalar> MatchResult<T> {
    /// Sum of matched pair costs (penalties included).
    pub fn total_cost(&self) -> T {
        self.pairs
            .iter()
            .map(|p| p.cost)
            .fold(T::zero(), |a, b| a + b)
    }
}

/// Enumerates the point orderings equivalent to the stored one.
///
/// Open polylines: identity and full reversal. Closed polylines: all cyclic
/// shifts of the identity and of the reversal, with duplicates removed
/// (first occurrence kept). Each ordering is a permutation `sigma` such that
/// the reordered polyline takes point `sigma[j]` at position `j`.
pub fn point_order_variants<T: Scalar>(polyline: &Polyline<T>) -> Vec<Vec<usize>> {
    let n = polyline.num_points();
    let identity: Vec<usize> = (0..n).collect();
    let reversed: Vec<usize> = (0..n).rev().collect();
    let mut variants: Vec<Vec<usize>> = Vec::new();
    if polyline.closed() {
        for k in 0..n {
            variants.push((0..n).map(|j| (j + k) % n).collect());
        }
        for k in 0..n {
            variants.push((0..n).map(|j| (reversed[j] + k) % n).collect());
        }
    } else {
        variants.push(identity);
        variants.push(reversed);
    }
    let mut seen = std::collections::HashSet::new();
    variants.retain(|v| seen.insert(v.clone()));
    variants
}

/// Cost of pairing `pred` with `gt`: the minimum over equivalent ground-truth
/// orderings of the summed pointwise L1 distance, plus
/// [`CLASS_MISMATCH_PENALTY`] if the categories differ. Returns the cost and
/// the minimizing ordering (first minimizer in enumeration order on ties).
///
/// The L1 point distance is deliberately *not* pose-invariant: matching runs
/// in the shared frame of a single scene, where absolute position is exactly
/// the information that separates instances.
pub fn instance_cost<T: Scalar>(
    pred: &MapInstance<T>,
    gt: &MapInstance<T>,
) -> Result<(T, Vec<usize>)> {
    let n = pred.polyline.num_points();
    if gt.polyline.num_points() != n {
        return Err(Error::PointCountMismatch {
            left: n,
            right: gt.polyline.num_points(),
            context: "instance cost".into(),
        });
    }
    let pred_pts = pred.polyline.points();
    let gt_pts = gt.polyline.points();
    let mut best_cost = T::infinity();
    let mut best_order: Vec<usize> = Vec::new();
    for order in point_order_variants(&gt.polyline) {
        let mut cost = T::zero();
        for (j, &g) in order.iter().enumerate() {
            let d = pred_pts[j] - gt_pts[g];
            cost += d.x.abs() + d.y.abs();
        }
        if cost < best_cost {
            best_cost = cost;
            best_order = order;
        }
    }
    if pred.category != gt.category {
        best_cost += cast::<T>(CLASS_MISMATCH_PENALTY);
    }
    Ok((best_cost, best_order))
}

/// Minimum-cost assignment between predictions and ground truths.
///
/// Every instance on the smaller side is matched; extra predictions (or extra
/// ground truths) stay unmatched. Errors if the two maps disagree on points
/// per instance.
pub fn hungarian_match<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
) -> Result<MatchResult<T>> {
    let np = pred.len();
    let ng = gt.len();
    if np == 0 || ng == 0 {
        return Ok(MatchResult {
            pairs: Vec::new(),
            unmatched_preds: (0..np).collect(),
        });
    }
    let n_points = pred.num_points().unwrap();
    if gt.num_points() != Some(n_points) {
        return Err(Error::PointCountMismatch {
            left: n_points,
            right: gt.num_points().unwrap(),
            context: "matching pred vs gt".into(),
        });
    }

    let mut costs = vec![vec![T::zero(); ng]; np];
    let mut orders: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); ng]; np];
    for i in 0..np {
        for j in 0..ng {
            let (c, o) = instance_cost(&pred.instances()[i], &gt.instances()[j])?;
            costs[i][j] = c;
            orders[i][j] = o;
        }
    }

    // Solve with rows = smaller side so every row gets assigned.
    let assignment: Vec<(usize, usize)> = if np <= ng {
        assign_rows(np, ng, |i, j| costs[i][j])
            .into_iter()
            .enumerate()
            .collect()
    } else {
        assign_rows(ng, np, |j, i| costs[i][j])
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect()
    };

    let mut pairs: Vec<MatchedPair<T>> = assignment
        .into_iter()
        .map(|(i, j)| MatchedPair {
            pred: i,
            gt: j,
            order: orders[i][j].clone(),
            cost: costs[i][j],
        })
        .collect();
    pairs.sort_by_key(|p| p.pred);
    let matched: std::collections::HashSet<usize> = pairs.iter().map(|p| p.pred).collect();
    let unmatched_preds = (0..np).filter(|i| !matched.contains(i)).collect();
    Ok(MatchResult {
        pairs,
        unmatched_preds,
    })
}

/// Jonker-Volgenant shortest augmenting path for `n <= m`. Returns, for each
/// row, its assigned column. Deterministic: columns are scanned in ascending
/// order and only strictly better path costs replace the incumbent.
fn assign_rows<T: Scalar>(n: usize, m: usize, cost: impl Fn(usize, usize) -> T) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based arrays with a virtual column 0, after the classical formulation.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut row_of = vec![0usize; m + 1]; // row currently assigned to column (0 = free)
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![T::infinity(); m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = T::infinity();
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    let r = row_of[j];
                    u[r] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            out[row_of[j] - 1] = j - 1;
        }
    }
    out
}
