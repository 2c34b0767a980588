//! Map-level evaluation: Chamfer distance between polylines and average
//! precision over classes and distance thresholds.
//!
//! All distances here are in **meters**: normalized `[0,1]^2` coordinates are
//! scaled through the map's [`BevExtent`] before any geometry is measured.
//! Polylines are compared after arc-length resampling to a fixed number of
//! samples, so point-count and parametrization differences between otherwise
//! identical curves do not affect the score.
//!
//! The detection protocol is deliberately simple and deterministic:
//! predictions are ranked by descending confidence (ties broken by input
//! order), and each prediction greedily claims its nearest still-unclaimed
//! ground truth if the Chamfer distance is within the threshold. Average
//! precision sums, over true-positive ranks, the best precision at or after
//! that rank, divided by the number of ground truths — for a perfect
//! prediction set this is exactly 1.0, with no interpolation-grid artifacts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{
    BevExtent, Category, MapInstance, Point2, Polyline, VectorMap, DEGENERACY_EPS,
};
use crate::scalar::{cast, KahanSum, Scalar};

/// Number of arc-length samples used when comparing polylines, unless
/// overridden in [`EvalConfig`].
pub const DEFAULT_CHAMFER_SAMPLES: usize = 100;

/// Evaluation settings: sampling density and the distance thresholds (meters)
/// at which average precision is computed.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig<T> {
    pub n_samples: usize,
    pub thresholds_m: Vec<T>,
}

impl<T: Scalar> Default for EvalConfig<T> {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_CHAMFER_SAMPLES,
            thresholds_m: vec![cast(0.5), cast(1.0), cast(1.5)],
        }
    }
}

impl<T: Scalar> EvalConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            )));
        }
        if self.thresholds_m.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one distance threshold is required".into(),
            ));
        }
        for &t in &self.thresholds_m {
            if !t.is_finite() || t <= T::zero() {
                return Err(Error::OutOfRange {
                    what: "distance threshold".into(),
                    value: t.to_f64().unwrap_or(f64::NAN),
                    range: "(0, inf)".into(),
                });
            }
        }
        Ok(())
    }
}

/// Resamples a polyline to `n_samples` points spaced uniformly in arc length.
///
/// For closed polylines the closing edge (last point back to the first) is
/// part of the traversed path, so the first and last sample coincide at the
/// start point. A polyline of zero total length collapses to `n_samples`
/// copies of its first point.
pub fn resample<T: Scalar>(
    points: &[Point2<T>],
    closed: bool,
    n_samples: usize,
) -> Result<Vec<Point2<T>>> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "n_samples must be at least 2, got {n_samples}"
        )));
    }
    if points.is_empty() {
        return Err(Error::TooFewPoints { got: 0 });
    }
    let eps = cast::<T>(DEGENERACY_EPS);
    let mut ring: Vec<Point2<T>> = points.to_vec();
    if closed {
        ring.push(points[0]);
    }
    let segs: Vec<T> = ring.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let mut total_acc = KahanSum::new();
    for &s in &segs {
        total_acc.add(s);
    }
    let total = total_acc.total();
    if segs.is_empty() || total < eps {
        return Ok(vec![points[0]; n_samples]);
    }
    let denom = cast::<T>((n_samples - 1) as f64);
    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let t = total * cast::<T>(k as f64) / denom;
        let mut acc = T::zero();
        for (i, &len) in segs.iter().enumerate() {
            if acc + len >= t || i == segs.len() - 1 {
                let mut r = if len < eps {
                    T::zero()
                } else {
                    (t - acc) / len
                };
                if r < T::zero() {
                    r = T::zero();
                } else if r > T::one() {
                    r = T::one();
                }
                let a = ring[i];
                let b = ring[i + 1];
                out.push(Point2 {
                    x: a.x + r * (b.x - a.x),
                    y: a.y + r * (b.y - a.y),
                });
                break;
            }
            acc += len;
        }
    }
    Ok(out)
}

/// Converts a polyline to meter coordinates and resamples it.
fn resample_in_meters<T: Scalar>(
    line: &Polyline<T>,
    extent: BevExtent<T>,
    n_samples: usize,
) -> Result<Vec<Point2<T>>> {
    let meters: Vec<Point2<T>> = line
        .points()
        .iter()
        .map(|&p| {
            let (x, y) = extent.to_meters(p);
            Point2 { x, y }
        })
        .collect();
    resample(&meters, line.closed(), n_samples)
}

fn mean_nearest<T: Scalar>(from: &[Point2<T>], to: &[Point2<T>]) -> T {
    let mut sum = KahanSum::new();
    for &p in from {
        let mut best = T::infinity();
        for &q in to {
            let d = (p - q).norm();
            if d < best {
                best = d;
            }
        }
        sum.add(best);
    }
    sum.total() / cast::<T>(from.len() as f64)
}

/// Symmetric Chamfer distance between two polylines, in meters.
///
/// Both curves are mapped to meters through `extent`, resampled to
/// `n_samples` arc-length-uniform points, and compared as point sets: the
/// result is half the sum of the two directed mean-nearest-neighbor
/// distances. Identical polylines give exactly zero.
pub fn chamfer_distance<T: Scalar>(
    a: &Polyline<T>,
    b: &Polyline<T>,
    extent: BevExtent<T>,
    n_samples: usize,
) -> Result<T> {
    let ra = resample_in_meters(a, extent, n_samples)?;
    let rb = resample_in_meters(b, extent, n_samples)?;
    let d_ab = mean_nearest(&ra, &rb);
    let d_ba = mean_nearest(&rb, &ra);
    Ok(cast::<T>(0.5) * (d_ab + d_ba))
}

/// Per-class AP values and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ApResult<T> {
    /// For every category, `(threshold_m, average_precision)` in threshold
    /// order.
    pub per_class: BTreeMap<Category, Vec<(T, T)>>,
    /// Mean over all class/threshold cells.
    pub m_ap: T,
}

/// Ranks prediction indices by descending score, ties by ascending index.
/// Errors if any prediction lacks a score.
fn ranked_order<T: Scalar>(preds: &[&MapInstance<T>]) -> Result<Vec<usize>> {
    let mut scores = Vec::with_capacity(preds.len());
    for (i, p) in preds.iter().enumerate() {
        match p.score {
            Some(s) => scores.push(s),
            None => {
                return Err(Error::MissingInput(format!(
                    "prediction {i} has no confidence score"
                )))
            }
        }
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    Ok(order)
}

/// Chamfer distances for every prediction/ground-truth pair of one class.
fn chamfer_matrix<T: Scalar>(
    preds: &[&MapInstance<T>],
    gts: &[&MapInstance<T>],
    extent: BevExtent<T>,
    n_samples: usize,
) -> Result<Vec<Vec<T>>> {
    let gt_samples: Vec<Vec<Point2<T>>> = gts
        .iter()
        .map(|g| resample_in_meters(&g.polyline, extent, n_samples))
        .collect::<Result<_>>()?;
    let mut matrix = Vec::with_capacity(preds.len());
    for p in preds {
        let ps = resample_in_meters(&p.polyline, extent, n_samples)?;
        let mut row = Vec::with_capacity(gts.len());
        for gs in &gt_samples {
            let d_ab = mean_nearest(&ps, gs);
            let d_ba = mean_nearest(gs, &ps);
            row.push(cast::<T>(0.5) * (d_ab + d_ba));
        }
        matrix.push(row);
    }
    Ok(matrix)
}

/// AP from a precomputed distance matrix; `order` ranks predictions.
fn ap_from_matrix<T: Scalar>(matrix: &[Vec<T>], order: &[usize], n_gt: usize, threshold_m: T) -> T {
    if n_gt == 0 {
        return if order.is_empty() {
            T::one()
        } else {
            T::zero()
        };
    }
    if order.is_empty() {
        return T::zero();
    }
    let mut claimed = vec![false; n_gt];
    let mut is_tp = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp_count = 0usize;
    for (rank, &pi) in order.iter().enumerate() {
        let mut best: Option<(T, usize)> = None;
        for (gi, row_claimed) in claimed.iter().enumerate() {
            if *row_claimed {
                continue;
            }
            let d = matrix[pi][gi];
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, gi));
            }
        }
        let tp = match best {
            Some((d, gi)) if d <= threshold_m => {
                claimed[gi] = true;
                true
            }
            _ => false,
        };
        if tp {
            tp_count += 1;
        }
        is_tp.push(tp);
        precision.push(cast::<T>(tp_count as f64) / cast::<T>((rank + 1) as f64));
    }
    // Best precision at or after each rank.
    let mut suffix = precision;
    for k in (0..suffix.len() - 1).rev() {
        if suffix[k + 1] > suffix[k] {
            suffix[k] = suffix[k + 1];
        }
    }
    let mut sum = KahanSum::new();
    for (k, &tp) in is_tp.iter().enumerate() {
        if tp {
            sum.add(suffix[k]);
        }
    }
    sum.total() / cast::<T>(n_gt as f64)
}

/// Average precision for one class at one distance threshold (meters).
///
/// Conventions for empty sides: no ground truths and no predictions is a
/// perfect 1.0; predictions against no ground truths score 0.0; no
/// predictions against existing ground truths score 0.0.
pub fn average_precision<T: Scalar>(
    preds: &[&MapInstance<T>],
    gts: &[&MapInstance<T>],
    threshold_m: T,
    extent: BevExtent<T>,
    n_samples: usize,
) -> Result<T> {
    if !threshold_m.is_finite() || threshold_m <= T::zero() {
        return Err(Error::OutOfRange {
            what: "distance threshold".into(),
            value: threshold_m.to_f64().unwrap_or(f64::NAN),
            range: "(0, inf)".into(),
        });
    }
    let order = ranked_order(preds)?;
    let matrix = chamfer_matrix(preds, gts, extent, n_samples)?;
    Ok(ap_from_matrix(&matrix, &order, gts.len(), threshold_m))
}

/// Mean average precision of a predicted map against ground truth.
///
/// AP is computed for every category and every configured threshold; the
/// mean over all cells is `m_ap`. Classes absent from both maps count as
/// 1.0 (nothing to detect, nothing hallucinated). The two maps must share
/// the same BEV extent.
pub fn map_score<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    config: &EvalConfig<T>,
) -> Result<ApResult<T>> {
    config.validate()?;
    if pred.bev_extent() != gt.bev_extent() {
        return Err(Error::DimensionMismatch {
            context: "prediction and ground-truth BEV extents differ".into(),
        });
    }
    let extent = gt.bev_extent();
    let mut per_class = BTreeMap::new();
    let mut sum = KahanSum::new();
    let mut cells = 0usize;
    for cat in Category::ALL {
        let p: Vec<&MapInstance<T>> = pred
            .instances()
            .iter()
            .filter(|i| i.category == cat)
            .collect();
        let g: Vec<&MapInstance<T>> = gt
            .instances()
            .iter()
            .filter(|i| i.category == cat)
            .collect();
        let order = ranked_order(&p)?;
        let matrix = chamfer_matrix(&p, &g, extent, config.n_samples)?;
        let mut rows = Vec::with_capacity(config.thresholds_m.len());
        for &thr in &config.thresholds_m {
            let ap = ap_from_matrix(&matrix, &order, g.len(), thr);
            sum.add(ap);
            cells += 1;
            rows.push((thr, ap));
        }
        per_class.insert(cat, rows);
    }
    let m_ap = sum.total() / cast::<T>(cells as f64);
    if !m_ap.is_finite() {
        return Err(Error::NonFinite {
            context: "mean average precision".into(),
        });
    }
    Ok(ApResult { per_class, m_ap })
}
