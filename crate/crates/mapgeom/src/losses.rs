//! Loss functions over matched vector maps.
//!
//! The central piece is the *Euclidean loss*: instead of penalizing raw
//! coordinate error (which changes whenever the frame moves), it penalizes
//! discrepancies of the pose-invariant clue encodings from
//! [`crate::geometry`]:
//!
//! * the **shape loss** compares per-instance displacement magnitudes and
//!   consecutive-displacement angles,
//! * the **relation loss** compares cross-instance angles and pairwise point
//!   distances for every matched instance pair, optionally down-weighted for
//!   pairs that are far apart in the ground truth.
//!
//! Angles are compared through their `(cos, sin)` pairs with
//! [`angle_term`] — an L1 distance on the unit circle that needs no inverse
//! trig and has bounded subgradients.
//!
//! Alongside the Euclidean loss live the conventional supervision terms:
//! focal classification, L1 point regression, and edge-direction cosine. The
//! composite [`total_loss`] mirrors the full training objective; two of its
//! slots (segmentation and depth) belong to network branches with no
//! counterpart in this library and are retained as explicit zero terms so the
//! composition formula and its weight set stay complete in one place.
//!
//! All sums run in a fixed order with compensated accumulation, so results
//! are bit-reproducible across runs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relation_clues, Polyline, RelationClues, VectorMap};
use crate::matching::{MatchResult, MatchedPair};
use crate::scalar::{cast, KahanSum, Scalar};

/// Probabilities below this are clamped before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

/// How relation-loss contributions of an instance pair are weighted.
///
/// `Equal` weights every pair by 1. `Power(p)` weights a pair by
/// `1 - (d_min / sqrt(2))^p` (clamped to `[0, 1]`), where `d_min` is the
/// smallest ground-truth point distance between the two instances: nearby
/// pairs count fully, remote pairs fade out. Supported exponents: 1, 2, 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    Equal,
    Power(u32),
}

/// Weights and hyperparameters of the composite objective.
///
/// Defaults reproduce the reference training configuration: the Euclidean
/// term enters with `lambda_euc = 0.005` and unit internal weights, the
/// conventional terms with `beta_cls = 2`, `beta_pts = 5`, `beta_dir = 0.005`,
/// and the retained zero-term slots with `beta_seg = 1`, `beta_dep = 3`.
/// Focal parameters default to `alpha = 0.25`, `gamma = 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights<T> {
    pub lambda_euc: T,
    pub lambda_shp: T,
    pub lambda_rel: T,
    pub beta_cls: T,
    pub beta_pts: T,
    pub beta_dir: T,
    pub beta_seg: T,
    pub beta_dep: T,
    pub focal_alpha: T,
    pub focal_gamma: T,
    pub weighting_mode: WeightingMode,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            lambda_euc: cast(0.005),
            lambda_shp: cast(1.0),
            lambda_rel: cast(1.0),
            beta_cls: cast(2.0),
            beta_pts: cast(5.0),
            beta_dir: cast(0.005),
            beta_seg: cast(1.0),
            beta_dep: cast(3.0),
            focal_alpha: cast(0.25),
            focal_gamma: cast(2.0),
            weighting_mode: WeightingMode::Equal,
        }
    }
}

impl<T: Scalar> LossWeights<T> {
    /// Checks ranges: weights finite and non-negative, `focal_alpha` in
    /// `(0, 1]`, `focal_gamma >= 0`, power exponent in `{1, 2, 4}`.
    pub fn validate(&self) -> Result<()> {
        let named: [(&str, T); 8] = [
            ("lambda_euc", self.lambda_euc),
            ("lambda_shp", self.lambda_shp),
            ("lambda_rel", self.lambda_rel),
            ("beta_cls", self.beta_cls),
            ("beta_pts", self.beta_pts),
            ("beta_dir", self.beta_dir),
            ("beta_seg", self.beta_seg),
            ("beta_dep", self.beta_dep),
        ];
        for (name, w) in named {
            if !w.is_finite() || w < T::zero() {
                return Err(Error::OutOfRange {
                    what: name.into(),
                    value: w.to_f64().unwrap_or(f64::NAN),
                    range: "finite, >= 0".into(),
                });
            }
        }
        if !self.focal_alpha.is_finite()
            || self.focal_alpha <= T::zero()
            || self.focal_alpha > T::one()
        {
            return Err(Error::OutOfRange {
                what: "focal_alpha".into(),
                value: self.focal_alpha.to_f64().unwrap_or(f64::NAN),
                range: "(0, 1]".into(),
            });
        }
        if !self.focal_gamma.is_finite() || self.focal_gamma < T::zero() {
            return Err(Error::OutOfRange {
                what: "focal_gamma".into(),
                value: self.focal_gamma.to_f64().unwrap_or(f64::NAN),
                range: ">= 0".into(),
            });
        }
        if let WeightingMode::Power(p) = self.weighting_mode {
            if !matches!(p, 1 | 2 | 4) {
                return Err(Error::InvalidConfig(format!(
                    "weighting power {p} not in {{1, 2, 4}}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term values of one composite-loss evaluation.
///
/// `euc` is always exactly `lambda_shp * shp + lambda_rel * rel`, and `total`
/// exactly the weighted sum including the two retained zero slots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown<T> {
    pub shp: T,
    pub rel: T,
    pub euc: T,
    pub cls: T,
    pub pts: T,
    pub dir: T,
    pub total: T,
}

/// L1 distance between two angles represented as `(cos, sin)` pairs:
/// `|cos a - cos b| + |sin a - sin b|`.
#[inline]
pub fn angle_term<T: Scalar>(cos_a: T, sin_a: T, cos_b: T, sin_b: T) -> T {
    (cos_a - cos_b).abs() + (sin_a - sin_b).abs()
}

/// Relation-pair weight for the given ground-truth clues; see
/// [`WeightingMode`].
pub fn distance_weight<T: Scalar>(gt_clues: &RelationClues<T>, mode: WeightingMode) -> T {
    match mode {
        WeightingMode::Equal => T::one(),
        WeightingMode::Power(p) => {
            let mut min_d = T::infinity();
            for &d in gt_clues.distances.iter() {
                if d < min_d {
                    min_d = d;
                }
            }
            let w = T::one() - (min_d / T::SQRT_2()).powi(p as i32);
            w.max(T::zero()).min(T::one())
        }
    }
}

// ---------------------------------------------------------------------------
// Matched-pair plumbing shared with the gradient module
// ---------------------------------------------------------------------------

/// Prediction instance and its order-aligned ground-truth polyline for one
/// matched pair.
pub(crate) struct AlignedPair<'a, T> {
    pub pred: &'a Polyline<T>,
    pub gt: Polyline<T>,
    pub pred_index: usize,
    pub pred_category: crate::geometry::Category,
    pub gt_category: crate::geometry::Category,
    pub pred_score: Option<T>,
}

/// Resolves match pairs against both maps, applying the per-pair ground-truth
/// point ordering. Validates every index.
pub(crate) fn aligned_pairs<'a, T: Scalar>(
    pred: &'a VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
) -> Result<Vec<AlignedPair<'a, T>>> {
    let mut out = Vec::with_capacity(m.pairs.len());
    for pair in &m.pairs {
        out.push(aligned_pair(pred, gt, pair)?);
    }
    Ok(out)
}

fn aligned_pair<'a, T: Scalar>(
    pred: &'a VectorMap<T>,
    gt: &VectorMap<T>,
    pair: &MatchedPair<T>,
) -> Result<AlignedPair<'a, T>> {
    let p = pred
        .instances()
        .get(pair.pred)
        .ok_or(Error::IndexOutOfBounds {
            what: "matched prediction".into(),
            index: pair.pred,
            len: pred.len(),
        })?;
    let g = gt.instances().get(pair.gt).ok_or(Error::IndexOutOfBounds {
        what: "matched ground truth".into(),
        index: pair.gt,
        len: gt.len(),
    })?;
    let aligned = g.polyline.reordered(&pair.order)?;
    if aligned.num_points() != p.polyline.num_points() {
        return Err(Error::PointCountMismatch {
            left: p.polyline.num_points(),
            right: aligned.num_points(),
            context: format!("matched pair ({}, {})", pair.pred, pair.gt),
        });
    }
    Ok(AlignedPair {
        pred: &p.polyline,
        gt: aligned,
        pred_index: pair.pred,
        pred_category: p.category,
        gt_category: g.category,
        pred_score: p.score,
    })
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// Shape discrepancy summed over matched pairs: for every displacement index,
/// `|mag_pred - mag_gt| + angle_term(...)`. Angle terms where either side is
/// degenerate contribute zero (their direction carries no information and
/// would have unbounded gradients). Unmatched instances contribute nothing.
pub fn shape_loss<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
) -> Result<T> {
    let pairs = aligned_pairs(pred, gt, m)?;
    let mut acc = KahanSum::new();
    for pair in &pairs {
        let pc = pair.pred.shape_clues();
        let gc = pair.gt.shape_clues();
        for u in 0..pc.len() {
            acc.add((pc.magnitudes[u] - gc.magnitudes[u]).abs());
            if !(pc.degenerate[u] || gc.degenerate[u]) {
                acc.add(angle_term(
                    pc.angle_cos[u],
                    pc.angle_sin[u],
                    gc.angle_cos[u],
                    gc.angle_sin[u],
                ));
            }
        }
    }
    Ok(acc.total())
}

/// Relation discrepancy summed over unordered pairs of matched instances:
/// for every displacement/point index pair, `|dist_pred - dist_gt| +
/// angle_term(...)`, scaled by the pair's [`distance_weight`] computed from
/// the *ground-truth* clues (so the weighting is part of the target, not of
/// the current estimate). Degenerate angle entries contribute zero.
pub fn relation_loss<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
    w: &LossWeights<T>,
) -> Result<T> {
    let pairs = aligned_pairs(pred, gt, m)?;
    let mut acc = KahanSum::new();
    for k in 0..pairs.len() {
        for l in (k + 1)..pairs.len() {
            let rc_pred = relation_clues(pairs[k].pred, pairs[l].pred)?;
            let rc_gt = relation_clues(&pairs[k].gt, &pairs[l].gt)?;
            let weight = distance_weight(&rc_gt, w.weighting_mode);
            let mut pair_acc = KahanSum::new();
            let n = pairs[k].pred.num_points();
            for u in 0..n {
                for v in 0..n {
                    pair_acc.add((rc_pred.distances[(u, v)] - rc_gt.distances[(u, v)]).abs());
                    if !(rc_pred.degenerate[(u, v)] || rc_gt.degenerate[(u, v)]) {
                        pair_acc.add(angle_term(
                            rc_pred.angle_cos[(u, v)],
                            rc_pred.angle_sin[(u, v)],
                            rc_gt.angle_cos[(u, v)],
                            rc_gt.angle_sin[(u, v)],
                        ));
                    }
                }
            }
            acc.add(weight * pair_acc.total());
        }
    }
    Ok(acc.total())
}

/// The pose-invariant loss: `lambda_shp * shape + lambda_rel * relation`.
pub fn euclidean_loss<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
    w: &LossWeights<T>,
) -> Result<T> {
    Ok(w.lambda_shp * shape_loss(pred, gt, m)? + w.lambda_rel * relation_loss(pred, gt, m, w)?)
}

/// Focal classification loss: `sum_i -alpha * (1 - p_i)^gamma * ln(p_i)`,
/// where `p_i` is row `i`'s probability at its true class, clamped below at
/// [`PROB_CLAMP`]. Rows must be probability vectors (entries in `[0, 1]`,
/// summing to 1 within 1e-6). With `gamma = 0`, `alpha = 1` this reduces to
/// plain cross-entropy.
pub fn focal_cls_loss<T: Scalar>(
    probs: &Array2<T>,
    labels: &[usize],
    w: &LossWeights<T>,
) -> Result<T> {
    let (rows, cols) = probs.dim();
    if labels.len() != rows {
        return Err(Error::DimensionMismatch {
            context: format!("{} probability rows vs {} labels", rows, labels.len()),
        });
    }
    let tol = cast::<T>(1e-6);
    for i in 0..rows {
        let mut sum = T::zero();
        for j in 0..cols {
            let p = probs[(i, j)];
            if !p.is_finite() || p < T::zero() || p > T::one() {
                return Err(Error::OutOfRange {
                    what: format!("probability ({i}, {j})"),
                    value: p.to_f64().unwrap_or(f64::NAN),
                    range: "[0, 1]".into(),
                });
            }
            sum += p;
        }
        if (sum - T::one()).abs() > tol {
            return Err(Error::OutOfRange {
                what: format!("probability row {i} sum"),
                value: sum.to_f64().unwrap_or(f64::NAN),
                range: "1 +- 1e-6".into(),
            });
        }
    }
    let clamp = cast::<T>(PROB_CLAMP);
    let mut acc = KahanSum::new();
    for (i, &label) in labels.iter().enumerate() {
        if label >= cols {
            return Err(Error::IndexOutOfBounds {
                what: "class label".into(),
                index: label,
                len: cols,
            });
        }
        let p = probs[(i, label)].max(clamp);
        acc.add(-w.focal_alpha * (T::one() - p).powf(w.focal_gamma) * p.ln());
    }
    Ok(acc.total())
}

/// L1 point regression: summed `|dx| + |dy|` over matched, order-aligned
/// point pairs.
pub fn point_loss<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
) -> Result<T> {
    let pairs = aligned_pairs(pred, gt, m)?;
    let mut acc = KahanSum::new();
    for pair in &pairs {
        for (p, g) in pair.pred.points().iter().zip(pair.gt.points()) {
            let d = *p - *g;
            acc.add(d.x.abs() + d.y.abs());
        }
    }
    Ok(acc.total())
}

/// Edge-direction loss: negative cosine similarity between corresponding
/// displacement vectors, summed over matched pairs. Terms where either
/// displacement is degenerate are skipped. Identical maps give exactly
/// `-(instances * points_per_instance)`.
pub fn edge_direction_loss<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
) -> Result<T> {
    let eps = cast::<T>(crate::geometry::DEGENERACY_EPS);
    let pairs = aligned_pairs(pred, gt, m)?;
    let mut acc = KahanSum::new();
    for pair in &pairs {
        let pv = pair.pred.displacement_vectors();
        let gv = pair.gt.displacement_vectors();
        for (a, b) in pv.iter().zip(&gv) {
            let ma = a.norm();
            let mb = b.norm();
            if ma < eps || mb < eps {
                continue;
            }
            acc.add(-(a.dot(*b) / (ma * mb)));
        }
    }
    Ok(acc.total())
}

/// Builds the synthetic classification problem for [`total_loss`]: each
/// matched prediction's row puts its score (1 when absent) on its own
/// category and splits the rest evenly over the other classes; the label is
/// the matched ground truth's category.
pub(crate) fn classification_problem<T: Scalar>(
    pairs: &[AlignedPair<'_, T>],
) -> (Array2<T>, Vec<usize>) {
    let n_classes = crate::geometry::Category::ALL.len();
    let mut probs = Array2::zeros((pairs.len(), n_classes));
    let mut labels = Vec::with_capacity(pairs.len());
    let half = cast::<T>(0.5);
    for (i, pair) in pairs.iter().enumerate() {
        let s = pair.pred_score.unwrap_or_else(T::one);
        let rest = (T::one() - s) * half;
        for c in 0..n_classes {
            probs[(i, c)] = if c == pair.pred_category.index() {
                s
            } else {
                rest
            };
        }
        labels.push(pair.gt_category.index());
    }
    (probs, labels)
}

/// Evaluates the full composite objective:
///
/// `total = lambda_euc * euc + beta_cls * cls + beta_pts * pts
///        + beta_dir * dir + beta_seg * 0 + beta_dep * 0`
///
/// with `euc = lambda_shp * shp + lambda_rel * rel`. Classification
/// probabilities are synthesized from categories and scores — the score (1
/// when absent) on the own category, the remainder split evenly; only
/// coordinates feed the other terms, so `cls` is constant during coordinate
/// fitting. Errors if any component comes out non-finite.
pub fn total_loss<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
    w: &LossWeights<T>,
) -> Result<LossBreakdown<T>> {
    w.validate()?;
    let shp = shape_loss(pred, gt, m)?;
    let rel = relation_loss(pred, gt, m, w)?;
    let euc = w.lambda_shp * shp + w.lambda_rel * rel;
    let pairs = aligned_pairs(pred, gt, m)?;
    let (probs, labels) = classification_problem(&pairs);
    let cls = focal_cls_loss(&probs, &labels, w)?;
    let pts = point_loss(pred, gt, m)?;
    let dir = edge_direction_loss(pred, gt, m)?;
    let total = w.lambda_euc * euc
        + w.beta_cls * cls
        + w.beta_pts * pts
        + w.beta_dir * dir
        + w.beta_seg * T::zero()
        + w.beta_dep * T::zero();
    let breakdown = LossBreakdown {
        shp,
        rel,
        euc,
        cls,
        pts,
        dir,
        total,
    };
    if !total.is_finite() {
        return Err(Error::NumericalFailure {
            context: format!("total loss = {total}"),
        });
    }
    Ok(breakdown)
}
