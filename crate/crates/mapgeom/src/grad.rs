//! Analytic gradient of the composite loss with respect to prediction
//! coordinates.
//!
//! Every differentiable path of [`crate::losses::total_loss`] is derived by
//! hand here: magnitude terms, the `(cos, sin)` angle terms, relation
//! distances, L1 point regression, and the direction cosine. Classification
//! depends only on categories and scores, so it never contributes. Absolute
//! values and norms are non-smooth at zero; there the subgradient 0 is used,
//! matching the convention of the loss definitions.
//!
//! Alongside the gradient, the buffer records a *near-kink* flag per
//! coordinate: a coordinate is flagged when it supports a loss term whose
//! non-smooth argument is close to zero (or whose denominators are small
//! enough to make curvature explode). Finite-difference validation skips
//! flagged coordinates — the analytic value is still well-defined there, but
//! a symmetric difference straddling a kink measures the average of two
//! slopes, not the subgradient.

use crate::error::{Error, Result};
use crate::geometry::{Point2, Vec2, VectorMap, DEGENERACY_EPS};
use crate::losses::{aligned_pairs, distance_weight, LossWeights};
use crate::matching::MatchResult;
use crate::scalar::{cast, Scalar};

/// Flag |x| terms whose argument is this close to the fold.
pub const KINK_NEAR_ABS: f64 = 1e-4;
/// Flag terms whose displacement or distance denominators are this small.
pub const KINK_SMALL_MAG: f64 = 1e-2;
/// Largest single-coordinate shift a finite-difference probe is assumed to
/// apply; trig-term flags guard the value change reachable within it.
pub const KINK_FD_STEP: f64 = 1e-6;
/// Safety multiple on that reachable change.
pub const KINK_FD_SAFETY: f64 = 8.0;

/// Gradient of the total loss for every prediction coordinate, plus per-axis
/// near-kink flags. Unmatched predictions keep zero gradient.
#[derive(Clone, Debug)]
pub struct GradientBuffer<T> {
    grads: Vec<Vec<Vec2<T>>>,
    near_kink: Vec<Vec<[bool; 2]>>,
}

impl<T: Scalar> GradientBuffer<T> {
    /// Zero gradient shaped like `map`.
    pub fn zeros(map: &VectorMap<T>) -> Self {
        let grads = map
            .instances()
            .iter()
            .map(|inst| vec![Vec2::zero(); inst.polyline.num_points()])
            .collect::<Vec<_>>();
        let near_kink = grads.iter().map(|g| vec![[false; 2]; g.len()]).collect();
        Self { grads, near_kink }
    }

    pub fn num_instances(&self) -> usize {
        self.grads.len()
    }

    pub fn num_points(&self, instance: usize) -> usize {
        self.grads[instance].len()
    }

    pub fn grad(&self, instance: usize, point: usize) -> Vec2<T> {
        self.grads[instance][point]
    }

    /// Whether finite differences at this coordinate would straddle a kink.
    pub fn is_near_kink(&self, instance: usize, point: usize, axis: usize) -> bool {
        self.near_kink[instance][point][axis]
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.x.is_finite() && g.y.is_finite())
    }

    /// Largest absolute gradient entry.
    pub fn max_abs(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.x.abs().max(g.y.abs()))
            .fold(T::zero(), |a, b| a.max(b))
    }

    fn add(&mut self, instance: usize, point: usize, g: Vec2<T>) {
        let slot = &mut self.grads[instance][point];
        *slot = *slot + g;
    }

    fn flag_point(&mut self, instance: usize, point: usize) {
        self.near_kink[instance][point] = [true, true];
    }

    fn flag_axis(&mut self, instance: usize, point: usize, axis: usize) {
        self.near_kink[instance][point][axis] = true;
    }
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// One evaluated undirected-angle term between vectors `a` and `b`: the
/// clamped `(cos, sin)` values plus the derivative vectors of each with
/// respect to `a` and `b`.
struct AngleTerm<T> {
    c: T,
    s: T,
    dcos_da: Vec2<T>,
    dcos_db: Vec2<T>,
    dsin_da: Vec2<T>,
    dsin_db: Vec2<T>,
}

impl<T: Scalar> AngleTerm<T> {
    #[inline]
    fn eval(a: Vec2<T>, b: Vec2<T>, ma: T, mb: T) -> Self {
        let denom = ma * mb;
        let inv = T::one() / denom;
        let d = a.dot(b);
        let x = a.cross(b);
        // Computed exactly as the clue encoder does, so the subgradient signs
        // are evaluated on bit-identical cos/sin values.
        let c = (d / denom).max(-T::one()).min(T::one());
        let s = (x.abs() / denom).max(T::zero()).min(T::one());
        let sx = sign(x);
        let dcos_da = (b - a.scaled(d / (ma * ma))).scaled(inv);
        let dcos_db = (a - b.scaled(d / (mb * mb))).scaled(inv);
        let dsin_da = (Vec2::new(b.y, -b.x).scaled(sx) - a.scaled(x.abs() / (ma * ma))).scaled(inv);
        let dsin_db = (Vec2::new(-a.y, a.x).scaled(sx) - b.scaled(x.abs() / (mb * mb))).scaled(inv);
        Self {
            c,
            s,
            dcos_da,
            dcos_db,
            dsin_da,
            dsin_db,
        }
    }

    /// Gradient `(d/da, d/db)` of `|cos - gc| + |sin - gs|`.
    #[inline]
    fn grad(&self, gc: T, gs: T) -> (Vec2<T>, Vec2<T>) {
        let dc = sign(self.c - gc);
        let ds = sign(self.s - gs);
        (
            self.dcos_da.scaled(dc) + self.dsin_da.scaled(ds),
            self.dcos_db.scaled(dc) + self.dsin_db.scaled(ds),
        )
    }

    /// Whether a finite-difference probe could push this term across one of
    /// its folds: the `|cos - gc|` or `|sin - gs|` kink, the `|cross|` fold
    /// at sin = 0, or a clamp boundary. A probe moves one coordinate by at
    /// most [`KINK_FD_STEP`], so cos/sin move by at most that times their
    /// local slope; only terms within [`KINK_FD_SAFETY`] times that reach of
    /// a fold are at risk. Scaling by the local slope matters: near
    /// parallelism the cosine plateaus (slope ~ 0), and a fixed radius there
    /// would flag wide swaths of well-behaved geometry.
    #[inline]
    fn near_kink(&self, gc: T, gs: T) -> bool {
        let margin = cast::<T>(KINK_FD_STEP * KINK_FD_SAFETY);
        let reach_c = margin * inf_norm(self.dcos_da, self.dcos_db);
        let reach_s = margin * inf_norm(self.dsin_da, self.dsin_db);
        (self.c - gc).abs() <= reach_c
            || T::one() - self.c <= reach_c
            || self.c + T::one() <= reach_c
            || (self.s - gs).abs() <= reach_s
            || T::one() - self.s <= reach_s
            || self.s <= reach_s
    }
}

/// Largest absolute component across two vectors.
#[inline]
fn inf_norm<T: Scalar>(u: Vec2<T>, v: Vec2<T>) -> T {
    u.x.abs().max(u.y.abs()).max(v.x.abs()).max(v.y.abs())
}

/// Computes the gradient of the composite loss at `pred` under a fixed match.
///
/// Matching is treated as constant: re-matching is a discrete event handled by
/// the fitting schedule, not by the gradient. Errors if any entry comes out
/// non-finite.
pub fn grad_total_loss<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    m: &MatchResult<T>,
    w: &LossWeights<T>,
) -> Result<GradientBuffer<T>> {
    w.validate()?;
    let pairs = aligned_pairs(pred, gt, m)?;
    let mut buf = GradientBuffer::zeros(pred);

    let shape_scale = w.lambda_euc * w.lambda_shp;
    let rel_scale = w.lambda_euc * w.lambda_rel;
    let pts_scale = w.beta_pts;
    let dir_scale = w.beta_dir;

    for pair in &pairs {
        accumulate_shape(
            &mut buf,
            pair.pred_index,
            pair.pred.points(),
            &pair.gt,
            shape_scale,
        );
        accumulate_points(
            &mut buf,
            pair.pred_index,
            pair.pred.points(),
            &pair.gt,
            pts_scale,
        );
        accumulate_direction(
            &mut buf,
            pair.pred_index,
            pair.pred.points(),
            &pair.gt,
            dir_scale,
        );
    }
    for k in 0..pairs.len() {
        for l in (k + 1)..pairs.len() {
            let rc_gt = crate::geometry::relation_clues(&pairs[k].gt, &pairs[l].gt)?;
            let weight = distance_weight(&rc_gt, w.weighting_mode);
            accumulate_relation(
                &mut buf,
                pairs[k].pred_index,
                pairs[l].pred_index,
                pairs[k].pred.points(),
                pairs[l].pred.points(),
                &rc_gt,
                rel_scale * weight,
            );
        }
    }

    if !buf.all_finite() {
        return Err(Error::NumericalFailure {
            context: "gradient".into(),
        });
    }
    Ok(buf)
}

/// Shape-loss gradient for one matched pair, scattered into instance `idx`.
fn accumulate_shape<T: Scalar>(
    buf: &mut GradientBuffer<T>,
    idx: usize,
    pred: &[Point2<T>],
    gt: &crate::geometry::Polyline<T>,
    scale: T,
) {
    if scale == T::zero() {
        return;
    }
    let eps = cast::<T>(DEGENERACY_EPS);
    let near_abs = cast::<T>(KINK_NEAR_ABS);
    let small = cast::<T>(KINK_SMALL_MAG);
    let n = pred.len();
    let v: Vec<Vec2<T>> = (0..n).map(|u| pred[(u + 1) % n] - pred[u]).collect();
    let mags: Vec<T> = v.iter().map(|d| d.norm()).collect();
    let gc = gt.shape_clues();

    for u in 0..n {
        // Magnitude term |m_u - gm_u|.
        let diff = mags[u] - gc.magnitudes[u];
        if mags[u] >= eps {
            let g = v[u].scaled(scale * sign(diff) / mags[u]);
            buf.add(idx, u, -g);
            buf.add(idx, (u + 1) % n, g);
        }
        if diff.abs() < near_abs || mags[u] < small {
            buf.flag_point(idx, u);
            buf.flag_point(idx, (u + 1) % n);
        }

        // Angle term between v_u and v_{u+1}.
        let u1 = (u + 1) % n;
        let u2 = (u + 2) % n;
        let (a, b) = (v[u], v[u1]);
        let (ma, mb) = (mags[u], mags[u1]);
        if ma < small || mb < small {
            buf.flag_point(idx, u);
            buf.flag_point(idx, u1);
            buf.flag_point(idx, u2);
        }
        if ma < eps || mb < eps || gc.degenerate[u] {
            continue;
        }
        let term = AngleTerm::eval(a, b, ma, mb);
        if term.near_kink(gc.angle_cos[u], gc.angle_sin[u]) {
            buf.flag_point(idx, u);
            buf.flag_point(idx, u1);
            buf.flag_point(idx, u2);
        }
        let (da, db) = term.grad(gc.angle_cos[u], gc.angle_sin[u]);
        let (da, db) = (da.scaled(scale), db.scaled(scale));
        buf.add(idx, u, -da);
        buf.add(idx, u1, da - db);
        buf.add(idx, u2, db);
    }
}

/// L1 point-loss gradient for one matched pair.
fn accumulate_points<T: Scalar>(
    buf: &mut GradientBuffer<T>,
    idx: usize,
    pred: &[Point2<T>],
    gt: &crate::geometry::Polyline<T>,
    scale: T,
) {
    if scale == T::zero() {
        return;
    }
    let near_abs = cast::<T>(KINK_NEAR_ABS);
    for (j, (&p, &g)) in pred.iter().zip(gt.points()).enumerate() {
        let d = p - g;
        buf.add(idx, j, Vec2::new(scale * sign(d.x), scale * sign(d.y)));
        if d.x.abs() < near_abs {
            buf.flag_axis(idx, j, 0);
        }
        if d.y.abs() < near_abs {
            buf.flag_axis(idx, j, 1);
        }
    }
}

/// Edge-direction gradient for one matched pair.
fn accumulate_direction<T: Scalar>(
    buf: &mut GradientBuffer<T>,
    idx: usize,
    pred: &[Point2<T>],
    gt: &crate::geometry::Polyline<T>,
    scale: T,
) {
    if scale == T::zero() {
        return;
    }
    let eps = cast::<T>(DEGENERACY_EPS);
    let small = cast::<T>(KINK_SMALL_MAG);
    let n = pred.len();
    let gv = gt.displacement_vectors();
    for u in 0..n {
        let a = pred[(u + 1) % n] - pred[u];
        let b = gv[u];
        let ma = a.norm();
        let mb = b.norm();
        if ma < small {
            buf.flag_point(idx, u);
            buf.flag_point(idx, (u + 1) % n);
        }
        if ma < eps || mb < eps {
            continue;
        }
        // f = -(a.b)/(ma mb); df/da = -(b - a (a.b)/ma^2) / (ma mb).
        let d = a.dot(b);
        let g = (b - a.scaled(d / (ma * ma))).scaled(-scale / (ma * mb));
        buf.add(idx, u, -g);
        buf.add(idx, (u + 1) % n, g);
    }
}

/// Relation-loss gradient for one matched instance pair (`scale` already
/// includes the pair's distance weight).
fn accumulate_relation<T: Scalar>(
    buf: &mut GradientBuffer<T>,
    idx_p: usize,
    idx_q: usize,
    p: &[Point2<T>],
    q: &[Point2<T>],
    rc_gt: &crate::geometry::RelationClues<T>,
    scale: T,
) {
    if scale == T::zero() {
        return;
    }
    let eps = cast::<T>(DEGENERACY_EPS);
    let near_abs = cast::<T>(KINK_NEAR_ABS);
    let small = cast::<T>(KINK_SMALL_MAG);
    let n = p.len();
    let vp: Vec<Vec2<T>> = (0..n).map(|u| p[(u + 1) % n] - p[u]).collect();
    let vq: Vec<Vec2<T>> = (0..n).map(|u| q[(u + 1) % n] - q[u]).collect();
    let mp: Vec<T> = vp.iter().map(|d| d.norm()).collect();
    let mq: Vec<T> = vq.iter().map(|d| d.norm()).collect();

    for u in 0..n {
        for v in 0..n {
            // Distance term |dist(P_u, Q_v) - gt|.
            let dvec = p[u] - q[v];
            let dd = dvec.norm();
            let diff = dd - rc_gt.distances[(u, v)];
            if dd >= eps {
                let g = dvec.scaled(scale * sign(diff) / dd);
                buf.add(idx_p, u, g);
                buf.add(idx_q, v, -g);
            }
            if diff.abs() < near_abs || dd < small {
                buf.flag_point(idx_p, u);
                buf.flag_point(idx_q, v);
            }

            // Angle term between vp_u and vq_v.
            let u1 = (u + 1) % n;
            let v1 = (v + 1) % n;
            let (a, b) = (vp[u], vq[v]);
            let (ma, mb) = (mp[u], mq[v]);
            if ma < small || mb < small {
                buf.flag_point(idx_p, u);
                buf.flag_point(idx_p, u1);
                buf.flag_point(idx_q, v);
                buf.flag_point(idx_q, v1);
            }
            if ma < eps || mb < eps || rc_gt.degenerate[(u, v)] {
                continue;
            }
            let term = AngleTerm::eval(a, b, ma, mb);
            if term.near_kink(rc_gt.angle_cos[(u, v)], rc_gt.angle_sin[(u, v)]) {
                buf.flag_point(idx_p, u);
                buf.flag_point(idx_p, u1);
                buf.flag_point(idx_q, v);
                buf.flag_point(idx_q, v1);
            }
            let (da, db) = term.grad(rc_gt.angle_cos[(u, v)], rc_gt.angle_sin[(u, v)]);
            let (da, db) = (da.scaled(scale), db.scaled(scale));
            buf.add(idx_p, u, -da);
            buf.add(idx_p, u1, da);
            buf.add(idx_q, v, -db);
            buf.add(idx_q, v1, db);
        }
    }
}
