//! Gradient-descent fitting of a predicted map to ground truth, plus a
//! finite-difference gradient checker.
//!
//! The fitter is plain full-batch gradient descent on polyline coordinates
//! under the composite loss; confidence scores and categories are held fixed.
//! Matching is recomputed on a schedule (`rematch_every`), never inside a
//! step, so each step descends a fixed, piecewise-smooth objective. The run
//! records a trace of loss components and detection quality, and a numeric
//! blow-up (non-finite loss, gradient, or coordinate) aborts the run
//! gracefully: the last finite state and the partial trace are returned with
//! `aborted_at` set instead of an error.
//!
//! [`gradcheck`] compares the analytic gradient against central differences
//! of the loss itself, skipping coordinates whose inputs sit measurably close
//! to a fold (kink) of the piecewise loss surface, where a two-sided
//! difference straddles the fold and measures the wrong slope.

use crate::error::{Error, Result};
use crate::evaluation::{map_score, EvalConfig};
use crate::geometry::{MapInstance, Point2, Polyline, VectorMap};
use crate::grad::{grad_total_loss, GradientBuffer};
use crate::losses::{total_loss, LossBreakdown, LossWeights};
use crate::matching::{hungarian_match, MatchResult};
use crate::scalar::{cast, Scalar};

/// Settings of a fitting run.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig<T> {
    /// Number of descent steps.
    pub iterations: usize,
    /// Step size multiplying the gradient.
    pub step_size: T,
    pub weights: LossWeights<T>,
    /// Recompute the prediction-to-ground-truth matching every this many
    /// iterations; 0 matches once at the start and never again.
    pub rematch_every: usize,
    /// Record a trace row every this many iterations (the initial and final
    /// states are always recorded).
    pub record_every: usize,
    /// Evaluation settings for the detection-quality column of the trace.
    pub eval: EvalConfig<T>,
    /// Score given to prediction instances that lack one, so fitted maps are
    /// evaluable.
    pub default_score: T,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            iterations: 500,
            step_size: cast(2e-4),
            weights: LossWeights::default(),
            rematch_every: 10,
            record_every: 10,
            eval: EvalConfig::default(),
            default_score: T::one(),
        }
    }
}

impl<T: Scalar> FitConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= T::zero() {
            return Err(Error::OutOfRange {
                what: "step_size".into(),
                value: self.step_size.to_f64().unwrap_or(f64::NAN),
                range: "(0, inf)".into(),
            });
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig(
                "record_every must be at least 1".into(),
            ));
        }
        if !self.default_score.is_finite()
            || self.default_score < T::zero()
            || self.default_score > T::one()
        {
            return Err(Error::OutOfRange {
                what: "default_score".into(),
                value: self.default_score.to_f64().unwrap_or(f64::NAN),
                range: "[0, 1]".into(),
            });
        }
        self.weights.validate()?;
        self.eval.validate()
    }
}

/// One recorded state of the fitting loop.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TraceRow<T> {
    pub iter: usize,
    pub shp: T,
    pub rel: T,
    pub euc: T,
    pub cls: T,
    pub pts: T,
    pub dir: T,
    pub total: T,
    pub m_ap: T,
}

/// The recorded trajectory of a fitting run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace<T> {
    pub rows: Vec<TraceRow<T>>,
}

impl<T: Scalar> FitTrace<T> {
    /// Renders the trace as CSV with a fixed header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,shp,rel,euc,cls,pts,dir,total,mAP\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.iter, r.shp, r.rel, r.euc, r.cls, r.pts, r.dir, r.total, r.m_ap
            ));
        }
        out
    }
}

/// Outcome of a fitting run.
#[derive(Clone, Debug, PartialEq)]
pub struct FitRun<T> {
    /// The last finite state reached.
    pub final_map: VectorMap<T>,
    pub trace: FitTrace<T>,
    /// `Some(iteration)` if the run stopped early on a numeric blow-up.
    pub aborted_at: Option<usize>,
}

/// Whether an error means "numbers blew up" rather than a structural problem.
fn is_blowup(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::NumericalFailure { .. })
}

fn record_row<T: Scalar>(
    iter: usize,
    bd: &LossBreakdown<T>,
    current: &VectorMap<T>,
    gt: &VectorMap<T>,
    eval: &EvalConfig<T>,
) -> Result<TraceRow<T>> {
    let score = map_score(current, gt, eval)?;
    Ok(TraceRow {
        iter,
        shp: bd.shp,
        rel: bd.rel,
        euc: bd.euc,
        cls: bd.cls,
        pts: bd.pts,
        dir: bd.dir,
        total: bd.total,
        m_ap: score.m_ap,
    })
}

/// One descent step: moves every coordinate against its gradient.
fn descend<T: Scalar>(
    map: &VectorMap<T>,
    grad: &GradientBuffer<T>,
    step: T,
) -> Result<VectorMap<T>> {
    let instances = map
        .instances()
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let pts = inst
                .polyline
                .points()
                .iter()
                .enumerate()
                .map(|(u, &p)| {
                    let g = grad.grad(i, u);
                    Point2::new(p.x - step * g.x, p.y - step * g.y)
                })
                .collect::<Result<Vec<_>>>()?;
            MapInstance::new(
                Polyline::new(pts, inst.polyline.closed())?,
                inst.category,
                inst.score,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    VectorMap::new(instances, map.bev_extent())
}

/// Fits `initial` toward `gt` by gradient descent on the composite loss.
///
/// Instances missing a confidence score receive `config.default_score` so the
/// run is evaluable. Structural errors (mismatched point counts, invalid
/// weights) are returned as `Err`; numeric blow-ups end the run gracefully
/// with [`FitRun::aborted_at`] set.
pub fn fit<T: Scalar>(
    initial: &VectorMap<T>,
    gt: &VectorMap<T>,
    config: &FitConfig<T>,
) -> Result<FitRun<T>> {
    config.validate()?;
    let mut current = initial.with_default_scores(config.default_score)?;
    let mut matching = hungarian_match(&current, gt)?;
    let mut rows = Vec::new();
    let mut aborted_at = None;

    for iter in 0..config.iterations {
        if config.rematch_every > 0 && iter > 0 && iter % config.rematch_every == 0 {
            matching = hungarian_match(&current, gt)?;
        }
        let bd = match total_loss(&current, gt, &matching, &config.weights) {
            Ok(bd) => bd,
            Err(e) if is_blowup(&e) => {
                aborted_at = Some(iter);
                break;
            }
            Err(e) => return Err(e),
        };
        let grad = match grad_total_loss(&current, gt, &matching, &config.weights) {
            Ok(g) => g,
            Err(e) if is_blowup(&e) => {
                aborted_at = Some(iter);
                break;
            }
            Err(e) => return Err(e),
        };
        if iter % config.record_every == 0 {
            rows.push(record_row(iter, &bd, &current, gt, &config.eval)?);
        }
        match descend(&current, &grad, config.step_size) {
            Ok(next) => current = next,
            Err(e) if is_blowup(&e) => {
                aborted_at = Some(iter);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    if aborted_at.is_none() {
        match total_loss(&current, gt, &matching, &config.weights) {
            Ok(bd) => rows.push(record_row(
                config.iterations,
                &bd,
                &current,
                gt,
                &config.eval,
            )?),
            Err(e) if is_blowup(&e) => aborted_at = Some(config.iterations),
            Err(e) => return Err(e),
        }
    }

    Ok(FitRun {
        final_map: current,
        trace: FitTrace { rows },
        aborted_at,
    })
}

/// Settings of the finite-difference gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig<T> {
    /// Half-step of the central difference.
    pub step: T,
    /// Maximum allowed relative error.
    pub rel_tol: T,
    /// Floor of the relative-error denominator; below it the check becomes an
    /// absolute comparison (`rel_tol * denom_floor`).
    pub denom_floor: T,
}

impl<T: Scalar> Default for GradCheckConfig<T> {
    fn default() -> Self {
        Self {
            step: cast(1e-6),
            rel_tol: cast(1e-5),
            denom_floor: cast(1e-3),
        }
    }
}

/// One coordinate whose analytic and numeric derivatives disagree.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckFailure<T> {
    pub instance: usize,
    pub point: usize,
    /// 0 for x, 1 for y.
    pub axis: usize,
    pub analytic: T,
    pub numeric: T,
    pub rel_err: T,
}

/// Result of a gradient check.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckReport<T> {
    /// Coordinates compared against central differences.
    pub checked: usize,
    /// Coordinates skipped because their inputs sit close enough to a fold of
    /// the loss surface that a central difference would straddle it.
    pub skipped_near_kinks: usize,
    pub worst_rel_err: T,
    pub failures: Vec<GradCheckFailure<T>>,
}

impl<T: Scalar> GradCheckReport<T> {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Rebuilds `map` with one coordinate shifted by `delta`.
fn shift_coord<T: Scalar>(
    map: &VectorMap<T>,
    instance: usize,
    point: usize,
    axis: usize,
    delta: T,
) -> Result<VectorMap<T>> {
    let instances = map
        .instances()
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let pts = inst
                .polyline
                .points()
                .iter()
                .enumerate()
                .map(|(u, &p)| {
                    let mut q = p;
                    if i == instance && u == point {
                        if axis == 0 {
                            q.x += delta;
                        } else {
                            q.y += delta;
                        }
                    }
                    Ok(q)
                })
                .collect::<Result<Vec<_>>>()?;
            MapInstance::new(
                Polyline::new(pts, inst.polyline.closed())?,
                inst.category,
                inst.score,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    VectorMap::new(instances, map.bev_extent())
}

/// Verifies the analytic gradient against central differences of the loss.
///
/// The matching is computed once and held fixed for every evaluation, exactly
/// as the analytic gradient assumes. Only matched predictions are probed
/// (unmatched ones provably do not enter the loss). A coordinate fails when
/// `|analytic - numeric| / max(|analytic|, |numeric|, denom_floor)` exceeds
/// `rel_tol`; near-kink coordinates are skipped and counted.
pub fn gradcheck<T: Scalar>(
    pred: &VectorMap<T>,
    gt: &VectorMap<T>,
    weights: &LossWeights<T>,
    config: &GradCheckConfig<T>,
) -> Result<GradCheckReport<T>> {
    if !config.step.is_finite() || config.step <= T::zero() {
        return Err(Error::OutOfRange {
            what: "gradient check step".into(),
            value: config.step.to_f64().unwrap_or(f64::NAN),
            range: "(0, inf)".into(),
        });
    }
    let matching: MatchResult<T> = hungarian_match(pred, gt)?;
    let analytic = grad_total_loss(pred, gt, &matching, weights)?;

    let mut report = GradCheckReport {
        checked: 0,
        skipped_near_kinks: 0,
        worst_rel_err: T::zero(),
        failures: Vec::new(),
    };
    for pair in &matching.pairs {
        let i = pair.pred;
        let n_pts = pred.instances()[i].polyline.num_points();
        for u in 0..n_pts {
            for axis in 0..2 {
                if analytic.is_near_kink(i, u, axis) {
                    report.skipped_near_kinks += 1;
                    continue;
                }
                let plus = shift_coord(pred, i, u, axis, config.step)?;
                let minus = shift_coord(pred, i, u, axis, -config.step)?;
                let f_plus = total_loss(&plus, gt, &matching, weights)?.total;
                let f_minus = total_loss(&minus, gt, &matching, weights)?.total;
                let numeric = (f_plus - f_minus) / (cast::<T>(2.0) * config.step);
                let g = analytic.grad(i, u);
                let an = if axis == 0 { g.x } else { g.y };
                let denom = an.abs().max(numeric.abs()).max(config.denom_floor);
                let rel = (an - numeric).abs() / denom;
                report.checked += 1;
                if rel > report.worst_rel_err {
                    report.worst_rel_err = rel;
                }
                if rel > config.rel_tol {
                    report.failures.push(GradCheckFailure {
                        instance: i,
                        point: u,
                        axis,
                        analytic: an,
                        numeric,
                        rel_err: rel,
                    });
                }
            }
        }
    }
    Ok(report)
}
