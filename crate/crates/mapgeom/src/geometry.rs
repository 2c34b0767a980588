//! Vectorized map primitives and their pose-invariant encoding.
//!
//! A map is a set of polyline instances in a normalized bird's-eye-view frame
//! (coordinates nominally in `[0,1]^2`). Raw coordinates move when the frame
//! moves; the *clue* encodings computed here do not. Two families of clues are
//! provided:
//!
//! * **shape clues** ([`ShapeClues`]): per-instance displacement magnitudes and
//!   the undirected angles between consecutive displacement vectors, and
//! * **relation clues** ([`RelationClues`]): for an instance pair, the
//!   undirected angles between their displacement vectors and the pairwise
//!   point distances.
//!
//! Both are invariant under a common rotation + translation of the frame,
//! which is what makes them usable as supervision targets regardless of ego
//! pose. Angles are stored as `(cos, sin)` pairs rather than radians so the
//! downstream losses never touch inverse trigonometry.
//!
//! Displacement vectors always wrap: for a polyline `L_1..L_n` the last
//! displacement is `L_1 - L_n`, for open and closed instances alike. The wrap
//! keeps every encoding the same length as the polyline and makes the
//! displacement cycle telescope to zero (up to rounding). The `closed` flag
//! therefore does not change the encoding — it changes which point orderings
//! are considered equivalent during matching and how the polyline is
//! resampled during evaluation.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Displacement vectors shorter than this count as degenerate: their direction
/// is meaningless, so angle clues involving them are flagged and excluded from
/// losses instead of dividing by ~0.
pub const DEGENERACY_EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Points and vectors
// ---------------------------------------------------------------------------

/// A position in the normalized BEV frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    /// Creates a point, rejecting NaN and infinite coordinates.
    pub fn new(x: T, y: T) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite {
                context: "point coordinates".into(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Scalar> std::ops::Sub for Point2<T> {
    type Output = Vec2<T>;
    fn sub(self, rhs: Self) -> Vec2<T> {
        Vec2 {
            x: self.x - rhs.x,
            y: self.y - rhs.y,
        }
    }
}

impl<T: Scalar> std::ops::Add<Vec2<T>> for Point2<T> {
    type Output = Point2<T>;
    fn add(self, rhs: Vec2<T>) -> Point2<T> {
        Point2 {
            x: self.x + rhs.x,
            y: self.y + rhs.y,
        }
    }
}

impl<T: Scalar> std::ops::Sub<Vec2<T>> for Point2<T> {
    type Output = Point2<T>;
    fn sub(self, rhs: Vec2<T>) -> Point2<T> {
        Point2 {
            x: self.x - rhs.x,
            y: self.y - rhs.y,
        }
    }
}

/// A displacement (difference of two points).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self {
            x: T::zero(),
            y: T::zero(),
        }
    }

    #[inline]
    pub fn dot(self, rhs: Self) -> T {
        self.x * rhs.x + self.y * rhs.y
    }

    /// 2D cross product (signed parallelogram area).
    #[inline]
    pub fn cross(self, rhs: Self) -> T {
        self.x * rhs.y - self.y * rhs.x
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn scaled(self, s: T) -> Self {
        Self {
            x: self.x * s,
            y: self.y * s,
        }
    }
}

impl<T: Scalar> std::ops::Add for Vec2<T> {
    type Output = Vec2<T>;
    fn add(self, rhs: Self) -> Self {
        Self {
            x: self.x + rhs.x,
            y: self.y + rhs.y,
        }
    }
}

impl<T: Scalar> std::ops::Sub for Vec2<T> {
    type Output = Vec2<T>;
    fn sub(self, rhs: Self) -> Self {
        Self {
            x: self.x - rhs.x,
            y: self.y - rhs.y,
        }
    }
}

impl<T: Scalar> std::ops::Neg for Vec2<T> {
    type Output = Vec2<T>;
    fn neg(self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
        }
    }
}

// ---------------------------------------------------------------------------
// Categories
// ---------------------------------------------------------------------------

/// Semantic class of a map instance.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Divider,
    PedCrossing,
    Boundary,
}

impl Category {
    /// All classes, in the fixed order used for class indices and reports.
    pub const ALL: [Category; 3] = [Category::Divider, Category::PedCrossing, Category::Boundary];

    /// Stable class index (position in [`Category::ALL`]).
    pub fn index(self) -> usize {
        match self {
            Category::Divider => 0,
            Category::PedCrossing => 1,
            Category::Boundary => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Divider => "divider",
            Category::PedCrossing => "ped_crossing",
            Category::Boundary => "boundary",
        }
    }
}

// ---------------------------------------------------------------------------
// Polylines and instances
// ---------------------------------------------------------------------------

/// An ordered point sequence with an open/closed flag.
///
/// Invariants (enforced by [`Polyline::new`]): at least two points, every
/// coordinate finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline<T> {
    points: Vec<Point2<T>>,
    closed: bool,
}

impl<T: Scalar> Polyline<T> {
    pub fn new(points: Vec<Point2<T>>, closed: bool) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints { got: points.len() });
        }
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("polyline point {i}"),
                });
            }
        }
        Ok(Self { points, closed })
    }

    pub fn points(&self) -> &[Point2<T>] {
        &self.points
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    /// Number of points (and of displacement vectors).
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Displacement vectors `v_u = L_{u+1} - L_u`, with the last one wrapping
    /// back to the first point. Always one vector per point; the cycle sums to
    /// zero by telescoping.
    pub fn displacement_vectors(&self) -> Vec<Vec2<T>> {
        let n = self.points.len();
        (0..n)
            .map(|u| self.points[(u + 1) % n] - self.points[u])
            .collect()
    }

    /// Pose-invariant per-instance encoding; see [`ShapeClues`].
    pub fn shape_clues(&self) -> ShapeClues<T> {
        let v = self.displacement_vectors();
        let n = v.len();
        let magnitudes: Vec<T> = v.iter().map(|d| d.norm()).collect();
        let mut angle_cos = Vec::with_capacity(n);
        let mut angle_sin = Vec::with_capacity(n);
        let mut degenerate = Vec::with_capacity(n);
        for u in 0..n {
            let (c, s, d) = angle_between(v[u], v[(u + 1) % n]);
            angle_cos.push(c);
            angle_sin.push(s);
            degenerate.push(d);
        }
        ShapeClues {
            magnitudes,
            angle_cos,
            angle_sin,
            degenerate,
        }
    }

    /// The same polyline with points taken in the order `order[j]`.
    ///
    /// `order` must be a permutation of `0..num_points`; matching produces
    /// such permutations. The closed flag is preserved.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.points.len() {
            return Err(Error::PointCountMismatch {
                left: order.len(),
                right: self.points.len(),
                context: "point ordering".into(),
            });
        }
        let mut seen = vec![false; order.len()];
        let mut points = Vec::with_capacity(order.len());
        for &idx in order {
            if idx >= self.points.len() || seen[idx] {
                return Err(Error::Malformed(
                    "point ordering is not a permutation".into(),
                ));
            }
            seen[idx] = true;
            points.push(self.points[idx]);
        }
        Ok(Self {
            points,
            closed: self.closed,
        })
    }

    /// Rotates by `theta` about the frame center `(0.5, 0.5)`, then translates
    /// by `t`.
    pub fn apply_rigid(&self, theta: T, t: Vec2<T>) -> Self {
        let points = self
            .points
            .iter()
            .map(|&p| rigid_point(p, theta, t))
            .collect();
        Self {
            points,
            closed: self.closed,
        }
    }

    /// Applies `f` to every point. Used by perturbation and fitting; the
    /// caller is responsible for keeping coordinates finite.
    pub fn map_points(&self, mut f: impl FnMut(usize, Point2<T>) -> Point2<T>) -> Self {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(i, &p)| f(i, p))
            .collect();
        Self {
            points,
            closed: self.closed,
        }
    }
}

fn rigid_point<T: Scalar>(p: Point2<T>, theta: T, t: Vec2<T>) -> Point2<T> {
    let half = cast::<T>(0.5);
    let (s, c) = theta.sin_cos();
    let x = p.x - half;
    let y = p.y - half;
    Point2 {
        x: half + c * x - s * y + t.x,
        y: half + s * x + c * y + t.y,
    }
}

/// Undirected angle between two displacement vectors as a `(cos, sin)` pair.
///
/// `sin` carries the *absolute* cross product, so the pair always describes an
/// angle in `[0, pi]`; mirroring the frame does not change it. If either
/// vector is shorter than [`DEGENERACY_EPS`] the direction is meaningless and
/// the conventional pair `(1, 0)` is returned together with a `true` flag.
pub fn angle_between<T: Scalar>(a: Vec2<T>, b: Vec2<T>) -> (T, T, bool) {
    let eps = cast::<T>(DEGENERACY_EPS);
    let ma = a.norm();
    let mb = b.norm();
    if ma < eps || mb < eps {
        return (T::one(), T::zero(), true);
    }
    let denom = ma * mb;
    let c = (a.dot(b) / denom).max(-T::one()).min(T::one());
    let s = (a.cross(b).abs() / denom).max(T::zero()).min(T::one());
    (c, s, false)
}

/// Per-instance pose-invariant encoding.
///
/// Entry `u` holds the magnitude of displacement `v_u` and the `(cos, sin)`
/// pair of the undirected angle between `v_u` and `v_{u+1}` (cyclically).
/// `degenerate[u]` marks angles involving a near-zero displacement; losses
/// skip those entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeClues<T> {
    pub magnitudes: Vec<T>,
    pub angle_cos: Vec<T>,
    pub angle_sin: Vec<T>,
    pub degenerate: Vec<bool>,
}

impl<T: Scalar> ShapeClues<T> {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }
}

/// Pairwise pose-invariant encoding of two instances with equal point counts.
///
/// `angle_cos/angle_sin[(u, v)]` describe the undirected angle between
/// displacement `u` of the first instance and displacement `v` of the second;
/// `distances[(u, v)]` is the Euclidean distance between point `u` of the
/// first and point `v` of the second. `degenerate` flags angle entries with a
/// near-zero displacement on either side.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationClues<T> {
    pub angle_cos: Array2<T>,
    pub angle_sin: Array2<T>,
    pub distances: Array2<T>,
    pub degenerate: Array2<bool>,
}

/// Computes [`RelationClues`] for an instance pair. Errors if the point
/// counts differ.
pub fn relation_clues<T: Scalar>(a: &Polyline<T>, b: &Polyline<T>) -> Result<RelationClues<T>> {
    let n = a.num_points();
    if b.num_points() != n {
        return Err(Error::PointCountMismatch {
            left: n,
            right: b.num_points(),
            context: "relation clues".into(),
        });
    }
    let va = a.displacement_vectors();
    let vb = b.displacement_vectors();
    let mut angle_cos = Array2::zeros((n, n));
    let mut angle_sin = Array2::zeros((n, n));
    let mut distances = Array2::zeros((n, n));
    let mut degenerate = Array2::from_elem((n, n), false);
    for u in 0..n {
        for v in 0..n {
            let (c, s, d) = angle_between(va[u], vb[v]);
            angle_cos[(u, v)] = c;
            angle_sin[(u, v)] = s;
            degenerate[(u, v)] = d;
            distances[(u, v)] = (a.points()[u] - b.points()[v]).norm();
        }
    }
    Ok(RelationClues {
        angle_cos,
        angle_sin,
        distances,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Map instances and maps
// ---------------------------------------------------------------------------

/// One map element: a polyline with a class and, for predictions, a
/// confidence score in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MapInstance<T> {
    pub polyline: Polyline<T>,
    pub category: Category,
    pub score: Option<T>,
}

impl<T: Scalar> MapInstance<T> {
    pub fn new(polyline: Polyline<T>, category: Category, score: Option<T>) -> Result<Self> {
        if let Some(s) = score {
            if !s.is_finite() || s < T::zero() || s > T::one() {
                return Err(Error::OutOfRange {
                    what: "instance score".into(),
                    value: s.to_f64().unwrap_or(f64::NAN),
                    range: "[0, 1]".into(),
                });
            }
        }
        Ok(Self {
            polyline,
            category,
            score,
        })
    }
}

/// Physical half-extent of the BEV frame in meters.
///
/// Normalized `[0,1]^2` maps to `[-x_half_m, x_half_m] x [-y_half_m, y_half_m]`
/// meters; evaluation distances are reported in meters through this scaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevExtent<T> {
    pub x_half_m: T,
    pub y_half_m: T,
}

impl<T: Scalar> BevExtent<T> {
    pub fn new(x_half_m: T, y_half_m: T) -> Result<Self> {
        let ok = x_half_m.is_finite()
            && y_half_m.is_finite()
            && x_half_m > T::zero()
            && y_half_m > T::zero();
        if !ok {
            return Err(Error::OutOfRange {
                what: "bev extent".into(),
                value: f64::NAN,
                range: "positive finite half-ranges".into(),
            });
        }
        Ok(Self { x_half_m, y_half_m })
    }

    /// Normalized frame position to meters (frame center at the origin).
    pub fn to_meters(&self, p: Point2<T>) -> (T, T) {
        let half = cast::<T>(0.5);
        let two = cast::<T>(2.0);
        (
            (p.x - half) * two * self.x_half_m,
            (p.y - half) * two * self.y_half_m,
        )
    }
}

impl<T: Scalar> Default for BevExtent<T> {
    /// The conventional perception range: ±15 m across, ±30 m along.
    fn default() -> Self {
        Self {
            x_half_m: cast(15.0),
            y_half_m: cast(30.0),
        }
    }
}

/// A vectorized map: instances sharing one point count, plus the frame extent.
///
/// Invariants (enforced at construction): every instance has the same number
/// of points, scores are in range, the extent is positive. A map may be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorMap<T> {
    instances: Vec<MapInstance<T>>,
    bev_extent: BevExtent<T>,
}

impl<T: Scalar> VectorMap<T> {
    pub fn new(instances: Vec<MapInstance<T>>, bev_extent: BevExtent<T>) -> Result<Self> {
        if let Some(first) = instances.first() {
            let n = first.polyline.num_points();
            for (i, inst) in instances.iter().enumerate() {
                if inst.polyline.num_points() != n {
                    return Err(Error::PointCountMismatch {
                        left: n,
                        right: inst.polyline.num_points(),
                        context: format!("instance {i}"),
                    });
                }
            }
        }
        Ok(Self {
            instances,
            bev_extent,
        })
    }

    pub fn instances(&self) -> &[MapInstance<T>] {
        &self.instances
    }

    pub fn bev_extent(&self) -> BevExtent<T> {
        self.bev_extent
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Shared per-instance point count; `None` for an empty map.
    pub fn num_points(&self) -> Option<usize> {
        self.instances.first().map(|i| i.polyline.num_points())
    }

    /// Applies a common rotation (about the frame center) and translation to
    /// every instance. Clue encodings are invariant under this map; raw
    /// coordinates are not.
    pub fn apply_rigid(&self, theta: T, t: Vec2<T>) -> Self {
        let instances = self
            .instances
            .iter()
            .map(|inst| MapInstance {
                polyline: inst.polyline.apply_rigid(theta, t),
                category: inst.category,
                score: inst.score,
            })
            .collect();
        Self {
            instances,
            bev_extent: self.bev_extent,
        }
    }

    /// A copy in which every instance lacking a score gets `score`.
    /// The fitting harness uses this so its outputs are evaluable.
    pub fn with_default_scores(&self, score: T) -> Result<Self> {
        let instances = self
            .instances
            .iter()
            .map(|inst| {
                MapInstance::new(
                    inst.polyline.clone(),
                    inst.category,
                    Some(inst.score.unwrap_or(score)),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            instances,
            bev_extent: self.bev_extent,
        })
    }

    /// Checks that every coordinate is still finite; used by the fitting loop
    /// after each descent step.
    pub fn all_finite(&self) -> bool {
        self.instances
            .iter()
            .all(|i| i.polyline.points().iter().all(|p| p.is_finite()))
    }
}
