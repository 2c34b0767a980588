//! Synthetic map scenarios with exactly known geometric structure, plus
//! Gaussian point perturbation.
//!
//! Generated maps are *exact*: parallel lanes share bitwise-identical
//! displacement vectors (cross-instance angle sine is exactly 0), crossing
//! families are axis-aligned (cross-family cosine exactly 0), and rectangle
//! corners give exact right angles. Noise is never baked into generation;
//! [`perturb`] applies it as a separate, seeded step so the pristine
//! structure stays available as ground truth.
//!
//! Randomness is fully deterministic and portable: a ChaCha12 stream feeds
//! explicit 53-bit uniforms and a Box–Muller transform, so the same seed
//! yields byte-identical maps on every platform. Draw order is fixed
//! (scenario-level jitters first, then per-instance values; perturbation
//! walks instances in order, each point x before y).

use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::geometry::{BevExtent, Category, MapInstance, Point2, Polyline, VectorMap};
use crate::scalar::{cast, Scalar};

/// Scene motif to generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Exactly parallel vertical lanes; outermost lanes are boundaries when
    /// there are at least three.
    ParallelLanes,
    /// Two perpendicular families: vertical dividers and horizontal
    /// boundaries.
    Crossing,
    /// Axis-aligned closed rectangles (pedestrian crossings); requires
    /// exactly 4 points per instance.
    Rectangle,
    /// Lanes of both boundary and divider classes plus one rectangle;
    /// requires exactly 4 points per instance.
    Mixed,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "parallel_lanes" => Ok(Self::ParallelLanes),
            "crossing" => Ok(Self::Crossing),
            "rectangle" => Ok(Self::Rectangle),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario kind '{other}' (expected parallel_lanes, crossing, rectangle, or mixed)"
            ))),
        }
    }
}

/// Parameters of a synthetic scene.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Number of map instances.
    pub n_instances: usize,
    /// Points per instance (uniform across the map).
    pub n_points: usize,
    /// Spacing between adjacent parallel lanes in normalized units.
    pub lane_gap: f64,
    /// Nominal noise level for downstream perturbation; [`generate`] itself
    /// never applies it.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::ParallelLanes,
            n_instances: 4,
            n_points: 8,
            lane_gap: 0.12,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

/// Maximum normalized width a lane block may occupy (keeps jittered scenes
/// inside the frame).
const MAX_BLOCK_WIDTH: f64 = 0.92;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(Error::InvalidConfig(
                "n_instances must be at least 1".into(),
            ));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidConfig("n_points must be at least 2".into()));
        }
        if !self.lane_gap.is_finite() || self.lane_gap <= 0.0 || self.lane_gap > MAX_BLOCK_WIDTH {
            return Err(Error::OutOfRange {
                what: "lane_gap".into(),
                value: self.lane_gap,
                range: format!("(0, {MAX_BLOCK_WIDTH}]"),
            });
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::OutOfRange {
                what: "noise_sigma".into(),
                value: self.noise_sigma,
                range: "[0, inf)".into(),
            });
        }
        let check_block = |lanes: usize| -> Result<()> {
            let width = lanes.saturating_sub(1) as f64 * self.lane_gap;
            if width > MAX_BLOCK_WIDTH {
                return Err(Error::InvalidConfig(format!(
                    "{lanes} lanes at gap {} span {width:.3} normalized units and do not fit the frame; \
                     reduce lane_gap or n_instances",
                    self.lane_gap
                )));
            }
            Ok(())
        };
        match self.kind {
            ScenarioKind::ParallelLanes => check_block(self.n_instances)?,
            ScenarioKind::Crossing => {
                if self.n_instances < 2 {
                    return Err(Error::InvalidConfig(
                        "a crossing needs at least 2 instances (one per family)".into(),
                    ));
                }
                check_block(self.n_instances.div_ceil(2))?;
            }
            ScenarioKind::Rectangle => {
                if self.n_points != 4 {
                    return Err(Error::InvalidConfig(format!(
                        "rectangles require exactly 4 points per instance, got {}",
                        self.n_points
                    )));
                }
            }
            ScenarioKind::Mixed => {
                if self.n_instances < 4 {
                    return Err(Error::InvalidConfig(
                        "a mixed scene needs at least 4 instances (two boundaries, a divider, a crossing)"
                            .into(),
                    ));
                }
                if self.n_points != 4 {
                    return Err(Error::InvalidConfig(format!(
                        "mixed scenes require exactly 4 points per instance, got {}",
                        self.n_points
                    )));
                }
                check_block(self.n_instances - 1)?;
            }
        }
        Ok(())
    }
}

/// Deterministic f64 sampler over a ChaCha12 stream: 53-bit uniforms and
/// Box–Muller normals (the second normal of each pair is cached).
struct Sampler {
    rng: rand_chacha::ChaCha12Rng,
    spare_normal: Option<f64>,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: rand_chacha::ChaCha12Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Uniform in `[0, 1)`.
    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `(0, 1]` (safe under `ln`).
    fn uniform_pos(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal.
    fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let r = (-2.0 * self.uniform_pos().ln()).sqrt();
        let angle = std::f64::consts::TAU * self.uniform();
        self.spare_normal = Some(r * angle.sin());
        r * angle.cos()
    }
}

fn npoint<T: Scalar>(x: f64, y: f64) -> Point2<T> {
    Point2 {
        x: cast(x),
        y: cast(y),
    }
}

/// Evenly spaced coordinates along one axis with a jittered range, shared by
/// every lane of a family so their displacement vectors match bitwise.
fn jittered_axis(rng: &mut Sampler, n_points: usize) -> Vec<f64> {
    let lo = 0.04 + 0.04 * rng.uniform();
    let hi = 0.96 - 0.04 * rng.uniform();
    (0..n_points)
        .map(|j| lo + (hi - lo) * j as f64 / (n_points - 1) as f64)
        .collect()
}

fn block_center(rng: &mut Sampler) -> f64 {
    0.5 + 0.04 * (rng.uniform() - 0.5)
}

/// Vertical lane at `x` sampled at the shared `ys`.
fn vertical_lane<T: Scalar>(x: f64, ys: &[f64], category: Category) -> Result<MapInstance<T>> {
    let pts = ys.iter().map(|&y| npoint(x, y)).collect();
    MapInstance::new(Polyline::new(pts, false)?, category, None)
}

/// Horizontal lane at `y` sampled at the shared `xs`.
fn horizontal_lane<T: Scalar>(y: f64, xs: &[f64], category: Category) -> Result<MapInstance<T>> {
    let pts = xs.iter().map(|&x| npoint(x, y)).collect();
    MapInstance::new(Polyline::new(pts, false)?, category, None)
}

fn lane_block<T: Scalar>(
    rng: &mut Sampler,
    lanes: usize,
    gap: f64,
    n_points: usize,
    category_of: impl Fn(usize) -> Category,
) -> Result<Vec<MapInstance<T>>> {
    let center = block_center(rng);
    let ys = jittered_axis(rng, n_points);
    let x0 = center - (lanes - 1) as f64 * gap / 2.0;
    (0..lanes)
        .map(|i| vertical_lane(x0 + i as f64 * gap, &ys, category_of(i)))
        .collect()
}

fn lanes_scene<T: Scalar>(cfg: &ScenarioConfig, rng: &mut Sampler) -> Result<Vec<MapInstance<T>>> {
    let n = cfg.n_instances;
    lane_block(rng, n, cfg.lane_gap, cfg.n_points, |i| {
        if n >= 3 && (i == 0 || i == n - 1) {
            Category::Boundary
        } else {
            Category::Divider
        }
    })
}

fn crossing_scene<T: Scalar>(
    cfg: &ScenarioConfig,
    rng: &mut Sampler,
) -> Result<Vec<MapInstance<T>>> {
    let n_vert = cfg.n_instances.div_ceil(2);
    let n_horiz = cfg.n_instances - n_vert;
    let mut instances = lane_block(rng, n_vert, cfg.lane_gap, cfg.n_points, |_| {
        Category::Divider
    })?;
    let center = block_center(rng);
    let xs = jittered_axis(rng, cfg.n_points);
    let y0 = center - (n_horiz - 1) as f64 * cfg.lane_gap / 2.0;
    for i in 0..n_horiz {
        instances.push(horizontal_lane(
            y0 + i as f64 * cfg.lane_gap,
            &xs,
            Category::Boundary,
        )?);
    }
    Ok(instances)
}

fn rectangle<T: Scalar>(
    rng: &mut Sampler,
    center_lo: f64,
    center_span: f64,
) -> Result<MapInstance<T>> {
    let cx = center_lo + center_span * rng.uniform();
    let cy = center_lo + center_span * rng.uniform();
    let hw = 0.05 + 0.08 * rng.uniform();
    let hh = 0.05 + 0.08 * rng.uniform();
    let pts = vec![
        npoint(cx - hw, cy - hh),
        npoint(cx + hw, cy - hh),
        npoint(cx + hw, cy + hh),
        npoint(cx - hw, cy + hh),
    ];
    MapInstance::new(Polyline::new(pts, true)?, Category::PedCrossing, None)
}

fn rectangle_scene<T: Scalar>(
    cfg: &ScenarioConfig,
    rng: &mut Sampler,
) -> Result<Vec<MapInstance<T>>> {
    (0..cfg.n_instances)
        .map(|_| rectangle(rng, 0.15, 0.7))
        .collect()
}

fn mixed_scene<T: Scalar>(cfg: &ScenarioConfig, rng: &mut Sampler) -> Result<Vec<MapInstance<T>>> {
    let lanes = cfg.n_instances - 1;
    let mut instances = lane_block(rng, lanes, cfg.lane_gap, cfg.n_points, |i| {
        if i == 0 || i == lanes - 1 {
            Category::Boundary
        } else {
            Category::Divider
        }
    })?;
    instances.push(rectangle(rng, 0.35, 0.3)?);
    Ok(instances)
}

/// Generates a synthetic map with exact geometric structure. Noise is never
/// applied here; see [`perturb`].
pub fn generate<T: Scalar>(config: &ScenarioConfig) -> Result<VectorMap<T>> {
    config.validate()?;
    let mut rng = Sampler::new(config.seed);
    let instances = match config.kind {
        ScenarioKind::ParallelLanes => lanes_scene(config, &mut rng)?,
        ScenarioKind::Crossing => crossing_scene(config, &mut rng)?,
        ScenarioKind::Rectangle => rectangle_scene(config, &mut rng)?,
        ScenarioKind::Mixed => mixed_scene(config, &mut rng)?,
    };
    VectorMap::new(instances, BevExtent::default())
}

/// Adds iid Gaussian noise `N(0, sigma^2)` to every coordinate, in a fixed
/// draw order (instances in order; per point x before y). Categories, scores,
/// closed flags, and the BEV extent are preserved. Coordinates are not
/// clamped: noise may push points slightly outside `[0, 1]`, which downstream
/// code handles by extrapolating the meter mapping.
pub fn perturb<T: Scalar>(map: &VectorMap<T>, sigma: f64, seed: u64) -> Result<VectorMap<T>> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::OutOfRange {
            what: "sigma".into(),
            value: sigma,
            range: "[0, inf)".into(),
        });
    }
    let mut rng = Sampler::new(seed);
    let mut instances = Vec::with_capacity(map.len());
    for inst in map.instances() {
        let pts = inst
            .polyline
            .points()
            .iter()
            .map(|&p| {
                let dx = cast::<T>(rng.normal() * sigma);
                let dy = cast::<T>(rng.normal() * sigma);
                Point2 {
                    x: p.x + dx,
                    y: p.y + dy,
                }
            })
            .collect();
        instances.push(MapInstance::new(
            Polyline::new(pts, inst.polyline.closed())?,
            inst.category,
            inst.score,
        )?);
    }
    VectorMap::new(instances, map.bev_extent())
}
