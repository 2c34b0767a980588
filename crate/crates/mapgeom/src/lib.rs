//! Geometric machinery for online vectorized HD-map construction.
//!
//! Road maps are represented as small sets of polylines ("instances") in a
//! normalized bird's-eye-view frame. The crate provides the pieces needed to
//! reason about such maps end to end, with every numeric path deterministic
//! and exactly testable:
//!
//! * [`geometry`] — points, polylines, and the rotation/translation-invariant
//!   clue encodings: per-instance *shape clues* (displacement magnitudes and
//!   consecutive-edge angles) and cross-instance *relation clues* (pairwise
//!   edge angles and point distances).
//! * [`losses`] — a composite training objective over matched maps: shape and
//!   relation terms on the invariant clues, plus focal classification, L1
//!   point, and edge-direction terms, with ready-to-use default weights.
//! * [`grad`] — hand-derived analytic gradients of that objective with
//!   per-coordinate "near fold" flags for honest finite-difference checking.
//! * [`matching`] — point-order-agnostic instance matching: per-pair cost
//!   minimized over cyclic shifts and reversals, then a deterministic
//!   Hungarian assignment.
//! * [`attention`] — geometry-decoupled masked self-attention: complementary
//!   same-instance and cross-instance masks over point tokens.
//! * [`evaluation`] — Chamfer distance in meters and average precision over
//!   classes and thresholds.
//! * [`synth`] — seeded scenario generation with exact structure (parallel
//!   lanes, crossings, rectangles) and Gaussian perturbation.
//! * [`fit`] — a gradient-descent fitting harness with traces, graceful
//!   blow-up handling, and a finite-difference gradient checker.
//! * [`render`] — byte-deterministic SVG rendering.
//! * [`io`] — a stable JSON wire format.
//!
//! Everything is generic over the scalar type through [`Scalar`] (`f32` or
//! `f64`); the `*F64`/`*F32` aliases at the crate root pick a concrete one.

pub mod attention;
pub mod error;
pub mod evaluation;
pub mod fit;
pub mod geometry;
pub mod grad;
pub mod io;
pub mod losses;
pub mod matching;
pub mod render;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::{cast, KahanSum, Scalar};

/// `f64` specializations of the core types.
pub type Point2F64 = geometry::Point2<f64>;
pub type Vec2F64 = geometry::Vec2<f64>;
pub type PolylineF64 = geometry::Polyline<f64>;
pub type MapInstanceF64 = geometry::MapInstance<f64>;
pub type VectorMapF64 = geometry::VectorMap<f64>;
pub type BevExtentF64 = geometry::BevExtent<f64>;
pub type LossWeightsF64 = losses::LossWeights<f64>;
pub type LossBreakdownF64 = losses::LossBreakdown<f64>;
pub type FitConfigF64 = fit::FitConfig<f64>;
pub type EvalConfigF64 = evaluation::EvalConfig<f64>;

/// `f32` specializations of the core types.
pub type Point2F32 = geometry::Point2<f32>;
pub type Vec2F32 = geometry::Vec2<f32>;
pub type PolylineF32 = geometry::Polyline<f32>;
pub type MapInstanceF32 = geometry::MapInstance<f32>;
pub type VectorMapF32 = geometry::VectorMap<f32>;
pub type BevExtentF32 = geometry::BevExtent<f32>;
pub type LossWeightsF32 = losses::LossWeights<f32>;
pub type LossBreakdownF32 = losses::LossBreakdown<f32>;
pub type FitConfigF32 = fit::FitConfig<f32>;
pub type EvalConfigF32 = evaluation::EvalConfig<f32>;
