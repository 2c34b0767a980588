//! Scalar abstraction for the whole crate.
//!
//! Every numerical routine in this library is generic over [`Scalar`], a
//! floating-point trait assembled from `num-traits`. The two implementors of
//! interest are `f32` and `f64`; concrete type aliases for both live at the
//! crate root. File formats and the CLI work in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar used by all geometric and loss computations.
///
/// This is a pure capability bundle: anything that is `num_traits::Float`
/// plus the usual ergonomic extras (constants, `f64` conversions, compound
/// assignment, iterator sums, threading) qualifies automatically.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum<Self>
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + NumAssign
        + Sum<T>
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant into `T`.
///
/// Panics only if `T` cannot represent any `f64` at all, which cannot happen
/// for the float types this crate is instantiated with; loss of precision
/// (e.g. `f64 -> f32`) is fine and expected.
#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 constant must convert into the scalar type")
}

/// Compensated (Kahan) accumulator.
///
/// Loss sums run over thousands of small terms; compensation keeps the result
/// independent enough of magnitude spread that central finite differences of
/// the summed loss stay clean near the 1e-8 absolute scale. Summation order is
/// fixed by the call sites, so results are bit-reproducible.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> KahanSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, value: T) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> T {
        self.sum
    }
}

impl<T: Scalar> Default for KahanSum<T> {
    fn default() -> Self {
        Self::new()
    }
}
