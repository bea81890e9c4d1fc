//! Array engine underneath every trainable piece of the pipeline.
//!
//! [`tape::Graph`] records a computation over dense `ndarray` values and
//! replays it backwards to produce gradients. Parameters live in a
//! [`params::ParamStore`], are bound into a fresh graph for each step, and
//! are updated by [`adam::Adam`]. Randomness comes from [`rng::RngStream`],
//! a splittable counter-based generator.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, Neg, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits_shim::FloatOps;

pub use adam::{Adam, AdamConfig, OptimState};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use params::{Bound, ParamId, ParamStore};
pub use rng::RngStream;
pub use tape::{Grads, Graph, Var};

/// Negative slope used by every LeakyReLU in the pipeline.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Floating-point element type. `f64` for verification, `f32` for training.
pub trait Real:
    FloatOps
    + LinalgScalar
    + ScalarOperand
    + Sum
    + PartialOrd
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Neg<Output = Self>
    + 'static
{
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn cast(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

mod num_traits_shim {
    /// The handful of float methods the engine needs, so we do not pull in
    /// `num-traits` just for `Float`.
    pub trait FloatOps: Copy {
        fn exp(self) -> Self;
        fn ln(self) -> Self;
        fn sqrt(self) -> Self;
        fn abs(self) -> Self;
        fn is_finite(self) -> bool;
        fn max(self, other: Self) -> Self;
        fn signum(self) -> Self;
        fn neg_infinity() -> Self;
    }

    macro_rules! impl_float_ops {
        ($t:ty) => {
            impl FloatOps for $t {
                #[inline]
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                #[inline]
                fn ln(self) -> Self {
                    <$t>::ln(self)
                }
                #[inline]
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                #[inline]
                fn abs(self) -> Self {
                    <$t>::abs(self)
                }
                #[inline]
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                #[inline]
                fn max(self, other: Self) -> Self {
                    <$t>::max(self, other)
                }
                #[inline]
                fn signum(self) -> Self {
                    <$t>::signum(self)
                }
                #[inline]
                fn neg_infinity() -> Self {
                    <$t>::NEG_INFINITY
                }
            }
        };
    }

    impl_float_ops!(f32);
    impl_float_ops!(f64);
}
