use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating-point element type for tensors. Implemented for `f32` and `f64`.
///
/// Training defaults to `f32`; gradient checks and oracle comparisons run in
/// `f64` because their tolerances are meaningless at single precision.
pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    /// Largest argument accepted by the `exp` primitive before its domain
    /// guard rejects the input as overflow-bound.
    const EXP_GUARD: f64;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const EXP_GUARD: f64 = 80.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const EXP_GUARD: f64 = 700.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Logistic function, computed from the side that avoids `exp` overflow.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        ((-x).exp() + T::one()).recip()
    } else {
        let e = x.exp();
        e / (e + T::one())
    }
}

/// `ln(1 + exp(x))`, stabilized as `max(x, 0) + ln(1 + exp(-|x|))`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
