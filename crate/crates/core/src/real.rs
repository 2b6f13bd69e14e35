//! Scalar abstraction for the signal path.
//!
//! Everything numeric in this crate is generic over [`Real`], so the same
//! decoder runs in `f32` or `f64`. Concrete aliases for the common choice
//! live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};

/// Floating-point scalar used for statistics, metrics and channel values.
///
/// The supertraits cover what the decoders need: IEEE arithmetic,
/// assignment operators, summation and printability. `Send + Sync` lets
/// Monte-Carlo trials run on worker threads.
pub trait Real:
    Float + FloatConst + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for constants and configuration values.
    fn of(x: f64) -> Self {
        Self::from(x).expect("f64 constant representable in Real type")
    }

    /// Lossy conversion to `f64`, for reporting and statistics.
    fn to_f64(self) -> f64 {
        num_traits::NumCast::from(self).expect("Real value representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sign convention used throughout the decoders: `sgn(0) := +1`.
///
/// Zero statistics (erasures) must not make path scores or hard decisions
/// ambiguous, so zero counts as positive everywhere a sign is taken.
#[inline]
pub fn is_nonnegative<T: Real>(x: T) -> bool {
    x >= T::zero()
}
