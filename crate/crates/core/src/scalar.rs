use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar used by every numeric routine in the toolkit.
///
/// Implemented for `f32` and `f64`. Simulation and the detachment solver are
/// normally run in `f64`; network training runs in `f32` and its gradient
/// checks in `f64`.
pub trait Real:
    'static
    + Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
{
    /// Converts an `f64` constant. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap()
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}
