//! Numeric abstraction shared by the cost model, the landscapes and the tuner.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the engine computes in.
///
/// Implemented for `f32` and `f64`. Everything that touches latencies,
/// features or tree outputs is generic over it.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or intermediate.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every float scalar")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count converts to every float scalar")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_small_values() {
        assert_eq!(f32::lit(0.25).as_f64(), 0.25);
        assert_eq!(f64::from_count(320), 320.0);
    }
}
