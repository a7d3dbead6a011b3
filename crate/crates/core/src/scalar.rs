//! Scalar abstraction shared by the measurement, media and simulation code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point type the simulation runs on: `f32` or `f64`.
///
/// Virtual time, rates and delays are all expressed in this type. Pure
/// classification code in [`crate::rate_control`] only needs ordering and
/// accepts exact rationals as well.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` constant into this scalar.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
