//! Scalar abstraction shared by the data model, interaction and pose math.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the geometry and statistics are written against: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + FromStr + Display + Debug + Default + Send + Sync + 'static
{
    /// Allowed deviation of a unit quaternion's norm from 1.
    const NORM_TOLERANCE: Self;

    /// Lossy conversion from a literal. Panics only for values not representable at all.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {
    const NORM_TOLERANCE: Self = 1e-5;
}

impl Scalar for f64 {
    const NORM_TOLERANCE: Self = 1e-9;
}

/// Shortest decimal rendering that parses back to the same value.
///
/// `Display` for the std float types already produces the shortest round-trip digits.
pub fn render<T: Scalar>(v: T) -> String {
    format!("{v}")
}
