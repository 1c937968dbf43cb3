//! Scalar abstraction: all numeric code in this crate is generic over the
//! floating-point type through [`Scalar`]. Concrete aliases live at the
//! crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every solver, estimator and diagnostic.
///
/// Implemented for `f32` and `f64` via the blanket impl below.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and RNG output.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 must convert to a Scalar")
    }

    /// Widening conversion to `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar must convert to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_both_widths() {
        assert_eq!(<f64 as Scalar>::of(1.5), 1.5);
        assert_eq!(<f32 as Scalar>::of(1.5), 1.5f32);
        assert_eq!(1.25f32.as_f64(), 1.25);
    }
}
