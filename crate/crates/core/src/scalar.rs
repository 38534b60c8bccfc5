//! Scalar abstraction for the numeric core.
//!
//! All math modules (network, metrics, operating-point analysis) are generic
//! over [`Scalar`] so they run at `f32` or `f64`; the crate root exports
//! [`crate::Real`] (`f64`) as the default used by data generation, training
//! and the CLI.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core.
///
/// Beyond `num_traits::Float`, implementors provide exact bit-level
/// conversion (for lossless checkpoint round-trips) and a type name for
/// checkpoint headers.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Type tag written into checkpoint headers ("f32" or "f64").
    const NAME: &'static str;

    /// Raw IEEE-754 bits, widened to u64 for f32.
    fn to_bits_u64(self) -> u64;

    /// Inverse of [`Scalar::to_bits_u64`]; exact for round-trips.
    fn from_bits_u64(bits: u64) -> Self;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn to_bits_u64(self) -> u64 {
        u64::from(self.to_bits())
    }

    fn from_bits_u64(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }

    fn from_bits_u64(bits: u64) -> Self {
        f64::from_bits(bits)
    }
}

/// Convert an `f64` constant into the working scalar type.
///
/// Panics only on non-finite input, which would be a programming error.
#[inline]
pub fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("finite f64 converts to scalar")
}

/// Convert a count into the working scalar type.
#[inline]
pub fn cast_usize<S: Scalar>(n: usize) -> S {
    S::from_usize(n).expect("usize converts to scalar")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_round_trip_is_exact() {
        for x in [0.0f64, -0.0, 1.5, -3.25e-300, f64::MAX, f64::MIN_POSITIVE] {
            assert_eq!(f64::from_bits_u64(x.to_bits_u64()).to_bits(), x.to_bits());
        }
        for x in [0.0f32, -1.5, 7.25e-30, f32::MAX] {
            assert_eq!(f32::from_bits_u64(x.to_bits_u64()).to_bits(), x.to_bits());
        }
    }

    #[test]
    fn cast_works_for_both_widths() {
        let a: f32 = cast(0.5);
        let b: f64 = cast(0.5);
        assert_eq!(a, 0.5f32);
        assert_eq!(b, 0.5f64);
    }
}
