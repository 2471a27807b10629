//! Scalar abstraction over the floating-point type.
//!
//! Everything numeric in this crate is generic over [`Real`], which is
//! implemented for `f32` and `f64`. The trait pins two per-width concerns:
//! the decimal wire format used in CSV files (enough significant digits
//! that parsing the emitted string returns the exact same bits), and
//! gamma sampling, which the beta sampler in [`crate::beta`] builds on.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;
use rand::distributions::Distribution;
use rand::Rng;
use rand_distr::Gamma;

use crate::error::{Error, Result};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + SampleUniform
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Prepared `Gamma(shape, 1)` sampler for this width.
    type GammaSampler: Clone + Debug + Send + Sync;

    /// Build a `Gamma(shape, 1)` sampler; `shape` must be positive and finite.
    fn new_gamma(shape: Self) -> Result<Self::GammaSampler>;

    /// One draw from a prepared gamma sampler.
    fn sample_gamma<R: Rng + ?Sized>(sampler: &Self::GammaSampler, rng: &mut R) -> Self;

    /// Render with enough significant digits that parsing returns the same bits.
    fn to_decimal(self) -> String;

    /// Parse a plain or scientific decimal string.
    fn from_decimal(s: &str) -> Option<Self>;
}

impl Real for f64 {
    type GammaSampler = Gamma<f64>;

    fn new_gamma(shape: Self) -> Result<Self::GammaSampler> {
        Gamma::new(shape, 1.0).map_err(|e| Error::InvalidParameter(format!("gamma({shape}): {e}")))
    }

    fn sample_gamma<R: Rng + ?Sized>(sampler: &Self::GammaSampler, rng: &mut R) -> Self {
        sampler.sample(rng)
    }

    // 17 significant digits; round-trips every finite f64.
    fn to_decimal(self) -> String {
        format!("{:.16e}", self)
    }

    fn from_decimal(s: &str) -> Option<Self> {
        s.trim().parse().ok()
    }
}

impl Real for f32 {
    type GammaSampler = Gamma<f32>;

    fn new_gamma(shape: Self) -> Result<Self::GammaSampler> {
        Gamma::new(shape, 1.0).map_err(|e| Error::InvalidParameter(format!("gamma({shape}): {e}")))
    }

    fn sample_gamma<R: Rng + ?Sized>(sampler: &Self::GammaSampler, rng: &mut R) -> Self {
        sampler.sample(rng)
    }

    // 9 significant digits; round-trips every finite f32.
    fn to_decimal(self) -> String {
        format!("{:.8e}", self)
    }

    fn from_decimal(s: &str) -> Option<Self> {
        s.trim().parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_round_trip_is_bit_exact() {
        for &x in &[
            0.0f64,
            0.1,
            0.5,
            1.0,
            1e-300,
            0.30000000000000004,
            1.0 / 3.0,
        ] {
            let s = x.to_decimal();
            let back = f64::from_decimal(&s).unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{s}");
        }
        for &x in &[0.0f32, 0.1, 0.5, 1.0, 1.0 / 3.0] {
            let s = x.to_decimal();
            let back = f32::from_decimal(&s).unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{s}");
        }
    }

    #[test]
    fn gamma_sampler_rejects_bad_shapes() {
        assert!(f64::new_gamma(0.0).is_err());
        assert!(f64::new_gamma(-1.0).is_err());
        assert!(f64::new_gamma(2.5).is_ok());
    }
}
