//! Scalar abstraction shared by the numerical modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the linear-algebra modules are generic over (`f32` or `f64`).
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Lossless for `f64`, rounding for `f32`.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Real converts to f64")
    }

    /// A relative tolerance no tighter than a small multiple of this type's epsilon.
    ///
    /// `f64` callers get `nominal` back unchanged for every tolerance used in this crate;
    /// `f32` callers get a floor of roughly `1e-5`.
    fn tol(nominal: f64) -> Self {
        let floor = Self::default_epsilon() * Self::of(64.0);
        let t = Self::of(nominal);
        if t > floor {
            t
        } else {
            floor
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
