//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftNum;

/// Real floating-point type the simulator is instantiated with (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// One draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Hyperbolic tangent used by the network activations. Exact for `f64`;
    /// a branch-free rational approximation (|error| < 1e-6) for `f32`.
    fn act_tanh(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn act_tanh(self) -> Self {
        // odd 13/6 rational fit on [-7.9, 7.9]
        const A: [f32; 7] = [
            4.893_524_5e-3,
            6.372_619_3e-4,
            1.485_722_4e-5,
            5.122_297e-8,
            -8.604_671_5e-11,
            2.000_187_9e-13,
            -2.760_768_5e-16,
        ];
        const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347_1e-4, 1.198_258_4e-6];
        let x = self.clamp(-7.905_311, 7.905_311);
        let x2 = x * x;
        let mut p = A[6];
        for &a in A[..6].iter().rev() {
            p = p * x2 + a;
        }
        let mut q = B[3];
        for &b in B[..3].iter().rev() {
            q = q * x2 + b;
        }
        x * p / q
    }
}

impl Scalar for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn act_tanh(self) -> Self {
        self.tanh()
    }
}

pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn czero<T: Scalar>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_activation_tanh_is_accurate() {
        let mut worst = 0f64;
        for k in -200_000..=200_000 {
            let x = k as f64 * 1e-4;
            let e = ((x as f32).act_tanh() as f64 - x.tanh()).abs();
            worst = worst.max(e);
        }
        assert!(worst < 1e-6, "{worst}");
        assert_eq!(0f32.act_tanh(), 0.0);
        assert_eq!((-0.3f32).act_tanh(), -(0.3f32.act_tanh()));
        assert!(100f32.act_tanh() <= 1.0);
    }
}
