//! Scalar abstraction shared by every module.

use nalgebra::{Complex, RealField};
use num_traits::{FromPrimitive, ToPrimitive};
use rustfft::FftNum;
use serde::{de::DeserializeOwned, Serialize};

/// Real scalar the numerics are generic over (`f32` or `f64`).
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + FftNum + Default + Serialize + DeserializeOwned
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// `max(x, factor * machine_epsilon)`: a tolerance that never drops below
    /// what the precision can resolve.
    #[inline]
    fn tol(x: f64, factor: f64) -> Self {
        let eps = Self::default_epsilon().as_f64();
        Self::lit(x.max(factor * eps))
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type C<T> = Complex<T>;

#[inline]
pub fn c<T: Real>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

#[inline]
pub fn czero<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn cone<T: Real>() -> C<T> {
    Complex::new(T::one(), T::zero())
}

/// `e^{iθ}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> C<T> {
    Complex::new(theta.cos(), theta.sin())
}

#[inline]
pub fn cabs<T: Real>(z: C<T>) -> T {
    z.re.hypot(z.im)
}

/// Neumaier-compensated sum of real terms.
pub fn compensated_sum<T: Real>(terms: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated sum of complex terms, componentwise.
pub fn compensated_csum<T: Real>(terms: &[C<T>]) -> C<T> {
    Complex::new(
        compensated_sum(terms.iter().map(|z| z.re)),
        compensated_sum(terms.iter().map(|z| z.im)),
    )
}
