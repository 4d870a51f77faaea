//! Scalar abstraction shared by the coupling rules.
//!
//! Each coupling is written once as a partition of the unit mark interval. The
//! simulators instantiate it with `f64`; the exact oracle instantiates the same
//! code with [`Exact`] rationals, so rate tables are checked without tolerance.

use num_rational::Ratio;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub type Exact = Ratio<i128>;

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(v: i64) -> Self;
    fn to_f64(self) -> f64;
    fn is_zero(self) -> bool {
        self == Self::zero()
    }
}

impl Real for f64 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for Exact {
    fn zero() -> Self {
        Ratio::from_integer(0)
    }
    fn one() -> Self {
        Ratio::from_integer(1)
    }
    fn from_i64(v: i64) -> Self {
        Ratio::from_integer(v as i128)
    }
    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Rational `n/d`.
pub fn exact(n: i128, d: i128) -> Exact {
    Ratio::new(n, d)
}
