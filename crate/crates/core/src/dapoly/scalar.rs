//! Scalar abstraction over `f64` and [`TaylorPoly`].
//!
//! Maps written against [`DaScalar`] evaluate identically over plain floats
//! and over Taylor polynomials, which is how element conversions, propagators
//! and measurement models are lifted into the polynomial algebra without
//! duplication. Domain checks mirror each other on both implementations so a
//! pointwise oracle fails exactly where the polynomial evaluation does.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{DaError, TaylorPoly};

pub trait DaScalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + Sized
{
    /// Constant (zeroth-order) part.
    fn const_part(&self) -> f64;

    /// A constant with the same algebra shape as `self`.
    fn lift(&self, value: f64) -> Self;

    /// Truncation order of the carrier; 0 for plain floats. Iterative
    /// solvers use this to pick how many algebra-level corrections are
    /// needed for coefficient convergence.
    fn truncation_order(&self) -> usize;

    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn atan(&self) -> Self;

    fn tan(&self) -> Result<Self, DaError>;
    fn asin(&self) -> Result<Self, DaError>;
    fn acos(&self) -> Result<Self, DaError>;
    fn atan2(&self, x: &Self) -> Result<Self, DaError>;
    fn sqrt(&self) -> Result<Self, DaError>;
    fn ln(&self) -> Result<Self, DaError>;
    fn recip(&self) -> Result<Self, DaError>;
    fn powi(&self, n: i32) -> Result<Self, DaError>;
    fn powf(&self, alpha: f64) -> Result<Self, DaError>;
}

impl DaScalar for f64 {
    fn const_part(&self) -> f64 {
        *self
    }

    fn lift(&self, value: f64) -> Self {
        value
    }

    fn truncation_order(&self) -> usize {
        0
    }

    fn sin(&self) -> Self {
        f64::sin(*self)
    }

    fn cos(&self) -> Self {
        f64::cos(*self)
    }

    fn exp(&self) -> Self {
        f64::exp(*self)
    }

    fn atan(&self) -> Self {
        f64::atan(*self)
    }

    fn tan(&self) -> Result<Self, DaError> {
        if f64::cos(*self) == 0.0 {
            return Err(DaError::DomainViolation {
                func: "tan",
                at: *self,
            });
        }
        Ok(f64::tan(*self))
    }

    // pointwise asin/acos admit the closed interval; the polynomial versions
    // need an interior expansion point
    fn asin(&self) -> Result<Self, DaError> {
        if self.abs() > 1.0 {
            return Err(DaError::DomainViolation {
                func: "asin",
                at: *self,
            });
        }
        Ok(f64::asin(*self))
    }

    fn acos(&self) -> Result<Self, DaError> {
        if self.abs() > 1.0 {
            return Err(DaError::DomainViolation {
                func: "acos",
                at: *self,
            });
        }
        Ok(f64::acos(*self))
    }

    fn atan2(&self, x: &Self) -> Result<Self, DaError> {
        // IEEE atan2(0, 0) = 0: ill-conditioned but finite pointwise
        Ok(f64::atan2(*self, *x))
    }

    fn sqrt(&self) -> Result<Self, DaError> {
        if *self <= 0.0 {
            return Err(DaError::DomainViolation {
                func: "sqrt",
                at: *self,
            });
        }
        Ok(f64::sqrt(*self))
    }

    fn ln(&self) -> Result<Self, DaError> {
        if *self <= 0.0 {
            return Err(DaError::DomainViolation {
                func: "log",
                at: *self,
            });
        }
        Ok(f64::ln(*self))
    }

    fn recip(&self) -> Result<Self, DaError> {
        if *self == 0.0 {
            return Err(DaError::DomainViolation {
                func: "reciprocal",
                at: *self,
            });
        }
        Ok(1.0 / *self)
    }

    fn powi(&self, n: i32) -> Result<Self, DaError> {
        if n < 0 && *self == 0.0 {
            return Err(DaError::DomainViolation {
                func: "reciprocal",
                at: *self,
            });
        }
        Ok(f64::powi(*self, n))
    }

    fn powf(&self, alpha: f64) -> Result<Self, DaError> {
        if *self <= 0.0 {
            return Err(DaError::DomainViolation {
                func: "power",
                at: *self,
            });
        }
        Ok(f64::powf(*self, alpha))
    }
}

impl DaScalar for TaylorPoly {
    fn const_part(&self) -> f64 {
        TaylorPoly::const_part(self)
    }

    fn lift(&self, value: f64) -> Self {
        TaylorPoly::constant(self.spec(), value)
    }

    fn truncation_order(&self) -> usize {
        self.order() as usize
    }

    fn sin(&self) -> Self {
        TaylorPoly::sin(self)
    }

    fn cos(&self) -> Self {
        TaylorPoly::cos(self)
    }

    fn exp(&self) -> Self {
        TaylorPoly::exp(self)
    }

    fn atan(&self) -> Self {
        TaylorPoly::atan(self)
    }

    fn tan(&self) -> Result<Self, DaError> {
        TaylorPoly::tan(self)
    }

    fn asin(&self) -> Result<Self, DaError> {
        TaylorPoly::asin(self)
    }

    fn acos(&self) -> Result<Self, DaError> {
        TaylorPoly::acos(self)
    }

    fn atan2(&self, x: &Self) -> Result<Self, DaError> {
        TaylorPoly::atan2(self, x)
    }

    fn sqrt(&self) -> Result<Self, DaError> {
        TaylorPoly::sqrt(self)
    }

    fn ln(&self) -> Result<Self, DaError> {
        TaylorPoly::ln(self)
    }

    fn recip(&self) -> Result<Self, DaError> {
        TaylorPoly::recip(self)
    }

    fn powi(&self, n: i32) -> Result<Self, DaError> {
        TaylorPoly::powi(self, n)
    }

    fn powf(&self, alpha: f64) -> Result<Self, DaError> {
        TaylorPoly::powf(self, alpha)
    }
}

// ----- small fixed-size vector helpers used by the generic astro code -----

pub fn dot3<T: DaScalar>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0].clone() * b[0].clone() + a[1].clone() * b[1].clone() + a[2].clone() * b[2].clone()
}

pub fn cross3<T: DaScalar>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1].clone() * b[2].clone() - a[2].clone() * b[1].clone(),
        a[2].clone() * b[0].clone() - a[0].clone() * b[2].clone(),
        a[0].clone() * b[1].clone() - a[1].clone() * b[0].clone(),
    ]
}

pub fn norm3<T: DaScalar>(a: &[T; 3]) -> Result<T, DaError> {
    dot3(a, a).sqrt()
}

pub fn add3<T: DaScalar>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[0].clone() + b[0].clone(),
        a[1].clone() + b[1].clone(),
        a[2].clone() + b[2].clone(),
    ]
}

pub fn sub3<T: DaScalar>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[0].clone() - b[0].clone(),
        a[1].clone() - b[1].clone(),
        a[2].clone() - b[2].clone(),
    ]
}

pub fn scale3<T: DaScalar>(a: &[T; 3], s: &T) -> [T; 3] {
    [
        a[0].clone() * s.clone(),
        a[1].clone() * s.clone(),
        a[2].clone() * s.clone(),
    ]
}

pub fn scale3_f64<T: DaScalar>(a: &[T; 3], s: f64) -> [T; 3] {
    [a[0].clone() * s, a[1].clone() * s, a[2].clone() * s]
}
