//! Forward-mode automatic differentiation.
//!
//! [`Dual`] carries a value together with its partial derivatives with respect
//! to `P` seeded parameters. Every operation applies the chain rule to the
//! derivative part while computing the value part exactly as plain
//! floating-point code would, so a kernel written against [`Scalar`] yields
//! bit-identical values whether it runs on `f64` or on `Dual<f64, P>`.
//!
//! Branching helpers (`min_s`, `max_s`, `clamp_s`) select by value and carry
//! the derivative of the selected branch. On ties the first argument wins.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Numeric type the renderer kernels are generic over.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant (zero derivative).
    fn cst(v: f64) -> Self;
    /// The primal value.
    fn value(&self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powf(self, e: f64) -> Self;

    /// Smaller of the two by value; `self` on ties.
    #[inline]
    fn min_s(self, o: Self) -> Self {
        if self.value() <= o.value() {
            self
        } else {
            o
        }
    }

    /// Larger of the two by value; `self` on ties.
    #[inline]
    fn max_s(self, o: Self) -> Self {
        if self.value() >= o.value() {
            self
        } else {
            o
        }
    }

    #[inline]
    fn clamp_s(self, lo: f64, hi: f64) -> Self {
        let v = self.value();
        if v < lo {
            Self::cst(lo)
        } else if v > hi {
            Self::cst(hi)
        } else {
            self
        }
    }
}

macro_rules! impl_scalar_float {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn cst(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn value(&self) -> f64 {
                *self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            #[inline]
            fn powf(self, e: f64) -> Self {
                <$t>::powf(self, e as $t)
            }
        }
    };
}

impl_scalar_float!(f64);
impl_scalar_float!(f32);

/// A forward variable: value plus `P` partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const P: usize> {
    pub value: T,
    pub deriv: [T; P],
}

impl<T: Scalar, const P: usize> Dual<T, P> {
    #[inline]
    pub fn new(value: T, deriv: [T; P]) -> Self {
        Self { value, deriv }
    }

    #[inline]
    pub fn constant(value: T) -> Self {
        Self::new(value, [T::cst(0.0); P])
    }

    /// A parameter seeded with derivative one in slot `slot`.
    pub fn variable(value: T, slot: usize) -> Self {
        let mut d = Self::constant(value);
        d.deriv[slot] = T::cst(1.0);
        d
    }

    /// Applies a scalar function given its value and derivative at `self.value`.
    #[inline]
    fn chain(self, value: T, slope: T) -> Self {
        let mut deriv = self.deriv;
        for d in deriv.iter_mut() {
            *d = slope * *d;
        }
        Self::new(value, deriv)
    }

    pub fn checked_div(self, rhs: Self) -> Result<Self> {
        if rhs.value.value() == 0.0 {
            return Err(Error::Domain("division by a dual with zero value".into()));
        }
        Ok(self / rhs)
    }

    pub fn checked_ln(self) -> Result<Self> {
        if self.value.value() <= 0.0 {
            return Err(Error::Domain(format!(
                "ln of non-positive value {}",
                self.value.value()
            )));
        }
        Ok(self.ln())
    }

    pub fn checked_sqrt(self) -> Result<Self> {
        if self.value.value() < 0.0 {
            return Err(Error::Domain(format!(
                "sqrt of negative value {}",
                self.value.value()
            )));
        }
        Ok(self.sqrt())
    }

    /// `self^e` for a dual exponent. Requires a positive base.
    pub fn pow(self, e: Self) -> Result<Self> {
        let b = self.value.value();
        if b <= 0.0 {
            return Err(Error::Domain(format!("pow with non-positive base {b}")));
        }
        let value = self.value.powf(e.value.value());
        // d(a^b) = b a^(b-1) da + a^b ln(a) db
        let da = e.value * self.value.powf(e.value.value() - 1.0);
        let db = value * self.value.ln();
        let mut deriv = [T::cst(0.0); P];
        for i in 0..P {
            deriv[i] = da * self.deriv[i] + db * e.deriv[i];
        }
        Ok(Self::new(value, deriv))
    }
}

impl<T: Scalar, const P: usize> Add for Dual<T, P> {
    type Output = Self;
    #[inline]
    fn add(self, b: Self) -> Self {
        let mut deriv = self.deriv;
        for i in 0..P {
            deriv[i] = self.deriv[i] + b.deriv[i];
        }
        Self::new(self.value + b.value, deriv)
    }
}

impl<T: Scalar, const P: usize> Sub for Dual<T, P> {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        let mut deriv = self.deriv;
        for i in 0..P {
            deriv[i] = self.deriv[i] - b.deriv[i];
        }
        Self::new(self.value - b.value, deriv)
    }
}

impl<T: Scalar, const P: usize> Mul for Dual<T, P> {
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        let mut deriv = self.deriv;
        for i in 0..P {
            deriv[i] = self.value * b.deriv[i] + b.value * self.deriv[i];
        }
        Self::new(self.value * b.value, deriv)
    }
}

impl<T: Scalar, const P: usize> Div for Dual<T, P> {
    type Output = Self;
    /// IEEE semantics on a zero denominator; see [`Dual::checked_div`].
    #[inline]
    fn div(self, b: Self) -> Self {
        let value = self.value / b.value;
        let mut deriv = self.deriv;
        for i in 0..P {
            deriv[i] = (self.deriv[i] - value * b.deriv[i]) / b.value;
        }
        Self::new(value, deriv)
    }
}

impl<T: Scalar, const P: usize> Neg for Dual<T, P> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut deriv = self.deriv;
        for d in deriv.iter_mut() {
            *d = -*d;
        }
        Self::new(-self.value, deriv)
    }
}

impl<T: Scalar, const P: usize> Scalar for Dual<T, P> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.value.value()
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.value.ln(), T::cst(1.0) / self.value)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, T::cst(0.5) / s)
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }
    #[inline]
    fn powf(self, e: f64) -> Self {
        self.chain(
            self.value.powf(e),
            T::cst(e) * self.value.powf(e - 1.0),
        )
    }
}
