//! Working precisions and the scalar abstraction the integrators are generic over.
//!
//! Three levels exist: binary32 (`f32`), binary64 (`f64`) and binary128
//! ([`Quad`], software emulated). Widening casts are exact; narrowing casts
//! round once to nearest-even.

mod quad;

use std::fmt::{self, Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use quad::{ParseQuadError, Quad, ROUND_TRIP_DIGITS};

/// [`Quad`] arithmetic is implemented in software on every target.
pub const QUAD_IS_SOFTWARE: bool = true;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrecisionLevel {
    #[serde(rename = "32")]
    Single,
    #[serde(rename = "64")]
    Double,
    #[serde(rename = "128")]
    Quad,
}

impl PrecisionLevel {
    pub const ALL: [PrecisionLevel; 3] =
        [PrecisionLevel::Single, PrecisionLevel::Double, PrecisionLevel::Quad];

    pub fn bits(self) -> u32 {
        match self {
            PrecisionLevel::Single => 32,
            PrecisionLevel::Double => 64,
            PrecisionLevel::Quad => 128,
        }
    }

    /// Gap between 1 and the next representable value (Fortran `epsilon()`).
    pub fn machine_epsilon(self) -> Quad {
        match self {
            PrecisionLevel::Single => Quad::from_f32(f32::EPSILON),
            PrecisionLevel::Double => Quad::from_f64(f64::EPSILON),
            PrecisionLevel::Quad => Quad::EPSILON,
        }
    }

    /// Half the machine epsilon: the worst relative rounding error.
    pub fn unit_roundoff(self) -> Quad {
        self.machine_epsilon() / Quad::from_f64(2.0)
    }

    /// True when `self` carries at least as many significand bits as `other`.
    pub fn at_least(self, other: PrecisionLevel) -> bool {
        self >= other
    }
}

impl Display for PrecisionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrecisionError {
    #[error("unknown precision {0:?}; expected 32, 64 or 128")]
    UnknownLevel(String),
    #[error("value {value} overflows {target}-bit precision")]
    Range { value: String, target: PrecisionLevel },
}

impl FromStr for PrecisionLevel {
    type Err = PrecisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "32" => Ok(PrecisionLevel::Single),
            "64" => Ok(PrecisionLevel::Double),
            "128" => Ok(PrecisionLevel::Quad),
            other => Err(PrecisionError::UnknownLevel(other.to_string())),
        }
    }
}

/// A floating point type that implements one [`PrecisionLevel`].
///
/// All arithmetic rounds to nearest-even at the type's own precision; there is
/// no hidden extended-precision evaluation.
pub trait Real:
    Copy
    + Default
    + Debug
    + Display
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const LEVEL: PrecisionLevel;
    const ZERO: Self;
    const ONE: Self;

    fn epsilon() -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_quad(x: Quad) -> Self;
    fn to_quad(self) -> Quad;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
    /// Raw encoding, zero-extended, for bitwise comparisons.
    fn to_bits(self) -> u128;

    /// Converts to another precision: exact when widening, one
    /// round-to-nearest-even when narrowing. Overflow yields infinity.
    #[inline]
    fn cast<U: Real>(self) -> U {
        if Self::LEVEL != PrecisionLevel::Quad && U::LEVEL != PrecisionLevel::Quad {
            U::from_f64(self.to_f64())
        } else {
            U::from_quad(self.to_quad())
        }
    }

    #[inline]
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f32 {
    const LEVEL: PrecisionLevel = PrecisionLevel::Single;
    const ZERO: f32 = 0.0;
    const ONE: f32 = 1.0;

    fn epsilon() -> f32 {
        f32::EPSILON
    }
    #[inline]
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_quad(x: Quad) -> f32 {
        x.to_f32()
    }
    #[inline]
    fn to_quad(self) -> Quad {
        Quad::from_f32(self)
    }
    #[inline]
    fn abs(self) -> f32 {
        f32::abs(self)
    }
    #[inline]
    fn sqrt(self) -> f32 {
        f32::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn to_bits(self) -> u128 {
        f32::to_bits(self) as u128
    }
}

impl Real for f64 {
    const LEVEL: PrecisionLevel = PrecisionLevel::Double;
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    fn epsilon() -> f64 {
        f64::EPSILON
    }
    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_quad(x: Quad) -> f64 {
        x.to_f64()
    }
    #[inline]
    fn to_quad(self) -> Quad {
        Quad::from_f64(self)
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn to_bits(self) -> u128 {
        f64::to_bits(self) as u128
    }
}

impl Real for Quad {
    const LEVEL: PrecisionLevel = PrecisionLevel::Quad;
    const ZERO: Quad = Quad::ZERO;
    const ONE: Quad = Quad::ONE;

    fn epsilon() -> Quad {
        Quad::EPSILON
    }
    #[inline]
    fn from_f64(x: f64) -> Quad {
        Quad::from_f64(x)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        Quad::to_f64(self)
    }
    #[inline]
    fn from_quad(x: Quad) -> Quad {
        x
    }
    #[inline]
    fn to_quad(self) -> Quad {
        self
    }
    #[inline]
    fn abs(self) -> Quad {
        Quad::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Quad {
        Quad::sqrt(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        Quad::is_finite(self)
    }
    fn to_bits(self) -> u128 {
        Quad::to_bits(self)
    }
}

/// Casts `x` to `U`, reporting a range error when a finite value overflows
/// the target. Non-finite inputs pass through unchanged.
pub fn checked_cast<S: Real, U: Real>(x: S) -> Result<U, PrecisionError> {
    let out: U = x.cast();
    if x.is_finite() && !out.is_finite() {
        return Err(PrecisionError::Range { value: x.to_string(), target: U::LEVEL });
    }
    Ok(out)
}

/// Machine epsilon of `T`, as a value of `T`.
pub fn machine_epsilon<T: Real>() -> T {
    T::epsilon()
}

/// Distance from |x| to the next representable value of larger magnitude.
pub fn ulp<T: Real>(x: T) -> T {
    let q = x.to_quad().abs();
    if q.is_zero() {
        return match T::LEVEL {
            PrecisionLevel::Single => T::from_f64(f32::from_bits(1) as f64),
            PrecisionLevel::Double => T::from_f64(f64::from_bits(1)),
            PrecisionLevel::Quad => T::from_quad(Quad::from_bits(1)),
        };
    }
    let e = q.to_f64().log2().floor() as i32;
    // floor(log2) in f64 can be off by one right at powers of two
    let mut p = Quad::powi2(e);
    if p > q {
        p = Quad::powi2(e - 1);
    } else if Quad::powi2(e + 1) <= q {
        p = Quad::powi2(e + 1);
    }
    T::from_quad(p) * T::epsilon()
}

/// Integer ulp distance between two finite values of the same type.
pub fn ulp_distance<T: Real>(a: T, b: T) -> u128 {
    fn key(bits: u128, width: u32) -> i128 {
        let sign = 1u128 << (width - 1);
        let mag = (bits & (sign - 1)) as i128;
        if bits & sign != 0 {
            -mag
        } else {
            mag
        }
    }
    let width = T::LEVEL.bits();
    key(a.to_bits(), width).abs_diff(key(b.to_bits(), width))
}
