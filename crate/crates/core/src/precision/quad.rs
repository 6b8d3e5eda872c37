//! IEEE 754 binary128 ("quad") arithmetic implemented in software.
//!
//! Every operation rounds to nearest, ties to even, exactly as hardware
//! binary128 would. Subnormals, signed zeros, infinities and NaN follow the
//! IEEE semantics; NaN payloads are not preserved.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, Zero};

const SIG_BITS: u32 = 112;
const BIAS: i32 = 16383;
const MAX_EXP: i32 = 0x7fff;
const SIGN_MASK: u128 = 1 << 127;
const ABS_MASK: u128 = SIGN_MASK - 1;
const IMPLICIT: u128 = 1 << SIG_BITS;
const SIG_MASK: u128 = IMPLICIT - 1;
const INF_REP: u128 = ABS_MASK ^ SIG_MASK;
const QUIET: u128 = IMPLICIT >> 1;
const QNAN_REP: u128 = INF_REP | QUIET;

/// A binary128 floating point number stored as its raw encoding.
#[derive(Clone, Copy, Default)]
pub struct Quad(u128);

impl Quad {
    pub const ZERO: Quad = Quad(0);
    pub const ONE: Quad = Quad((BIAS as u128) << SIG_BITS);
    pub const NEG_ONE: Quad = Quad(SIGN_MASK | ((BIAS as u128) << SIG_BITS));
    pub const INFINITY: Quad = Quad(INF_REP);
    pub const NEG_INFINITY: Quad = Quad(SIGN_MASK | INF_REP);
    pub const NAN: Quad = Quad(QNAN_REP);
    /// Distance from 1 to the next representable value, 2^-112.
    pub const EPSILON: Quad = Quad(((BIAS - SIG_BITS as i32) as u128) << SIG_BITS);
    pub const MAX: Quad = Quad(INF_REP - 1);
    pub const MIN_POSITIVE: Quad = Quad(IMPLICIT);

    pub const fn from_bits(bits: u128) -> Quad {
        Quad(bits)
    }

    pub const fn to_bits(self) -> u128 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        self.0 & ABS_MASK > INF_REP
    }

    pub fn is_infinite(self) -> bool {
        self.0 & ABS_MASK == INF_REP
    }

    pub fn is_finite(self) -> bool {
        self.0 & ABS_MASK < INF_REP
    }

    pub fn is_zero(self) -> bool {
        self.0 & ABS_MASK == 0
    }

    pub fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    pub fn abs(self) -> Quad {
        Quad(self.0 & ABS_MASK)
    }

    /// 2^exp for exponents in the normal range.
    pub fn powi2(exp: i32) -> Quad {
        assert!((1 - BIAS..=BIAS).contains(&exp), "exponent {exp} outside normal range");
        Quad(((exp + BIAS) as u128) << SIG_BITS)
    }

    pub fn from_f64(x: f64) -> Quad {
        let bits = x.to_bits();
        let sign = ((bits >> 63) as u128) << 127;
        let exp = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        if exp == 0x7ff {
            return if frac == 0 { Quad(sign | INF_REP) } else { Quad(sign | QNAN_REP) };
        }
        if exp == 0 && frac == 0 {
            return Quad(sign);
        }
        let (unbiased, sig) = if exp == 0 {
            let shift = frac.leading_zeros() - 11;
            (-1022 - shift as i32, frac << shift)
        } else {
            (exp - 1023, frac | (1 << 52))
        };
        let biased = (unbiased + BIAS) as u128;
        Quad(sign | (biased << SIG_BITS) | (((sig as u128) << (SIG_BITS - 52)) & SIG_MASK))
    }

    pub fn from_f32(x: f32) -> Quad {
        Quad::from_f64(x as f64)
    }

    /// Nearest binary64 value. Magnitudes beyond `f64::MAX` become infinite.
    pub fn to_f64(self) -> f64 {
        let n = self.narrow(53, 1023);
        f64::from_bits(((n.negative as u64) << 63) | n.magnitude as u64)
    }

    /// Nearest binary32 value, rounded once directly from binary128.
    pub fn to_f32(self) -> f32 {
        let n = self.narrow(24, 127);
        f32::from_bits(((n.negative as u32) << 31) | n.magnitude as u32)
    }

    /// True when narrowing a finite value to binary64 overflows.
    pub fn overflows_f64(self) -> bool {
        self.narrow(53, 1023).overflow
    }

    /// True when narrowing a finite value to binary32 overflows.
    pub fn overflows_f32(self) -> bool {
        self.narrow(24, 127).overflow
    }

    fn narrow(self, precision: u32, bias: i32) -> Narrowed {
        let negative = self.is_sign_negative();
        let abs = self.0 & ABS_MASK;
        let max_biased = (2 * bias + 1) as u128;
        let inf = max_biased << (precision - 1);
        if abs > INF_REP {
            let quiet = 1u128 << (precision - 2);
            return Narrowed { negative, magnitude: inf | quiet, overflow: false };
        }
        if abs == INF_REP {
            return Narrowed { negative, magnitude: inf, overflow: false };
        }
        if abs == 0 {
            return Narrowed { negative, magnitude: 0, overflow: false };
        }
        let (exp, sig) = unpack(abs);
        let target = exp - BIAS + bias;
        let extra = if target < 1 { (1 - target) as u32 } else { 0 };
        let shift = (SIG_BITS + 1 - precision + extra).min(127);
        let rounded = shift_round_even(sig, shift);
        let magnitude = if target < 1 {
            rounded
        } else {
            (((target - 1) as u128) << (precision - 1)) + rounded
        };
        if magnitude >= inf {
            Narrowed { negative, magnitude: inf, overflow: true }
        } else {
            Narrowed { negative, magnitude, overflow: false }
        }
    }

    pub fn sqrt(self) -> Quad {
        let abs = self.0 & ABS_MASK;
        if abs == 0 {
            return self;
        }
        if abs > INF_REP || self.is_sign_negative() {
            return Quad::NAN;
        }
        if abs == INF_REP {
            return self;
        }
        let (exp, sig) = unpack(abs);
        // value = sig * 2^(e - 112) with the exponent made even by widening sig.
        let mut e = exp - BIAS;
        let mut m = sig;
        if e & 1 != 0 {
            m <<= 1;
            e -= 1;
        }
        let mut rem: u128 = 0;
        let mut root: u128 = 0;
        for i in 0..116i32 {
            let pos = 112 - 2 * i;
            let pair = if pos >= 0 { (m >> pos) & 3 } else { 0 };
            rem = (rem << 2) | pair;
            let trial = (root << 2) | 1;
            root <<= 1;
            if rem >= trial {
                rem -= trial;
                root |= 1;
            }
        }
        round_pack(0, e / 2 + BIAS, root | (rem != 0) as u128)
    }

    /// Scientific notation with `digits` significant decimal digits, rounded
    /// half-to-even from the exact binary value. Formatted like Rust's `{:e}`.
    pub fn to_sci_string(self, digits: usize) -> String {
        assert!(digits >= 1);
        if self.is_nan() {
            return "NaN".to_string();
        }
        let sign = if self.is_sign_negative() { "-" } else { "" };
        if self.is_infinite() {
            return format!("{sign}inf");
        }
        if self.is_zero() {
            return if digits == 1 {
                format!("{sign}0e0")
            } else {
                format!("{sign}0.{}e0", "0".repeat(digits - 1))
            };
        }
        let (exp, sig) = unpack(self.0 & ABS_MASK);
        let k = exp - BIAS - SIG_BITS as i32;
        let mut num = BigUint::from(sig);
        let mut den = BigUint::one();
        if k >= 0 {
            num <<= k as usize;
        } else {
            den <<= (-k) as usize;
        }
        let log2 = (exp - BIAS) as f64;
        let mut d10 = (log2 * std::f64::consts::LOG10_2).floor() as i64;
        let upper = BigUint::from(10u32).pow(digits as u32);
        let lower = BigUint::from(10u32).pow(digits as u32 - 1);
        loop {
            let s = digits as i64 - 1 - d10;
            let (n, d) = if s >= 0 {
                (&num * pow10(s as u32), den.clone())
            } else {
                (num.clone(), &den * pow10((-s) as u32))
            };
            let q = div_round_even(&n, &d);
            if q >= upper {
                d10 += 1;
                continue;
            }
            if q < lower {
                d10 -= 1;
                continue;
            }
            let text = q.to_str_radix(10);
            let (head, tail) = text.split_at(1);
            return if tail.is_empty() {
                format!("{sign}{head}e{d10}")
            } else {
                format!("{sign}{head}.{tail}e{d10}")
            };
        }
    }
}

struct Narrowed {
    negative: bool,
    magnitude: u128,
    overflow: bool,
}

fn pow10(e: u32) -> BigUint {
    BigUint::from(10u32).pow(e)
}

fn div_round_even(n: &BigUint, d: &BigUint) -> BigUint {
    let q = n / d;
    let r = n - &q * d;
    let twice = r << 1usize;
    if twice > *d || (twice == *d && q.bit(0)) {
        q + 1u32
    } else {
        q
    }
}

/// Splits a finite nonzero magnitude into (biased exponent, significand with
/// the implicit bit at position 112). Subnormals get exponents below 1.
fn unpack(abs: u128) -> (i32, u128) {
    let exp = (abs >> SIG_BITS) as i32;
    let frac = abs & SIG_MASK;
    if exp == 0 {
        let shift = frac.leading_zeros() - IMPLICIT.leading_zeros();
        (1 - shift as i32, frac << shift)
    } else {
        (exp, frac | IMPLICIT)
    }
}

fn shift_round_even(m: u128, shift: u32) -> u128 {
    if shift == 0 {
        return m;
    }
    let q = m >> shift;
    let rem = m & ((1u128 << shift) - 1);
    let half = 1u128 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Rounds and encodes `sig * 2^(exp - BIAS - 115)`, where `sig` carries the
/// leading bit at position 115 followed by guard, round and sticky bits.
fn round_pack(sign: u128, mut exp: i32, mut sig: u128) -> Quad {
    if exp >= MAX_EXP {
        return Quad(sign | INF_REP);
    }
    if exp <= 0 {
        let shift = (1 - exp) as u32;
        if shift >= 128 {
            sig = (sig != 0) as u128;
        } else {
            let sticky = (sig << (128 - shift)) != 0;
            sig = (sig >> shift) | sticky as u128;
        }
        exp = 0;
    }
    let rgs = sig & 7;
    let mut result = ((sig >> 3) & SIG_MASK) | ((exp as u128) << SIG_BITS) | sign;
    if rgs > 4 || (rgs == 4 && result & 1 == 1) {
        result += 1;
    }
    Quad(result)
}

fn add(a: Quad, b: Quad) -> Quad {
    let mut a_rep = a.0;
    let mut b_rep = b.0;
    let a_abs = a_rep & ABS_MASK;
    let b_abs = b_rep & ABS_MASK;

    if a_abs.wrapping_sub(1) >= INF_REP - 1 || b_abs.wrapping_sub(1) >= INF_REP - 1 {
        if a_abs > INF_REP || b_abs > INF_REP {
            return Quad::NAN;
        }
        if a_abs == INF_REP {
            return if a_rep ^ b_rep == SIGN_MASK { Quad::NAN } else { a };
        }
        if b_abs == INF_REP {
            return b;
        }
        if a_abs == 0 {
            return if b_abs == 0 { Quad(a_rep & b_rep) } else { b };
        }
        if b_abs == 0 {
            return a;
        }
    }

    if b_abs > a_abs {
        std::mem::swap(&mut a_rep, &mut b_rep);
    }
    let (mut a_exp, a_sig) = unpack(a_rep & ABS_MASK);
    let (b_exp, b_sig) = unpack(b_rep & ABS_MASK);
    let sign = a_rep & SIGN_MASK;
    let subtract = (a_rep ^ b_rep) & SIGN_MASK != 0;

    let mut a_sig = a_sig << 3;
    let mut b_sig = b_sig << 3;
    let align = (a_exp - b_exp) as u32;
    if align != 0 {
        if align < 128 {
            let sticky = (b_sig << (128 - align)) != 0;
            b_sig = (b_sig >> align) | sticky as u128;
        } else {
            b_sig = 1;
        }
    }
    if subtract {
        a_sig -= b_sig;
        if a_sig == 0 {
            return Quad::ZERO;
        }
        if a_sig < IMPLICIT << 3 {
            let shift = a_sig.leading_zeros() - (IMPLICIT << 3).leading_zeros();
            a_sig <<= shift;
            a_exp -= shift as i32;
        }
    } else {
        a_sig += b_sig;
        if a_sig & (IMPLICIT << 4) != 0 {
            let sticky = a_sig & 1;
            a_sig = (a_sig >> 1) | sticky;
            a_exp += 1;
        }
    }
    round_pack(sign, a_exp, a_sig)
}

fn mul(a: Quad, b: Quad) -> Quad {
    let sign = (a.0 ^ b.0) & SIGN_MASK;
    let a_abs = a.0 & ABS_MASK;
    let b_abs = b.0 & ABS_MASK;
    if a_abs.wrapping_sub(1) >= INF_REP - 1 || b_abs.wrapping_sub(1) >= INF_REP - 1 {
        if a_abs > INF_REP || b_abs > INF_REP {
            return Quad::NAN;
        }
        if a_abs == INF_REP {
            return if b_abs == 0 { Quad::NAN } else { Quad(sign | INF_REP) };
        }
        if b_abs == INF_REP {
            return if a_abs == 0 { Quad::NAN } else { Quad(sign | INF_REP) };
        }
        return Quad(sign);
    }
    let (a_exp, a_sig) = unpack(a_abs);
    let (b_exp, b_sig) = unpack(b_abs);
    let (hi, lo) = wide_mul(a_sig, b_sig);
    let mut exp = a_exp + b_exp - BIAS;
    // Product lies in [2^224, 2^226); move the leading bit to position 115.
    let shift = if hi >> (225 - 128) != 0 {
        exp += 1;
        110
    } else {
        109
    };
    let sticky = lo & ((1u128 << shift) - 1) != 0;
    let sig = (hi << (128 - shift)) | (lo >> shift) | sticky as u128;
    round_pack(sign, exp, sig)
}

fn wide_mul(a: u128, b: u128) -> (u128, u128) {
    let (a1, a0) = (a >> 64, a & u64::MAX as u128);
    let (b1, b0) = (b >> 64, b & u64::MAX as u128);
    let p00 = a0 * b0;
    // Operands are below 2^113, so the cross terms cannot overflow.
    let mid = a0 * b1 + a1 * b0;
    let lo = p00.wrapping_add(mid << 64);
    let carry = (lo < p00) as u128;
    let hi = a1 * b1 + (mid >> 64) + carry;
    (hi, lo)
}

fn div(a: Quad, b: Quad) -> Quad {
    let sign = (a.0 ^ b.0) & SIGN_MASK;
    let a_abs = a.0 & ABS_MASK;
    let b_abs = b.0 & ABS_MASK;
    if a_abs.wrapping_sub(1) >= INF_REP - 1 || b_abs.wrapping_sub(1) >= INF_REP - 1 {
        if a_abs > INF_REP || b_abs > INF_REP {
            return Quad::NAN;
        }
        if a_abs == INF_REP {
            return if b_abs == INF_REP { Quad::NAN } else { Quad(sign | INF_REP) };
        }
        if b_abs == INF_REP {
            return Quad(sign);
        }
        if a_abs == 0 {
            return if b_abs == 0 { Quad::NAN } else { Quad(sign) };
        }
        return Quad(sign | INF_REP);
    }
    let (a_exp, mut a_sig) = unpack(a_abs);
    let (b_exp, b_sig) = unpack(b_abs);
    let mut exp = a_exp - b_exp + BIAS;
    if a_sig < b_sig {
        a_sig <<= 1;
        exp -= 1;
    }
    // Long division in 14-bit digits: rem < b_sig < 2^113, so rem << 14 fits.
    let mut quot: u128 = 1;
    let mut rem = a_sig - b_sig;
    let mut remaining = 115;
    while remaining > 0 {
        let k = remaining.min(14);
        rem <<= k;
        let digit = rem / b_sig;
        quot = (quot << k) | digit;
        rem -= digit * b_sig;
        remaining -= k;
    }
    round_pack(sign, exp, quot | (rem != 0) as u128)
}

impl Add for Quad {
    type Output = Quad;
    #[inline]
    fn add(self, rhs: Quad) -> Quad {
        add(self, rhs)
    }
}

impl Sub for Quad {
    type Output = Quad;
    #[inline]
    fn sub(self, rhs: Quad) -> Quad {
        add(self, -rhs)
    }
}

impl Mul for Quad {
    type Output = Quad;
    #[inline]
    fn mul(self, rhs: Quad) -> Quad {
        mul(self, rhs)
    }
}

impl Div for Quad {
    type Output = Quad;
    #[inline]
    fn div(self, rhs: Quad) -> Quad {
        div(self, rhs)
    }
}

impl Neg for Quad {
    type Output = Quad;
    #[inline]
    fn neg(self) -> Quad {
        Quad(self.0 ^ SIGN_MASK)
    }
}

macro_rules! assign_op {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for Quad {
            #[inline]
            fn $method(&mut self, rhs: Quad) {
                *self = *self $op rhs;
            }
        }
    };
}

assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl PartialEq for Quad {
    fn eq(&self, other: &Quad) -> bool {
        self.partial_cmp(other) == Some(Ordering::Equal)
    }
}

impl PartialOrd for Quad {
    fn partial_cmp(&self, other: &Quad) -> Option<Ordering> {
        if self.is_nan() || other.is_nan() {
            return None;
        }
        Some(ordered_key(self.0).cmp(&ordered_key(other.0)))
    }
}

fn ordered_key(bits: u128) -> i128 {
    let abs = (bits & ABS_MASK) as i128;
    if bits & SIGN_MASK != 0 {
        -abs
    } else {
        abs
    }
}

impl From<f64> for Quad {
    fn from(x: f64) -> Quad {
        Quad::from_f64(x)
    }
}

impl From<f32> for Quad {
    fn from(x: f32) -> Quad {
        Quad::from_f32(x)
    }
}

impl From<i32> for Quad {
    fn from(x: i32) -> Quad {
        Quad::from_f64(x as f64)
    }
}

/// Significant decimal digits that identify every binary128 value uniquely.
pub const ROUND_TRIP_DIGITS: usize = 36;

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = f.precision().map_or(ROUND_TRIP_DIGITS, |p| p + 1);
        f.write_str(&self.to_sci_string(digits))
    }
}

impl fmt::LowerExp for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Debug for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quad({})", self.to_sci_string(ROUND_TRIP_DIGITS))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid quad literal {0:?}")]
pub struct ParseQuadError(pub String);

impl FromStr for Quad {
    type Err = ParseQuadError;

    /// Parses a decimal literal, rounding correctly to nearest-even.
    fn from_str(text: &str) -> Result<Quad, ParseQuadError> {
        let err = || ParseQuadError(text.to_string());
        let s = text.trim();
        let (negative, body) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => (false, s),
        };
        let sign = if negative { SIGN_MASK } else { 0 };
        let lower = body.to_ascii_lowercase();
        match lower.as_str() {
            "inf" | "infinity" => return Ok(Quad(sign | INF_REP)),
            "nan" => return Ok(Quad::NAN),
            _ => {}
        }
        let (mantissa, exponent) = match lower.find('e') {
            Some(i) => {
                let e: i64 = lower[i + 1..].parse().map_err(|_| err())?;
                (&lower[..i], e)
            }
            None => (lower.as_str(), 0),
        };
        let (int_part, frac_part) = match mantissa.find('.') {
            Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
            None => (mantissa, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let digits = format!("{int_part}{frac_part}");
        let digits = digits.trim_start_matches('0');
        if digits.is_empty() {
            return Ok(Quad(sign));
        }
        let dec_exp = exponent - frac_part.len() as i64;
        let magnitude = dec_exp + digits.len() as i64;
        if magnitude > 4934 {
            return Ok(Quad(sign | INF_REP));
        }
        if magnitude < -4967 {
            return Ok(Quad(sign));
        }
        let value = BigUint::parse_bytes(digits.as_bytes(), 10).ok_or_else(err)?;
        let (num, den) = if dec_exp >= 0 {
            (value * pow10(dec_exp as u32), BigUint::one())
        } else {
            (value, pow10((-dec_exp) as u32))
        };
        let mut shift = 115 - (num.bits() as i64 - den.bits() as i64);
        loop {
            let (n, d) = if shift >= 0 {
                (&num << shift as usize, den.clone())
            } else {
                (num.clone(), &den << (-shift) as usize)
            };
            let q = &n / &d;
            match q.bits() {
                b if b > 116 => shift -= 1,
                b if b < 116 => shift += 1,
                _ => {
                    let sticky = !(n - &q * &d).is_zero();
                    let sig = q.iter_u64_digits().enumerate().fold(0u128, |acc, (i, limb)| {
                        acc | ((limb as u128) << (64 * i))
                    });
                    let exp = (115 - shift + BIAS as i64).clamp(i32::MIN as i64 / 2, MAX_EXP as i64);
                    return Ok(round_pack(sign, exp as i32, sig | sticky as u128));
                }
            }
        }
    }
}
