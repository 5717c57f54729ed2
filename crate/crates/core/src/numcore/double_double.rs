//! Double-double floating point: an unevaluated sum `hi + lo` of two `f64`
//! with `|lo| ≤ ulp(hi) / 2`, giving about 106 bits of mantissa.
//!
//! Arithmetic, `sqrt`, `exp`, `ln` and `tanh` carry full double-double
//! accuracy (relative error near 1e-31). Every other [`Float`] method is
//! evaluated on the leading `f64` component only. The type exists as a
//! high-precision reference for finite differences of the training loss.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Default, Debug, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN_2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

/// Halvings applied to the reduced argument of `exp` before the Taylor series.
const EXP_SQUARINGS: i32 = 6;
const EXP_TERMS: usize = 11;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn from_f64(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return DoubleDouble { hi, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::renorm(p, e + self.lo * b)
    }

    fn div_f64(self, b: f64) -> Self {
        let q1 = self.hi / b;
        let (p, e) = two_prod(q1, b);
        let q2 = (self.hi - p - e + self.lo) / b;
        Self::renorm(q1, q2)
    }

    /// Multiplies by `2^k` exactly (barring overflow and underflow).
    fn ldexp(self, k: i32) -> Self {
        let mut r = self;
        let mut k = k;
        while k != 0 {
            let step = k.clamp(-1000, 1000);
            let f = 2f64.powi(step);
            r = DoubleDouble {
                hi: r.hi * f,
                lo: r.lo * f,
            };
            k -= step;
        }
        r
    }

    fn exp_dd(self) -> Self {
        if self.hi.is_nan() {
            return Self::nan();
        }
        if self.hi > 709.8 {
            return Self::infinity();
        }
        if self.hi < -745.2 {
            return Self::zero();
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = (self - LN_2.mul_f64(k)).ldexp(-EXP_SQUARINGS);
        // e^r - 1 by Taylor series in Horner form
        let mut sum = Self::one();
        for n in (2..=EXP_TERMS).rev() {
            sum = Self::one() + (r * sum).div_f64(n as f64);
        }
        sum = r * sum;
        // (1 + s)^2 - 1 = 2s + s^2
        for _ in 0..EXP_SQUARINGS {
            sum = sum.mul_f64(2.0) + sum * sum;
        }
        (sum + Self::one()).ldexp(k as i32)
    }

    fn ln_dd(self) -> Self {
        if self.hi.is_nan() || self.hi < 0.0 {
            return Self::nan();
        }
        if self.hi == 0.0 {
            return Self::neg_infinity();
        }
        if self.hi.is_infinite() {
            return Self::infinity();
        }
        // one Newton step on exp(y) = x
        let y = Self::from_f64(self.hi.ln());
        y + self * (-y).exp_dd() - Self::one()
    }

    fn tanh_dd(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        let a = self.abs();
        if a.hi > 40.0 {
            return Self::from_f64(self.hi.signum());
        }
        let t = (a.mul_f64(-2.0)).exp_dd();
        let v = (Self::one() - t) / (Self::one() + t);
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }

    fn sqrt_dd(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Self::from_f64(self.hi.sqrt());
        }
        let q = self.hi.sqrt();
        let (p, e) = two_prod(q, q);
        let r = self - DoubleDouble { hi: p, lo: e };
        Self::renorm(q, r.hi / (2.0 * q))
    }

    fn floor_dd(self) -> Self {
        let fh = self.hi.floor();
        if fh == self.hi {
            Self::renorm(fh, self.lo.floor())
        } else {
            Self::from_f64(fh)
        }
    }

    fn ceil_dd(self) -> Self {
        let ch = self.hi.ceil();
        if ch == self.hi {
            Self::renorm(ch, self.lo.ceil())
        } else {
            Self::from_f64(ch)
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;

    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        if !s.is_finite() {
            return Self::from_f64(s);
        }
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;

    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;

    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;

    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return Self::from_f64(p);
        }
        Self::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;

    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || b.hi.is_infinite() {
            return Self::from_f64(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Self::renorm(q1, q2) + Self::from_f64(q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;

    fn rem(self, b: Self) -> Self {
        self - b * (self / b).trunc()
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for DoubleDouble {
            fn $m(&mut self, b: Self) {
                *self = *self $op b;
            }
        }
    };
}

assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);
assign_op!(RemAssign, rem_assign, %);

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&(self.hi + self.lo), f)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;

    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Self::from_f64)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        self.trunc().hi.to_i64()
    }

    fn to_u64(&self) -> Option<u64> {
        self.trunc().hi.to_u64()
    }

    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n as i128 - hi as i128) as f64;
        Some(Self::renorm(hi, lo))
    }

    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n as i128 - hi as i128) as f64;
        Some(Self::renorm(hi, lo))
    }

    fn from_f64(x: f64) -> Option<Self> {
        Some(DoubleDouble::from_f64(x))
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Self::from_f64)
    }
}

macro_rules! on_hi {
    ($($m:ident),*) => {
        $(fn $m(self) -> Self {
            Self::from_f64(self.hi.$m())
        })*
    };
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        Self::from_f64(f64::NAN)
    }

    fn infinity() -> Self {
        Self::from_f64(f64::INFINITY)
    }

    fn neg_infinity() -> Self {
        Self::from_f64(f64::NEG_INFINITY)
    }

    fn neg_zero() -> Self {
        Self::from_f64(-0.0)
    }

    fn min_value() -> Self {
        Self::from_f64(f64::MIN)
    }

    fn min_positive_value() -> Self {
        Self::from_f64(f64::MIN_POSITIVE)
    }

    fn epsilon() -> Self {
        Self::from_f64(f64::EPSILON * f64::EPSILON / 4.0)
    }

    fn max_value() -> Self {
        Self::from_f64(f64::MAX)
    }

    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }

    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }

    fn classify(self) -> FpCategory {
        self.hi.classify()
    }

    fn floor(self) -> Self {
        self.floor_dd()
    }

    fn ceil(self) -> Self {
        self.ceil_dd()
    }

    fn round(self) -> Self {
        let f = (self + Self::from_f64(0.5)).floor_dd();
        if self.hi < 0.0 && (f - self) == Self::from_f64(0.5) {
            f - Self::one()
        } else {
            f
        }
    }

    fn trunc(self) -> Self {
        if self.hi < 0.0 {
            self.ceil_dd()
        } else {
            self.floor_dd()
        }
    }

    fn fract(self) -> Self {
        self - self.trunc()
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn signum(self) -> Self {
        Self::from_f64(self.hi.signum())
    }

    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }

    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    fn recip(self) -> Self {
        Self::one() / self
    }

    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }

    fn powf(self, n: Self) -> Self {
        (n * self.ln_dd()).exp_dd()
    }

    fn sqrt(self) -> Self {
        self.sqrt_dd()
    }

    fn exp(self) -> Self {
        self.exp_dd()
    }

    fn exp2(self) -> Self {
        (self * LN_2).exp_dd()
    }

    fn ln(self) -> Self {
        self.ln_dd()
    }

    fn log(self, base: Self) -> Self {
        self.ln_dd() / base.ln_dd()
    }

    fn log2(self) -> Self {
        self.ln_dd() / LN_2
    }

    fn log10(self) -> Self {
        self.ln_dd() / Self::from_f64(10.0).ln_dd()
    }

    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }

    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Self::zero()
        }
    }

    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt_dd()
    }

    fn atan2(self, other: Self) -> Self {
        Self::from_f64(self.hi.atan2(other.hi))
    }

    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.hi.sin_cos();
        (Self::from_f64(s), Self::from_f64(c))
    }

    fn exp_m1(self) -> Self {
        self.exp_dd() - Self::one()
    }

    fn ln_1p(self) -> Self {
        (self + Self::one()).ln_dd()
    }

    fn tanh(self) -> Self {
        self.tanh_dd()
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }

    on_hi!(cbrt, sin, cos, tan, asin, acos, atan, sinh, cosh, asinh, acosh, atanh);
}

impl Scalar for DoubleDouble {}

#[cfg(test)]
mod tests {
    use super::*;

    type D = DoubleDouble;

    fn close(a: D, b: D, tol: f64) -> bool {
        let d = a - b;
        (d.hi + d.lo).abs() <= tol * (b.hi.abs()).max(1e-300)
    }

    // e and sqrt(2) to 33 significant digits, split into f64 pairs
    const E: D = D {
        hi: std::f64::consts::E,
        lo: 1.445_646_891_729_250_2e-16,
    };
    const SQRT_2: D = D {
        hi: std::f64::consts::SQRT_2,
        lo: -9.667_293_313_452_913e-17,
    };

    #[test]
    fn sums_keep_tiny_addends() {
        let x = D::from_f64(1.0) + D::from_f64(1e-20);
        assert_eq!((x - D::one()).hi, 1e-20);
        let third = D::one() / D::from_f64(3.0);
        assert!(close(third * D::from_f64(3.0), D::one(), 1e-31));
    }

    #[test]
    fn transcendental_constants() {
        assert!(close(D::one().exp(), E, 1e-31));
        assert!(close(D::from_f64(2.0).ln(), LN_2, 1e-31));
        assert!(close(D::from_f64(2.0).sqrt(), SQRT_2, 1e-31));
    }

    #[test]
    fn exp_and_ln_are_inverse() {
        for &x in &[-30.0, -2.5, -1e-7, 0.0, 3e-9, 0.75, 11.0, 200.0] {
            let v = D::from_f64(x) + D::from_f64(x * 1e-17);
            let back = v.exp().ln();
            let d = back - v;
            assert!((d.hi + d.lo).abs() < 1e-29 * x.abs().max(1.0), "{x}");
        }
    }

    #[test]
    fn tanh_matches_exponential_form() {
        for &x in &[-3.0, -0.4, 0.001, 0.5, 2.0] {
            let v = D::from_f64(x);
            let e2 = (v + v).exp();
            let want = (e2 - D::one()) / (e2 + D::one());
            assert!(close(v.tanh(), want, 1e-30), "{x}");
        }
        assert_eq!(D::from_f64(50.0).tanh(), D::one());
        assert_eq!(D::from_f64(-50.0).tanh(), -D::one());
    }

    #[test]
    fn agrees_with_f64_to_f64_precision() {
        for &x in &[-7.3, -0.2, 0.01, 1.7, 9.9] {
            let v = D::from_f64(x);
            assert!((v.exp().hi - x.exp()).abs() <= 2.0 * f64::EPSILON * x.exp());
            assert!((v.tanh().hi - x.tanh()).abs() <= 2.0 * f64::EPSILON);
            assert!((v.abs().ln().hi - x.abs().ln()).abs() <= 2.0 * f64::EPSILON * x.abs().ln().abs().max(1.0));
        }
    }

    #[test]
    fn special_values() {
        assert!(D::from_f64(-1.0).ln().is_nan());
        assert_eq!(D::zero().ln(), D::neg_infinity());
        assert_eq!(D::from_f64(1000.0).exp(), D::infinity());
        assert_eq!(D::from_f64(-1000.0).exp(), D::zero());
        assert!(!(D::one() / D::zero()).is_finite());
        assert!(D::nan().max(D::one()) == D::one());
    }

    #[test]
    fn ordering_and_rounding() {
        let a = D::one() + D::from_f64(1e-20);
        assert!(a > D::one());
        assert_eq!(D::from_f64(2.5).floor(), D::from_f64(2.0));
        assert_eq!(D::from_f64(-2.5).trunc(), D::from_f64(-2.0));
        assert_eq!((D::from_f64(7.0) % D::from_f64(3.0)), D::one());
        assert!(close(
            D::from_f64(1.5).powi(-3),
            D::from_f64(8.0) / D::from_f64(27.0),
            1e-31
        ));
    }
}
