//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s,
//! good to roughly 32 significant digits. Used where a finite-difference
//! oracle must resolve changes far below `f64` round-off.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

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
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub const fn from_f64(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn from_parts(a: f64, b: f64) -> Self {
        let (hi, lo) = quick_two_sum(a, b);
        Self { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self { hi: self.hi * f, lo: self.lo * f }
    }

    pub fn is_positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Self::from_f64(k)).scale_pow2(-10);
        // expm1(r) by Taylor series; |r| < 4e-4 so 12 terms is ample.
        let mut term = r;
        let mut sum = r;
        for n in 2..=12 {
            term = term * r / Self::from_f64(n as f64);
            sum = sum + term;
        }
        // expm1(2x) = expm1(x) * (expm1(x) + 2)
        for _ in 0..10 {
            sum = sum * (sum + Self::from_f64(2.0));
        }
        (sum + Self::ONE).scale_pow2(k as i32)
    }

    pub fn sigmoid(self) -> Self {
        if self.is_positive() {
            Self::ONE / (Self::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::ONE + e)
        }
    }

    pub fn tanh(self) -> Self {
        if (-self).is_positive() {
            -(-self).tanh()
        } else {
            let e = (self * Self::from_f64(-2.0)).exp();
            (Self::ONE - e) / (Self::ONE + e)
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Self::from_parts(s1, s2 + t2)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
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
        let (p1, p2) = two_prod(self.hi, b.hi);
        Self::from_parts(p1, p2 + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b * Self::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Self::from_f64(q2);
        let q3 = r.hi / b.hi;
        Self::from_parts(q1, q2) + Self::from_f64(q3)
    }
}
