//! Double-double arithmetic (an unevaluated sum `hi + lo` of two `f64`s,
//! about 32 significant digits) for the finite-difference oracle.
//!
//! Central differences divide by `2·eps`, so the absolute rounding error of a
//! plain `f64` loss (~1e-15 for losses of order one) turns into ~5e-11 of
//! gradient noise at `eps = 1e-5`. Evaluating the loss and the difference
//! quotient in double-double pushes that floor far below the 1e-6 relative
//! tolerance, leaving only the O(eps²) truncation error.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

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

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// `a + b` without rounding.
    pub fn exact_sum(a: f64, b: f64) -> Dd {
        let (hi, lo) = two_sum(a, b);
        Dd { hi, lo }
    }

    pub fn max(self, other: Dd) -> Dd {
        if other > self {
            other
        } else {
            self
        }
    }

    fn ldexp(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        assert!(self.hi < 709.0, "Dd::exp overflow at {}", self.hi);
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from(k)).ldexp(-10);
        // Taylor series; |r| < 4e-4 so 12 terms reach well past 1e-32
        let mut term = r;
        let mut sum = r;
        for n in 2..=12 {
            term = term * r / Dd::from(n as f64);
            sum = sum + term;
        }
        // exp(r)·... built as (1 + s)² repeatedly, tracking s = e^r − 1
        for _ in 0..10 {
            sum = sum * (sum + Dd::from(2.0));
        }
        (sum + Dd::ONE).ldexp(k as i32)
    }

    /// Natural log via one Newton step on `exp`, starting from the `f64` log.
    pub fn ln(self) -> Dd {
        assert!(self.hi > 0.0, "Dd::ln of non-positive {}", self.hi);
        let y = Dd::from(self.hi.ln());
        y + self * (-y).exp() - Dd::ONE
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

impl std::iter::Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::ZERO, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parts(v: Dd) -> (f64, f64) {
        (v.hi, v.lo)
    }

    // Reference (hi, lo) pairs from a 40-digit mpmath evaluation.
    #[test]
    fn exp_matches_reference() {
        let cases = [
            (0.3, 1.3498588075760032, -9.447314673432387e-17),
            (-2.7, 0.06720551273974976, -3.2905029845427732e-18),
            (1e-3, 1.0010005001667084, -4.290842058948394e-17),
            (5.5, 244.69193226422038, 4.129320187450839e-15),
        ];
        for (x, hi, lo) in cases {
            let (h, l) = parts(Dd::from(x).exp());
            assert_eq!(h, hi, "exp({x})");
            assert!((l - lo).abs() <= 1e-30 * hi.abs().max(1.0) * 1e2, "exp({x}) lo {l} vs {lo}");
        }
    }

    #[test]
    fn ln_matches_reference() {
        let cases = [
            (0.3, -1.2039728043259361, 8.935521583403776e-17),
            (2.7, 0.9932517730102834, 1.072769934004017e-17),
            (1e-3, -6.907755278982137, -2.1613487097372872e-16),
            (5.5, 1.7047480922384253, -3.7526586818263424e-17),
        ];
        for (x, hi, lo) in cases {
            let (h, l) = parts(Dd::from(x).ln());
            assert_eq!(h, hi, "ln({x})");
            assert!((l - lo).abs() <= 1e-30, "ln({x}) lo {l} vs {lo}");
        }
    }

    #[test]
    fn arithmetic_keeps_low_bits() {
        let tiny = Dd::exact_sum(1.0, 1e-20);
        assert_eq!((tiny - Dd::ONE).to_f64(), 1e-20);
        let third = Dd::ONE / Dd::from(3.0);
        assert!(((third * Dd::from(3.0)) - Dd::ONE).to_f64().abs() < 1e-31);
        assert_eq!(Dd::from(-800.0).exp(), Dd::ZERO);
    }
}
