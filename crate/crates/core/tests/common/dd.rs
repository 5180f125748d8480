//! Double-double arithmetic (~106-bit significand) for reference values.

#![allow(dead_code)]

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Real cube root, from the f64 estimate plus one Newton step in
    /// double-double.
    pub fn cbrt(x: f64) -> Self {
        if x == 0.0 {
            return Dd::from_f64(0.0);
        }
        let u0 = x.cbrt();
        let u = Dd::from_f64(u0);
        let resid = Dd::from_f64(x) - u * u * u;
        u + Dd::from_f64(resid.to_f64() / (3.0 * u0 * u0))
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

/// `−Σ (x_i^{1/3} − y_i^{1/3})² (x_i^{2/3} + y_i^{2/3})`, evaluated in
/// double-double from the raw coordinates.
pub fn cube_root_identity(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = Dd::from_f64(0.0);
    for (a, b) in x.iter().zip(y) {
        let u = Dd::cbrt(*a);
        let v = Dd::cbrt(*b);
        let d = u - v;
        acc = acc + d * d * (u * u + v * v);
    }
    -acc.to_f64()
}
