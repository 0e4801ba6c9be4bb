//! Forward-mode dual numbers carrying a value and its gradient in `(u, v)`.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed to evaluate an expression tree.
///
/// Implemented for plain `f64` and for [`Dual2`], so a single tree walk
/// yields either the value or the value together with both partials.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// A value with its two partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d: [f64; 2],
}

impl Dual2 {
    pub fn new(v: f64, d: [f64; 2]) -> Self {
        Self { v, d }
    }

    /// Independent variable number `slot` (0 or 1).
    pub fn variable(v: f64, slot: usize) -> Self {
        let mut d = [0.0; 2];
        d[slot] = 1.0;
        Self { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Self {
            v,
            d: [self.d[0] * dv, self.d[1] * dv],
        }
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, [self.d[0] + o.d[0], self.d[1] + o.d[1]])
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, [self.d[0] - o.d[0], self.d[1] - o.d[1]])
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.v * o.v,
            [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
            ],
        )
    }
}

impl Div for Dual2 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Self::new(
            q,
            [(self.d[0] - q * o.d[0]) * inv, (self.d[1] - q * o.d[1]) * inv],
        )
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.v, [-self.d[0], -self.d[1]])
    }
}

impl Scalar for Dual2 {
    fn constant(c: f64) -> Self {
        Self::new(c, [0.0; 2])
    }
    fn value(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::constant(1.0),
            _ => self.chain(self.v.powi(n), n as f64 * self.v.powi(n - 1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let u = Dual2::variable(2.0, 0);
        let v = Dual2::variable(3.0, 1);
        let w = u * u * v;
        assert_eq!(w.v, 12.0);
        assert_eq!(w.d, [12.0, 4.0]);
    }

    #[test]
    fn quotient_and_transcendentals() {
        let u = Dual2::variable(0.5, 0);
        let v = Dual2::variable(-1.0, 1);
        let w = u.sin() / v.exp();
        let expected_du = 0.5f64.cos() / (-1.0f64).exp();
        let expected_dv = -(0.5f64.sin()) / (-1.0f64).exp();
        assert!((w.d[0] - expected_du).abs() < 1e-15);
        assert!((w.d[1] - expected_dv).abs() < 1e-15);
    }
}
