//! Truncated Taylor jets in a single independent variable (time).
//!
//! A jet carries a value together with its first three derivatives. Two
//! forms exist: [`Jet3`] over plain `f64` for results and hand checks, and
//! [`TapeJet`] whose coefficients live on a reverse-mode [`Tape`], so a loss
//! built from time-derivatives can itself be differentiated with respect to
//! the network parameters.

use std::ops::{Add, Mul, Neg, Sub};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Value and first three derivatives with respect to time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet3 {
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

impl Jet3 {
    pub const fn new(v0: f64, v1: f64, v2: f64, v3: f64) -> Self {
        Self { v0, v1, v2, v3 }
    }

    pub const fn constant(v: f64) -> Self {
        Self::new(v, 0.0, 0.0, 0.0)
    }

    /// The independent variable itself.
    pub const fn time(t: f64) -> Self {
        Self::new(t, 1.0, 0.0, 0.0)
    }

    pub fn coeff(&self, k: usize) -> f64 {
        match k {
            0 => self.v0,
            1 => self.v1,
            2 => self.v2,
            3 => self.v3,
            _ => panic!("jet order {k} > 3"),
        }
    }

    /// Change of variable `t = τ / s`: the k-th coefficient is multiplied by
    /// `s^k`. Used to turn derivatives in normalized time into per-second
    /// derivatives.
    pub fn rescale_time(self, s: f64) -> Self {
        Self::new(self.v0, self.v1 * s, self.v2 * s * s, self.v3 * s * s * s)
    }

    /// `h(self)` given `[h, h', h'', h''']` evaluated at `self.v0`.
    pub fn compose(self, d: [f64; 4]) -> Self {
        let (a1, a2, a3) = (self.v1, self.v2, self.v3);
        Self::new(
            d[0],
            d[1] * a1,
            d[2] * a1 * a1 + d[1] * a2,
            d[3] * a1 * a1 * a1 + 3.0 * d[2] * a1 * a2 + d[1] * a3,
        )
    }

    pub fn tanh(self) -> Self {
        let y = self.v0.tanh();
        let s = 1.0 - y * y;
        self.compose([y, s, -2.0 * y * s, s * (6.0 * y * y - 2.0)])
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v0.sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.v0 * k, self.v1 * k, self.v2 * k, self.v3 * k)
    }
}

impl Add for Jet3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.v0 + o.v0,
            self.v1 + o.v1,
            self.v2 + o.v2,
            self.v3 + o.v3,
        )
    }
}

impl Sub for Jet3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for Jet3 {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul for Jet3 {
    type Output = Self;
    // Leibniz rule, truncated at third order.
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.v0 * o.v0,
            self.v1 * o.v0 + self.v0 * o.v1,
            self.v2 * o.v0 + 2.0 * self.v1 * o.v1 + self.v0 * o.v2,
            self.v3 * o.v0 + 3.0 * self.v2 * o.v1 + 3.0 * self.v1 * o.v2 + self.v0 * o.v3,
        )
    }
}

/// A batch of jets whose coefficients are tape nodes of identical shape.
/// Missing coefficients are identically zero.
#[derive(Debug, Clone, Copy)]
pub struct TapeJet {
    pub coeffs: [Option<Var>; 4],
    pub order: usize,
}

pub(crate) fn check_order(order: usize) -> Result<()> {
    if (1..=3).contains(&order) {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "jet order must be in 1..=3, got {order}"
        )))
    }
}

impl TapeJet {
    pub fn value(&self) -> Var {
        self.coeffs[0].expect("jet value is always present")
    }

    /// Coefficient `k`, materialising zeros if needed.
    pub fn coeff(&self, tape: &mut Tape, k: usize) -> Var {
        match self.coeffs[k] {
            Some(v) => v,
            None => {
                let zeros = tape.value(self.value()).map(|_| 0.0);
                tape.constant(zeros)
            }
        }
    }

    /// Applies `f` to every present coefficient (for linear maps).
    pub fn map_linear(
        &self,
        tape: &mut Tape,
        mut f: impl FnMut(&mut Tape, Var, bool) -> Result<Var>,
    ) -> Result<Self> {
        let mut coeffs = [None; 4];
        for (k, c) in self.coeffs.iter().enumerate().take(self.order + 1) {
            if let Some(v) = c {
                coeffs[k] = Some(f(tape, *v, k == 0)?);
            }
        }
        Ok(Self {
            coeffs,
            order: self.order,
        })
    }

    pub fn tanh(&self, tape: &mut Tape) -> Result<Self> {
        let [a0, a1, a2, a3] = self.coeffs;
        let y0 = tape.tanh(a0.expect("value"));
        let y0sq = tape.square(y0);
        let s = tape.affine(y0sq, -1.0, 1.0);
        let mut out = [Some(y0), None, None, None];
        if let Some(a1) = a1 {
            out[1] = Some(tape.mul(s, a1)?);
        }
        if self.order >= 2 {
            // y2 = s (a2 - 2 y a1²)
            let a1sq = a1.map(|a1| tape.square(a1));
            let mut inner = None;
            if let Some(a1sq) = a1sq {
                let t = tape.mul(y0, a1sq)?;
                inner = Some(tape.scale(t, -2.0));
            }
            inner = opt_add(tape, inner, a2)?;
            out[2] = opt_mul(tape, Some(s), inner)?;
            if self.order >= 3 {
                // y3 = s ((6y² - 2) a1³ - 6 y a1 a2 + a3)
                let mut inner3 = None;
                if let (Some(a1), Some(a1sq)) = (a1, a1sq) {
                    let c = tape.affine(y0sq, 6.0, -2.0);
                    let a1cu = tape.mul(a1sq, a1)?;
                    inner3 = Some(tape.mul(c, a1cu)?);
                    if let Some(a2) = a2 {
                        let ya1 = tape.mul(y0, a1)?;
                        let t = tape.mul(ya1, a2)?;
                        let t = tape.scale(t, -6.0);
                        inner3 = opt_add(tape, inner3, Some(t))?;
                    }
                }
                inner3 = opt_add(tape, inner3, a3)?;
                out[3] = opt_mul(tape, Some(s), inner3)?;
            }
        }
        Ok(Self {
            coeffs: out,
            order: self.order,
        })
    }

    pub fn sin(&self, tape: &mut Tape) -> Result<Self> {
        let [a0, a1, a2, a3] = self.coeffs;
        let a0 = a0.expect("value");
        let y0 = tape.sin(a0);
        let c = tape.cos(a0);
        let mut out = [Some(y0), None, None, None];
        out[1] = opt_mul(tape, Some(c), a1)?;
        if self.order >= 2 {
            // y2 = c a2 - y a1²
            let a1sq = a1.map(|a1| tape.square(a1));
            let mut t = opt_mul(tape, Some(y0), a1sq)?;
            if let Some(v) = t {
                t = Some(tape.scale(v, -1.0));
            }
            let ca2 = opt_mul(tape, Some(c), a2)?;
            out[2] = opt_add(tape, t, ca2)?;
            if self.order >= 3 {
                // y3 = c a3 - 3 y a1 a2 - c a1³
                let ca3 = opt_mul(tape, Some(c), a3)?;
                let ya1 = opt_mul(tape, Some(y0), a1)?;
                let mut t1 = opt_mul(tape, ya1, a2)?;
                if let Some(v) = t1 {
                    t1 = Some(tape.scale(v, -3.0));
                }
                let a1cu = opt_mul(tape, a1sq, a1)?;
                let mut t2 = opt_mul(tape, Some(c), a1cu)?;
                if let Some(v) = t2 {
                    t2 = Some(tape.scale(v, -1.0));
                }
                let s = opt_add(tape, ca3, t1)?;
                out[3] = opt_add(tape, s, t2)?;
            }
        }
        Ok(Self {
            coeffs: out,
            order: self.order,
        })
    }

    /// ReLU is piecewise linear: every derivative is masked by the sign of
    /// the value.
    pub fn relu(&self, tape: &mut Tape) -> Result<Self> {
        let a0 = self.value();
        let mask = tape.value(a0).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let mut out = [None; 4];
        for (k, c) in self.coeffs.iter().enumerate() {
            if let Some(v) = c {
                out[k] = Some(tape.mask(*v, mask.clone())?);
            }
        }
        Ok(Self {
            coeffs: out,
            order: self.order,
        })
    }
}

fn opt_add(tape: &mut Tape, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (x, None) | (None, x) => x,
    })
}

fn opt_mul(tape: &mut Tape, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(tape.mul(a, b)?),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_seed() {
        assert_eq!(Jet3::time(0.7), Jet3::new(0.7, 1.0, 0.0, 0.0));
    }

    #[test]
    fn sine_of_time_at_zero() {
        let j = Jet3::time(0.0).sin();
        assert_eq!(j, Jet3::new(0.0, 1.0, 0.0, -1.0));
    }

    #[test]
    fn cubic_polynomial_is_exact() {
        // p(t) = 2 - t + 3t² + 0.5t³
        let t = Jet3::time(1.3);
        let p =
            Jet3::constant(2.0) - t + t * t * Jet3::constant(3.0) + t * t * t * Jet3::constant(0.5);
        let x = 1.3f64;
        assert_eq!(p.v0, 2.0 - x + 3.0 * x * x + 0.5 * x * x * x);
        assert!((p.v1 - (-1.0 + 6.0 * x + 1.5 * x * x)).abs() < 1e-14);
        assert!((p.v2 - (6.0 + 3.0 * x)).abs() < 1e-14);
        assert!((p.v3 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rescale_powers() {
        let j = Jet3::new(1.0, 1.0, 1.0, 1.0).rescale_time(0.1);
        assert_eq!(j.v0, 1.0);
        assert!((j.v1 - 0.1).abs() < 1e-15);
        assert!((j.v2 - 0.01).abs() < 1e-15);
        assert!((j.v3 - 0.001).abs() < 1e-15);
    }

    #[test]
    fn order_bounds() {
        assert!(check_order(0).is_err());
        assert!(check_order(4).is_err());
        assert!(check_order(3).is_ok());
    }
}
