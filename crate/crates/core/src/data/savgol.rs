//! Savitzky–Golay smoothing and differentiation.
//!
//! For a window of `2M + 1` samples a polynomial of degree `polyorder` is
//! fitted by least squares and evaluated (or differentiated) at the
//! required offset. The fit is linear in the data, so each output is a dot
//! product with a precomputed weight vector. Interior samples use the
//! centred weights; the first and last `M` samples reuse the first and last
//! full windows evaluated at their own offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgFilterSpec {
    pub window: usize,
    pub polyorder: usize,
    pub deriv_order: usize,
    /// Sample spacing in seconds.
    pub dt: f64,
}

impl SgFilterSpec {
    pub fn new(window: usize, polyorder: usize, deriv_order: usize, dt: f64) -> Self {
        Self {
            window,
            polyorder,
            deriv_order,
            dt,
        }
    }

    pub fn with_deriv(self, deriv_order: usize) -> Self {
        Self {
            deriv_order,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "window {} must be odd",
                self.window
            )));
        }
        if self.window < self.polyorder + 2 {
            return Err(Error::Contract(format!(
                "window {} must be at least polyorder + 2 = {}",
                self.window,
                self.polyorder + 2
            )));
        }
        if self.deriv_order > 3 {
            return Err(Error::Contract(format!(
                "derivative order {} > 3",
                self.deriv_order
            )));
        }
        if self.deriv_order > self.polyorder {
            return Err(Error::Contract(format!(
                "derivative order {} exceeds polyorder {}",
                self.deriv_order, self.polyorder
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Contract("dt must be positive".into()));
        }
        Ok(())
    }
}

/// Weights that map a window of samples to the `deriv`-th derivative of
/// the fitted polynomial at integer offset `at` from the window centre,
/// in units of samples.
pub fn savgol_weights(half: usize, polyorder: usize, deriv: usize, at: isize) -> Vec<f64> {
    let w = 2 * half + 1;
    let p = polyorder + 1;
    let scale = half.max(1) as f64;
    // basis in z = offset / M keeps the normal matrix well conditioned
    let z: Vec<f64> = (0..w).map(|i| (i as f64 - half as f64) / scale).collect();
    let mut ata = vec![0.0; p * p];
    for zi in &z {
        let pows: Vec<f64> = (0..p).map(|j| zi.powi(j as i32)).collect();
        for a in 0..p {
            for b in 0..p {
                ata[a * p + b] += pows[a] * pows[b];
            }
        }
    }
    // d^deriv/dz^deriv of z^j at z0, then chain rule dz/ds = 1/M
    let z0 = at as f64 / scale;
    let mut basis_deriv = vec![0.0; p];
    for (j, bd) in basis_deriv.iter_mut().enumerate().skip(deriv) {
        let falling: f64 = (0..deriv).map(|r| (j - r) as f64).product();
        *bd = falling * z0.powi((j - deriv) as i32) / scale.powi(deriv as i32);
    }
    // weights = Z · (ZᵀZ)⁻¹ · basis_deriv
    let coef = solve(&ata, &basis_deriv, p);
    z.iter()
        .map(|zi| (0..p).map(|j| zi.powi(j as i32) * coef[j]).sum())
        .collect()
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .expect("non-empty");
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                x[row] -= f * x[col];
            }
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|k| m[col * n + k] * x[k]).sum();
        x[col] = (x[col] - s) / m[col * n + col];
    }
    x
}

/// Smooths `series` (or estimates its `deriv_order`-th derivative, in units
/// per second^k).
pub fn savgol(series: &[f64], spec: &SgFilterSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let len = series.len();
    if len < spec.window {
        return Err(Error::Contract(format!(
            "series of {len} samples is shorter than the window {}",
            spec.window
        )));
    }
    let half = spec.window / 2;
    let scale = spec.dt.powi(spec.deriv_order as i32).recip();
    let dot = |w: &[f64], start: usize| -> f64 {
        w.iter()
            .zip(&series[start..start + w.len()])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * scale
    };
    let mut out = vec![0.0; len];
    let centre = savgol_weights(half, spec.polyorder, spec.deriv_order, 0);
    for (i, o) in out.iter_mut().enumerate().take(len - half).skip(half) {
        *o = dot(&centre, i - half);
    }
    for i in 0..half {
        let w = savgol_weights(
            half,
            spec.polyorder,
            spec.deriv_order,
            i as isize - half as isize,
        );
        out[i] = dot(&w, 0);
        let w = savgol_weights(
            half,
            spec.polyorder,
            spec.deriv_order,
            half as isize - i as isize,
        );
        out[len - 1 - i] = dot(&w, len - spec.window);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series() {
        let s = vec![3.25; 40];
        let out = savgol(&s, &SgFilterSpec::new(7, 2, 0, 0.1)).unwrap();
        assert!(out.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn classic_five_point_quadratic_weights() {
        // textbook values: (-3, 12, 17, 12, -3) / 35
        let w = savgol_weights(2, 2, 0, 0);
        let expected = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn validation() {
        assert!(SgFilterSpec::new(6, 2, 0, 1.0).validate().is_err());
        assert!(SgFilterSpec::new(3, 2, 0, 1.0).validate().is_err());
        assert!(SgFilterSpec::new(7, 2, 3, 1.0).validate().is_err());
        assert!(savgol(&[1.0; 4], &SgFilterSpec::new(5, 2, 0, 1.0)).is_err());
    }
}
