use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::{join_f64, parse_f64_list};

pub const STD_FLOOR: f64 = 1e-12;

/// Per-feature affine standardization `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len());
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn identity(width: usize) -> Self {
        Self::new(vec![0.0; width], vec![1.0; width])
    }

    /// Column statistics of row-major `rows` with `width` columns
    /// (population standard deviation).
    pub fn fit(rows: &[f64], width: usize) -> Self {
        let count = (rows.len() / width).max(1) as f64;
        let mut mean = vec![0.0; width];
        for row in rows.chunks_exact(width) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; width];
        for row in rows.chunks_exact(width) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / count).sqrt()).collect();
        Self::new(mean, std)
    }

    /// Statistics of one pooled scalar population, repeated `width` times.
    pub fn pooled(values: &[f64], width: usize) -> Self {
        let s = Self::fit(values, 1);
        Self::new(vec![s.mean[0]; width], vec![s.std[0]; width])
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }

    /// Applies [`Self::normalize`] to every row of a flat row-major buffer.
    pub fn normalize_rows(&self, rows: &[f64]) -> Vec<f64> {
        rows.chunks_exact(self.width())
            .flat_map(|r| self.normalize(r))
            .collect()
    }

    pub fn concat(&self, other: &Self) -> Self {
        Self {
            mean: [self.mean.clone(), other.mean.clone()].concat(),
            std: [self.std.clone(), other.std.clone()].concat(),
        }
    }
}

/// Input and target standardization stored alongside a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub input: Standardizer,
    pub target: Standardizer,
}

impl NormStats {
    pub(crate) fn write_header(&self, s: &mut String, prefix: &str) {
        let _ = writeln!(s, "{prefix}input_mean={}", join_f64(&self.input.mean, ";"));
        let _ = writeln!(s, "{prefix}input_std={}", join_f64(&self.input.std, ";"));
        let _ = writeln!(
            s,
            "{prefix}target_mean={}",
            join_f64(&self.target.mean, ";")
        );
        let _ = writeln!(s, "{prefix}target_std={}", join_f64(&self.target.std, ";"));
    }

    pub(crate) fn read_header(get: impl Fn(&str) -> Option<String>, prefix: &str) -> Result<Self> {
        let list = |k: &str| -> Result<Vec<f64>> {
            let key = format!("{prefix}{k}");
            get(&key)
                .and_then(|v| parse_f64_list(&v, ';'))
                .ok_or_else(|| Error::Config(format!("missing or malformed {key}")))
        };
        Ok(Self {
            input: Standardizer::new(list("input_mean")?, list("input_std")?),
            target: Standardizer::new(list("target_mean")?, list("target_std")?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_and_floor() {
        let s = Standardizer::fit(&[1.0, 5.0, 3.0, 5.0], 2);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, STD_FLOOR]);
    }

    #[test]
    fn header_round_trip() {
        let ns = NormStats {
            input: Standardizer::new(vec![0.1, -3.0], vec![2.0, 1.0 / 3.0]),
            target: Standardizer::new(vec![7.0], vec![0.25]),
        };
        let mut s = String::new();
        ns.write_header(&mut s, "x.");
        let (h, _) = crate::io::split_header(&s);
        let get = |k: &str| h.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
        assert_eq!(NormStats::read_header(get, "x.").unwrap(), ns);
    }
}
