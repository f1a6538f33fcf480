//! Source terms sampled at grid nodes.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::geometry::Grid;

/// An isotropic Gaussian bump `amplitude * exp(-|x - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

impl Gaussian {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        self.amplitude * (-0.5 * r2 / (self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Constant(f64),
    /// A constant offset plus a sum of Gaussian bumps.
    Gaussians {
        offset: f64,
        bumps: Vec<Gaussian>,
    },
}

impl Source {
    pub fn zero() -> Self {
        Source::Constant(0.0)
    }

    pub fn bump(amplitude: f64, center: Vec<f64>, width: f64) -> Self {
        Source::Gaussians {
            offset: 0.0,
            bumps: vec![Gaussian {
                amplitude,
                center,
                width,
            }],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Source::Constant(c) => *c,
            Source::Gaussians { offset, bumps } => offset + bumps.iter().map(|b| b.eval(x)).sum::<f64>(),
        }
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        grid.sample(|x| self.eval(x))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Constant(c) => *c == 0.0,
            Source::Gaussians { offset, bumps } => *offset == 0.0 && bumps.iter().all(|b| b.amplitude == 0.0),
        }
    }

    /// Random smooth source on the cube `origin + [0, side]^N`: an offset in
    /// `[-0.5, 1]` plus three bumps with amplitudes in `[-2, 2]`.
    pub fn random_smooth<R: Rng>(rng: &mut R, origin: &[f64], side: f64) -> Self {
        let bumps = (0..3)
            .map(|_| Gaussian {
                amplitude: rng.gen_range(-2.0..2.0),
                center: origin.iter().map(|o| o + rng.gen_range(0.0..side)).collect(),
                width: side * rng.gen_range(0.08..0.3),
            })
            .collect();
        Source::Gaussians {
            offset: rng.gen_range(-0.5..1.0),
            bumps,
        }
    }

    /// Parses `zero`, `constant:C` or `bump:A:W:x1:x2[...]`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.trim().split(':').map(str::trim).collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| invalid(format!("bad number {s:?} in source {text:?}: {e}")))
        };
        match parts.as_slice() {
            ["zero"] => Ok(Source::zero()),
            ["constant", c] => Ok(Source::Constant(num(c)?)),
            ["bump", a, w, center @ ..] if !center.is_empty() => {
                let center = center.iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
                let width = num(w)?;
                if !(width > 0.0) {
                    return Err(invalid("bump width must be positive"));
                }
                Ok(Source::bump(num(a)?, center, width))
            }
            _ => Err(invalid(format!(
                "unknown source {text:?}; expected zero, constant:C or bump:A:W:x1:x2..."
            ))),
        }
    }
}

/// Trapezoidal `(integral of |f|^q)^(1/q)`.
pub fn lq_norm(values: &[f64], grid: &Grid, q: f64) -> f64 {
    (0..values.len())
        .map(|i| grid.node_weight(i) * values[i].abs().powf(q))
        .sum::<f64>()
        .powf(1.0 / q)
}
