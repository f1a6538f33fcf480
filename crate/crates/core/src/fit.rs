//! Least-squares fits for scaling laws.

use crate::error::{invalid, Result};

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Residual sum of squares.
    pub rss: f64,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("regression needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("regression abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - slope * a - intercept;
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - rss / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
        rss,
    })
}

fn check_positive(ts: &[f64], caps: &[f64]) -> Result<()> {
    if ts.len() != caps.len() {
        return Err(invalid("ts and caps differ in length"));
    }
    if ts.len() < 3 {
        return Err(invalid(format!("a scaling fit needs >= 3 points, got {}", ts.len())));
    }
    if ts.iter().chain(caps).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("scaling fit inputs must be positive and finite"));
    }
    Ok(())
}

/// Power law `cap = exp(intercept) * t^slope` fitted in log-log space.
pub fn scaling_fit(ts: &[f64], caps: &[f64]) -> Result<LinearFit> {
    check_positive(ts, caps)?;
    let lx: Vec<f64> = ts.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = caps.iter().map(|v| v.ln()).collect();
    linear_regression(&lx, &ly)
}

/// Logarithmic law `cap = c * (log(big_c / t))^(1 - p)`, fitted in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLawFit {
    pub c: f64,
    pub big_c: f64,
    pub exponent: f64,
    pub r2: f64,
    pub rss: f64,
}

impl LogLawFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.c * (self.big_c / t).ln().powf(self.exponent)
    }
}

/// Fits the critical-exponent capacity law `c * (log(C/t))^(1-p)`.
///
/// For fixed `C` the best `c` is explicit; `C` is found by a scan over
/// `log C` followed by golden-section refinement.
pub fn log_law_fit(ts: &[f64], caps: &[f64], p: f64) -> Result<LogLawFit> {
    check_positive(ts, caps)?;
    let exponent = 1.0 - p;
    let ly: Vec<f64> = caps.iter().map(|v| v.ln()).collect();
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let syy: f64 = ly.iter().map(|v| (v - my) * (v - my)).sum();
    let t_max = ts.iter().cloned().fold(f64::MIN, f64::max);
    let eval = |log_big_c: f64| -> (f64, f64) {
        let model: Vec<f64> = ts.iter().map(|t| exponent * (log_big_c - t.ln()).ln()).collect();
        let log_c = ly.iter().zip(&model).map(|(y, m)| y - m).sum::<f64>() / ly.len() as f64;
        let rss = ly
            .iter()
            .zip(&model)
            .map(|(y, m)| {
                let r = y - log_c - m;
                r * r
            })
            .sum();
        (rss, log_c)
    };
    // log C ranges over (log t_max, log t_max + 40].
    let lo = t_max.ln() + 1e-6;
    let steps = 4000;
    let span = 40.0;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=steps {
        let x = lo + span * (k as f64 / steps as f64).powi(2);
        let (rss, _) = eval(x);
        if rss < best.0 {
            best = (rss, x);
        }
    }
    let width = span * 4.0 / steps as f64 + 1e-3;
    let (mut a, mut b) = ((best.1 - width).max(lo), best.1 + width);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if eval(x1).0 < eval(x2).0 {
            b = x2;
        } else {
            a = x1;
        }
    }
    let x = 0.5 * (a + b);
    let refined = eval(x);
    let (log_big_c, (rss, log_c)) = if refined.0 < best.0 {
        (x, refined)
    } else {
        (best.1, eval(best.1))
    };
    Ok(LogLawFit {
        c: log_c.exp(),
        big_c: log_big_c.exp(),
        exponent,
        r2: if syy == 0.0 { 1.0 } else { 1.0 - rss / syy },
        rss,
    })
}
