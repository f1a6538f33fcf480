//! Minimization of the discrete functionals: linear conjugate gradients for the
//! quadratic case and a line-search descent driven by truncated Newton
//! directions otherwise.

use crate::error::{Error, Result};

use super::functional::{Linearization, Problem};
use super::{Method, SolverConfig};

/// Relative curvature floor used when freezing the Hessian for `p > 2`.
const CURVATURE_FLOOR: f64 = 1e-6;

const STAGE_TOLERANCE_CAP: f64 = 1e-4;

pub(crate) struct Outcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn precondition(diag: &[f64], r: &[f64], z: &mut [f64]) {
    for i in 0..r.len() {
        z[i] = if diag[i] > 0.0 { r[i] / diag[i] } else { 0.0 };
    }
}

pub(crate) fn minimize(prob: &Problem, u0: Vec<f64>, cfg: &SolverConfig, warm_start: bool) -> Result<Outcome> {
    let linear = match cfg.method {
        Method::Auto => prob.is_quadratic(),
        Method::Linear => {
            if !prob.is_quadratic() {
                return Err(Error::InvalidParameter(
                    "the linear conjugate-gradient path requires p = 2".into(),
                ));
            }
            true
        }
        Method::Descent => false,
    };
    if linear {
        return linear_cg(prob, u0, cfg.grad_tolerance, cfg.max_iterations);
    }
    let start = if warm_start && !prob.is_quadratic() {
        quadratic_warm_start(prob, u0, cfg)?
    } else {
        u0
    };
    if prob.p < 2.0 && prob.eps > 0.0 {
        return eps_continuation(prob, start, cfg);
    }
    newton_descent(prob, start, cfg)
}

/// For `p < 2` the regularized integrand is very stiff where the gradient is
/// below `eps`, and Newton steps from a far start crawl. Solving a ladder of
/// smoother problems (`eps` shrinking tenfold per stage) first avoids that.
fn eps_continuation(prob: &Problem, mut u: Vec<f64>, cfg: &SolverConfig) -> Result<Outcome> {
    let exact = Problem { eps: 0.0, ..*prob };
    let parts = exact.value(&u);
    let volume = prob.mesh.grid().volume();
    let scale = (2.0 * prob.p * parts.dirichlet.max(0.0) / volume).sqrt().max(prob.eps);
    let mut stage_eps = 0.1 * scale;
    let mut iterations = 0;
    while stage_eps > 10.0 * prob.eps {
        let stage = Problem {
            eps: stage_eps,
            ..*prob
        };
        let tol = (cfg.grad_tolerance * stage_eps / prob.eps).min(STAGE_TOLERANCE_CAP.max(cfg.grad_tolerance));
        let out = newton_descent(
            &stage,
            u,
            &SolverConfig {
                grad_tolerance: tol,
                ..cfg.clone()
            },
        )?;
        iterations += out.iterations;
        u = out.u;
        stage_eps *= 0.1;
    }
    let mut out = newton_descent(prob, u, cfg)?;
    out.iterations += iterations;
    Ok(out)
}

/// Starting point for `p != 2`: the minimizer of the same problem with
/// `p = 2`, rescaled along its ray when the functional is homogeneous.
fn quadratic_warm_start(prob: &Problem, u0: Vec<f64>, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let quad = Problem {
        p: 2.0,
        eps: 0.0,
        ..*prob
    };
    let source_scale = prob
        .source
        .map(|f| {
            f.iter()
                .zip(prob.mesh.weights())
                .fold(0.0f64, |m, (fi, wi)| m.max((fi * wi).abs()))
        })
        .unwrap_or(0.0);
    let tol = (1e-4 * source_scale).max(cfg.grad_tolerance);
    let pinned_zero = u0.iter().zip(prob.mask.flags()).all(|(v, &pin)| !pin || *v == 0.0);
    let mut u = match linear_cg(&quad, u0.clone(), tol, cfg.max_iterations) {
        Ok(out) => out.u,
        Err(_) => return Ok(u0),
    };
    if pinned_zero && prob.absorption == 0.0 {
        let exact = Problem { eps: 0.0, ..*prob };
        let parts = exact.value(&u);
        let a = prob.p * parts.dirichlet;
        let b = parts.work;
        if a > 0.0 && b > 0.0 {
            let c = (b / a).powf(1.0 / (prob.p - 1.0));
            u.iter_mut().for_each(|v| *v *= c);
        }
    }
    Ok(u)
}

fn linear_cg(prob: &Problem, mut u: Vec<f64>, tol: f64, max_iterations: usize) -> Result<Outcome> {
    let n = u.len();
    let lin = prob.linearize(&u, 0.0);
    let mut grad = vec![0.0; n];
    prob.value_and_gradient(&u, &mut grad);
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut z = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut hd = vec![0.0; n];
    let mut iterations = 0;
    loop {
        precondition(&lin.diagonal, &r, &mut z);
        d.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while max_abs(&r) > tol {
            if iterations >= max_iterations {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: max_abs(&r),
                });
            }
            prob.hess_vec(&lin, &d, &mut hd);
            let dhd = dot(&d, &hd);
            if !(dhd > 0.0) {
                break;
            }
            let alpha = rz / dhd;
            for i in 0..n {
                u[i] += alpha * d[i];
                r[i] -= alpha * hd[i];
            }
            iterations += 1;
            precondition(&lin.diagonal, &r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                d[i] = z[i] + beta * d[i];
            }
        }
        // The recursive residual drifts; confirm with the true gradient.
        prob.value_and_gradient(&u, &mut grad);
        let residual = max_abs(&grad);
        if residual <= tol {
            return Ok(Outcome {
                u,
                iterations,
                residual,
            });
        }
        if iterations >= max_iterations {
            return Err(Error::NonConvergence { iterations, residual });
        }
        for i in 0..n {
            r[i] = -grad[i];
        }
    }
}

/// Approximately solves `H d = -grad` by preconditioned CG started at zero.
/// Every iterate is a descent direction when `H` is positive definite.
fn newton_direction(
    prob: &Problem,
    lin: &Linearization,
    grad: &[f64],
    rel_tol: f64,
    max_iterations: usize,
) -> (Vec<f64>, usize) {
    let n = grad.len();
    let mut d = vec![0.0; n];
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut z = vec![0.0; n];
    precondition(&lin.diagonal, &r, &mut z);
    let mut s = z.clone();
    let mut hs = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = rel_tol * dot(&r, &r).sqrt();
    let mut it = 0;
    while it < max_iterations && dot(&r, &r).sqrt() > target {
        prob.hess_vec(lin, &s, &mut hs);
        let shs = dot(&s, &hs);
        if !(shs > 0.0) {
            break;
        }
        let alpha = rz / shs;
        for i in 0..n {
            d[i] += alpha * s[i];
            r[i] -= alpha * hs[i];
        }
        precondition(&lin.diagonal, &r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            s[i] = z[i] + beta * s[i];
        }
        it += 1;
    }
    if it == 0 {
        // Fall back to the preconditioned gradient.
        d.copy_from_slice(&z);
    }
    (d, it)
}

fn newton_descent(prob: &Problem, mut u: Vec<f64>, cfg: &SolverConfig) -> Result<Outcome> {
    let n = u.len();
    let mut grad = vec![0.0; n];
    let mut parts = prob.value_and_gradient(&u, &mut grad);
    let gnorm0 = dot(&grad, &grad).sqrt().max(f64::MIN_POSITIVE);
    let mut trial = vec![0.0; n];
    for iteration in 0..=cfg.max_iterations {
        let residual = max_abs(&grad);
        if residual <= cfg.grad_tolerance {
            return Ok(Outcome {
                u,
                iterations: iteration,
                residual,
            });
        }
        if iteration == cfg.max_iterations {
            return Err(Error::NonConvergence {
                iterations: iteration,
                residual,
            });
        }
        let lin = prob.linearize(&u, CURVATURE_FLOOR);
        let gnorm = dot(&grad, &grad).sqrt();
        let rel_tol = (gnorm / gnorm0).sqrt().clamp(1e-8, 0.5);
        let (mut d, _) = newton_direction(prob, &lin, &grad, rel_tol, cfg.inner_max_iterations);
        let mut slope = dot(&grad, &d);
        if !(slope < 0.0) {
            precondition(&lin.diagonal, &grad, &mut d);
            d.iter_mut().for_each(|v| *v = -*v);
            slope = dot(&grad, &d);
        }
        let e0 = parts.total();
        let slack = 16.0 * f64::EPSILON * parts.magnitude();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = u[i] + t * d[i];
            }
            let e = prob.value(&trial).total();
            if e <= e0 + cfg.armijo_c * t * slope + slack {
                accepted = Some(t);
                break;
            }
            t *= cfg.armijo_shrink;
        }
        if accepted.is_none() {
            return Err(Error::NonConvergence {
                iterations: iteration,
                residual,
            });
        }
        std::mem::swap(&mut u, &mut trial);
        parts = prob.value_and_gradient(&u, &mut grad);
    }
    unreachable!("loop returns on its last iteration")
}
