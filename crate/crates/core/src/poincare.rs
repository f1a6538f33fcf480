//! Best constants in the capacity-Poincaré inequality on a cube that is only
//! pinned on a crack.
//!
//! The smallest value of `int |grad u|^p / int |u|^p` over fields vanishing on
//! the mask is the first eigenvalue of the p-Laplacian with mixed conditions
//! (zero on the crack, natural on the cube faces). It is computed by inverse
//! iteration: each step solves `-Delta_p v = |u|^(p-2) u` and renormalizes.

use rayon::prelude::*;

use crate::capacity::{capacity_at, CapacityResult, CapacityTarget};
use crate::error::{invalid, Error, Result};
use crate::geometry::{rasterize_cracks_only, validate_exponent, ConstraintMask, CrackSet, Grid, Segment};
use crate::solver::{minimize, GridField, Mesh, Problem, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareOptions {
    /// Stop once the eigenvalue estimate changes by less than this, relatively.
    pub rel_tolerance: f64,
    /// Inner solves stop at this fraction of the largest weighted source entry.
    pub inner_rel_tolerance: f64,
    pub max_outer_iterations: usize,
    pub solver: SolverConfig,
}

impl Default for PoincareOptions {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-10,
            inner_rel_tolerance: 1e-9,
            max_outer_iterations: 500,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareResult {
    /// `1 / eigenvalue`, the best constant `C` in `int |u|^p <= C int |grad u|^p`.
    pub constant: f64,
    /// Smallest Rayleigh quotient found.
    pub eigenvalue: f64,
    pub p: f64,
    /// Side of the cube.
    pub delta: f64,
    pub h: f64,
    pub outer_iterations: usize,
    /// Normalized eigenfunction, `int |u|^p = 1`.
    pub eigenfunction: GridField,
}

/// `int |grad u|^p / int |u|^p` with the crate's discretization.
pub fn rayleigh_quotient(u: &GridField, p: f64) -> Result<f64> {
    validate_exponent(p)?;
    let (num, den) = quotient_parts(&Mesh::new(u.grid()), u.values(), p);
    if den == 0.0 {
        return Err(invalid("Rayleigh quotient of the zero field"));
    }
    Ok(num / den)
}

fn quotient_parts(mesh: &Mesh, u: &[f64], p: f64) -> (f64, f64) {
    let mask = ConstraintMask::none(mesh.grid());
    let prob = Problem {
        mesh,
        mask: &mask,
        p,
        eps: 0.0,
        absorption: 0.0,
        source: None,
    };
    let num = p * prob.value(u).dirichlet;
    let den: f64 = mesh.weights().iter().zip(u).map(|(w, v)| w * v.abs().powf(p)).sum();
    (num, den)
}

fn normalize(mesh: &Mesh, u: &mut [f64], p: f64) -> f64 {
    let (num, den) = quotient_parts(mesh, u, p);
    let s = den.powf(-1.0 / p);
    u.iter_mut().for_each(|v| *v *= s);
    num / den
}

/// Measures the best Poincaré constant of fields on `grid` vanishing on `mask`.
///
/// The mask must pin at least one interior node and must leave some of the
/// outer boundary free.
pub fn best_poincare_constant(
    grid: &Grid,
    mask: &ConstraintMask,
    p: f64,
    options: &PoincareOptions,
) -> Result<PoincareResult> {
    validate_exponent(p)?;
    options.solver.validate(p)?;
    if mask.len() != grid.node_count() {
        return Err(Error::ShapeMismatch {
            expected: grid.node_count(),
            got: mask.len(),
        });
    }
    if mask.interior_pinned_count(grid) == 0 {
        return Err(Error::UnpinnedMask);
    }
    if (0..grid.node_count())
        .filter(|&i| grid.is_boundary(i))
        .all(|i| mask.is_pinned(i))
    {
        return Err(invalid(
            "the Poincaré cube must not be pinned on its whole outer boundary",
        ));
    }
    let mesh = Mesh::new(grid);
    let mut u: Vec<f64> = mask.flags().iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
    let mut lambda = normalize(&mesh, &mut u, p);
    let mut source = vec![0.0; u.len()];
    let mut v = u.clone();
    for outer in 1..=options.max_outer_iterations {
        for (s, x) in source.iter_mut().zip(&u) {
            *s = x.signum() * x.abs().powf(p - 1.0);
        }
        let scale = source
            .iter()
            .zip(mesh.weights())
            .fold(0.0f64, |m, (s, w)| m.max((s * w).abs()));
        let f_scale = source.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let cfg = SolverConfig {
            grad_tolerance: (options.inner_rel_tolerance * scale).max(f64::MIN_POSITIVE),
            ..options.solver.clone()
        };
        let prob = Problem {
            mesh: &mesh,
            mask,
            p,
            eps: cfg.effective_eps(p, f_scale),
            absorption: 0.0,
            source: Some(&source),
        };
        // Near an eigenfunction the solution is u scaled by lambda^(-1/(p-1)).
        let guess = lambda.powf(-1.0 / (p - 1.0));
        v.iter_mut().zip(&u).for_each(|(vi, ui)| *vi = guess * ui);
        let out = minimize(&prob, std::mem::take(&mut v), &cfg, false)?;
        v = out.u;
        std::mem::swap(&mut u, &mut v);
        let next = normalize(&mesh, &mut u, p);
        let change = (lambda - next).abs();
        lambda = next;
        if change <= options.rel_tolerance * lambda {
            return Ok(PoincareResult {
                constant: 1.0 / lambda,
                eigenvalue: lambda,
                p,
                delta: grid.side(),
                h: grid.h(),
                outer_iterations: outer,
                eigenfunction: GridField::new(grid.clone(), u)?,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_outer_iterations,
        residual: lambda,
    })
}

/// Cube `(0, delta)^N` with `m` nodes per side and a crack of length
/// `a * delta` along the first axis, centered in the cube.
pub fn crack_cube(dim: usize, delta: f64, a: f64, m: usize) -> Result<(Grid, CrackSet)> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(invalid(format!("relative crack length must lie in (0, 1], got {a}")));
    }
    let grid = Grid::cube(vec![0.0; dim], delta, m)?;
    let mut start = vec![0.5 * delta; dim];
    let mut end = start.clone();
    start[0] -= 0.5 * a * delta;
    end[0] += 0.5 * a * delta;
    Ok((grid, CrackSet::single(Segment::new(start, end)?)))
}

/// One row of a Poincaré sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareRow {
    pub a: f64,
    pub result: PoincareResult,
    /// Capacity of the unit-scale crack `[0, a] x {0}^(N-1)` at spacing
    /// `h / delta`.
    pub capacity: CapacityResult,
}

impl PoincareRow {
    pub const CSV_HEADER: &'static str = "p,delta,a,h,constant,capacity";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.12e},{:.12e}",
            self.result.p, self.result.delta, self.a, self.result.h, self.result.constant, self.capacity.value
        )
    }

    /// `constant * capacity / delta^p`, which the inequality predicts is
    /// bounded independently of `delta` and `a`.
    pub fn normalized_product(&self) -> f64 {
        self.result.constant * self.capacity.value / self.result.delta.powf(self.result.p)
    }
}

/// Constants for every cube side in `deltas` and crack fraction in
/// `a_list`, ordered by `a` and then by `delta`. The capacity of each crack
/// is computed once and shared by all cube sides.
pub fn poincare_sweep(
    dim: usize,
    p: f64,
    deltas: &[f64],
    a_list: &[f64],
    m: usize,
    options: &PoincareOptions,
) -> Result<Vec<PoincareRow>> {
    if m < 3 {
        return Err(invalid("the Poincaré cube needs at least 3 nodes per side"));
    }
    let capacities = a_list
        .par_iter()
        .map(|&a| capacity_at(&CapacityTarget::segment(dim, a)?, p, 1.0 / (m - 1) as f64, None))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..a_list.len())
        .flat_map(|i| deltas.iter().map(move |&d| (i, d)))
        .collect();
    jobs.par_iter()
        .map(|&(i, delta)| {
            let a = a_list[i];
            let (grid, cracks) = crack_cube(dim, delta, a, m)?;
            let mask = rasterize_cracks_only(&cracks, &grid)?;
            let result = best_poincare_constant(&grid, &mask, p, options)?;
            Ok(PoincareRow {
                a,
                result,
                capacity: capacities[i].clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unpinned_mask_is_rejected() {
        let grid = Grid::cube(vec![0.0, 0.0], 1.0, 9).unwrap();
        let mask = ConstraintMask::none(&grid);
        assert!(matches!(
            best_poincare_constant(&grid, &mask, 2.0, &PoincareOptions::default()),
            Err(Error::UnpinnedMask)
        ));
        let boundary = ConstraintMask::boundary(&grid);
        assert!(best_poincare_constant(&grid, &boundary, 2.0, &PoincareOptions::default()).is_err());
    }

    #[test]
    fn eigenfunction_attains_the_quotient() {
        let (grid, cracks) = crack_cube(2, 1.0, 0.5, 17).unwrap();
        let mask = rasterize_cracks_only(&cracks, &grid).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let r = best_poincare_constant(&grid, &mask, p, &PoincareOptions::default()).unwrap();
            assert!(r.constant > 0.0);
            let q = rayleigh_quotient(&r.eigenfunction, p).unwrap();
            assert!((q - r.eigenvalue).abs() <= 1e-12 * q);
            assert!((r.eigenfunction.lq_norm_pow(p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn longer_crack_gives_smaller_constant() {
        let opts = PoincareOptions::default();
        let mut last = f64::INFINITY;
        for a in [0.25, 0.5, 1.0] {
            let (grid, cracks) = crack_cube(2, 1.0, a, 17).unwrap();
            let mask = rasterize_cracks_only(&cracks, &grid).unwrap();
            let c = best_poincare_constant(&grid, &mask, 2.0, &opts).unwrap().constant;
            assert!(c < last);
            last = c;
        }
    }
}
