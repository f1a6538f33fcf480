//! Discrete p-Dirichlet functionals on a Kuhn mesh.
//!
//! The general form handled here is
//!
//! ```text
//! J(u) = (1/p) sum_s vol_s ((|g_s|^2 + eps^2)^(p/2) - eps^p)
//!      + (c/p) sum_i w_i ((u_i^2 + eps^2)^(p/2) - eps^p)
//!      - sum_i w_i f_i u_i
//! ```
//!
//! where `g_s` is the constant gradient on simplex `s`, `w_i` the trapezoidal
//! node weights and `c` an absorption coefficient (zero for the compliance
//! energy, one for the capacity functional). Pinned nodes are held fixed;
//! every gradient or Hessian product returned here is projected onto the
//! free nodes.

use crate::geometry::ConstraintMask;

use super::mesh::Mesh;

pub(crate) const MAX_DIM: usize = 4;

/// The separate pieces of a discrete functional value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyParts {
    /// `(1/p) * integral of |grad u|^p` (regularized).
    pub dirichlet: f64,
    /// `(c/p) * integral of |u|^p` (regularized).
    pub absorption: f64,
    /// `integral of f u`.
    pub work: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.dirichlet + self.absorption - self.work
    }

    /// Scale used to judge round-off in differences of totals.
    pub(crate) fn magnitude(&self) -> f64 {
        self.dirichlet.abs() + self.absorption.abs() + self.work.abs()
    }
}

#[derive(Clone, Copy)]
pub(crate) struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub mask: &'a ConstraintMask,
    pub p: f64,
    pub eps: f64,
    pub absorption: f64,
    pub source: Option<&'a [f64]>,
}

/// Hessian (or an SPD approximation of it) frozen at one field.
pub(crate) struct Linearization {
    /// `H_s = alpha_s I + beta_s g_s g_s^T`; empty means alpha = 1, beta = 0.
    alpha: Vec<f64>,
    beta: Vec<f64>,
    grads: Vec<f64>,
    /// Absorption curvature per node (already multiplied by the weight).
    node_curvature: Vec<f64>,
    /// Diagonal of the full operator, for Jacobi preconditioning.
    pub diagonal: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn is_quadratic(&self) -> bool {
        self.p == 2.0
    }

    fn eps_p(&self) -> f64 {
        if self.eps == 0.0 {
            0.0
        } else {
            self.eps.powf(self.p)
        }
    }

    #[inline]
    fn density(&self, r2: f64, eps_p: f64) -> f64 {
        if r2 == self.eps * self.eps {
            0.0
        } else if self.p == 2.0 {
            r2 - eps_p
        } else {
            r2.powf(0.5 * self.p) - eps_p
        }
    }

    /// `(r^2)^((p-2)/2)`, with the `0 * inf` case at a zero argument mapped to 0.
    #[inline]
    fn slope_factor(&self, r2: f64) -> f64 {
        if self.p == 2.0 {
            1.0
        } else if r2 == 0.0 {
            if self.p > 2.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            r2.powf(0.5 * (self.p - 2.0))
        }
    }

    pub fn value(&self, u: &[f64]) -> EnergyParts {
        let mesh = self.mesh;
        let dim = mesh.dim();
        let eps2 = self.eps * self.eps;
        let eps_p = self.eps_p();
        let mut g = [0.0; MAX_DIM];
        let mut dirichlet = 0.0;
        for &c in &mesh.cells {
            let mut cell = 0.0;
            for pat in &mesh.patterns {
                mesh.simplex_gradient(u, c, pat, &mut g);
                let r2 = g[..dim].iter().map(|v| v * v).sum::<f64>() + eps2;
                cell += self.density(r2, eps_p);
            }
            dirichlet += cell;
        }
        dirichlet *= mesh.simplex_volume() / self.p;
        let (absorption, work) = self.node_terms(u);
        EnergyParts {
            dirichlet,
            absorption,
            work,
        }
    }

    fn node_terms(&self, u: &[f64]) -> (f64, f64) {
        let w = self.mesh.weights();
        let mut absorption = 0.0;
        if self.absorption != 0.0 {
            let eps2 = self.eps * self.eps;
            let eps_p = self.eps_p();
            absorption = w
                .iter()
                .zip(u)
                .map(|(wi, ui)| wi * self.density(ui * ui + eps2, eps_p))
                .sum::<f64>()
                * self.absorption
                / self.p;
        }
        let work = match self.source {
            Some(f) => w.iter().zip(f).zip(u).map(|((wi, fi), ui)| wi * fi * ui).sum(),
            None => 0.0,
        };
        (absorption, work)
    }

    /// Value plus projected gradient written into `grad`.
    pub fn value_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> EnergyParts {
        let mesh = self.mesh;
        let dim = mesh.dim();
        let vol = mesh.simplex_volume();
        let eps2 = self.eps * self.eps;
        let eps_p = self.eps_p();
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut g = [0.0; MAX_DIM];
        let mut dirichlet = 0.0;
        for &c in &mesh.cells {
            let mut cell = 0.0;
            for pat in &mesh.patterns {
                mesh.simplex_gradient(u, c, pat, &mut g);
                let r2 = g[..dim].iter().map(|v| v * v).sum::<f64>() + eps2;
                cell += self.density(r2, eps_p);
                let a = self.slope_factor(r2);
                if a.is_finite() && a != 0.0 {
                    for v in &mut g[..dim] {
                        *v *= a;
                    }
                    mesh.scatter(grad, c, pat, &g, vol);
                }
            }
            dirichlet += cell;
        }
        dirichlet *= vol / self.p;
        let w = mesh.weights();
        if self.absorption != 0.0 {
            for i in 0..u.len() {
                if u[i] != 0.0 || self.eps > 0.0 {
                    grad[i] += self.absorption * w[i] * self.slope_factor(u[i] * u[i] + eps2) * u[i];
                }
            }
        }
        if let Some(f) = self.source {
            for i in 0..u.len() {
                grad[i] -= w[i] * f[i];
            }
        }
        self.project(grad);
        let (absorption, work) = self.node_terms(u);
        EnergyParts {
            dirichlet,
            absorption,
            work,
        }
    }

    pub fn project(&self, v: &mut [f64]) {
        for (vi, &pinned) in v.iter_mut().zip(self.mask.flags()) {
            if pinned {
                *vi = 0.0;
            }
        }
    }

    /// Freezes the Hessian at `u`. For `p > 2` the curvature is floored with
    /// `floor_rel` times the mean squared gradient so the operator stays
    /// positive definite where the gradient vanishes.
    pub fn linearize(&self, u: &[f64], floor_rel: f64) -> Linearization {
        let mesh = self.mesh;
        let dim = mesh.dim();
        let vol = mesh.simplex_volume();
        let h2 = mesh.grid().h() * mesh.grid().h();
        let n = u.len();
        let mut diagonal = vec![0.0; n];
        let w = mesh.weights();
        let eps2 = self.eps * self.eps;
        let mut node_curvature = vec![0.0; n];
        if self.absorption != 0.0 {
            let floor = if self.p > 2.0 {
                floor_rel * u.iter().map(|v| v * v).sum::<f64>() / n as f64 + 1e-300
            } else {
                0.0
            };
            for i in 0..n {
                let r2 = u[i] * u[i] + eps2 + floor;
                let curv = if self.p == 2.0 {
                    1.0
                } else {
                    r2.powf(0.5 * (self.p - 4.0)) * ((self.p - 1.0) * u[i] * u[i] + eps2 + floor)
                };
                node_curvature[i] = self.absorption * w[i] * curv;
                diagonal[i] += node_curvature[i];
            }
        }

        if self.is_quadratic() {
            for &c in &mesh.cells {
                for pat in &mesh.patterns {
                    for j in 0..=dim {
                        let mut d2 = 0.0;
                        if j >= 1 {
                            d2 += 1.0;
                        }
                        if j < dim {
                            d2 += 1.0;
                        }
                        diagonal[c + pat.vertices[j]] += vol * d2 / h2;
                    }
                }
            }
            self.project(&mut diagonal);
            return Linearization {
                alpha: Vec::new(),
                beta: Vec::new(),
                grads: Vec::new(),
                node_curvature,
                diagonal,
            };
        }

        let ns = mesh.simplex_count();
        let mut grads = vec![0.0; ns * dim];
        let mut g = [0.0; MAX_DIM];
        let mut sumsq = 0.0;
        let mut s = 0;
        for &c in &mesh.cells {
            for pat in &mesh.patterns {
                mesh.simplex_gradient(u, c, pat, &mut g);
                grads[s * dim..(s + 1) * dim].copy_from_slice(&g[..dim]);
                sumsq += g[..dim].iter().map(|v| v * v).sum::<f64>();
                s += 1;
            }
        }
        let floor = if self.p > 2.0 {
            floor_rel * sumsq / ns as f64 + 1e-300
        } else {
            0.0
        };
        let mut alpha = vec![0.0; ns];
        let mut beta = vec![0.0; ns];
        let mut s = 0;
        for &c in &mesh.cells {
            for pat in &mesh.patterns {
                let gs = &grads[s * dim..(s + 1) * dim];
                let r2 = gs.iter().map(|v| v * v).sum::<f64>() + eps2 + floor;
                let a = r2.powf(0.5 * (self.p - 2.0));
                let b = (self.p - 2.0) * a / r2;
                alpha[s] = a;
                beta[s] = b;
                // Diagonal: column of vertex j has +1/h on axis pi(j-1) and -1/h on axis pi(j).
                for j in 0..=dim {
                    let mut d2 = 0.0;
                    let mut gd = 0.0;
                    if j >= 1 {
                        d2 += 1.0;
                        gd += gs[pat.axes[j - 1]];
                    }
                    if j < dim {
                        d2 += 1.0;
                        gd -= gs[pat.axes[j]];
                    }
                    diagonal[c + pat.vertices[j]] += vol * (a * d2 + b * gd * gd) / h2;
                }
                s += 1;
            }
        }
        self.project(&mut diagonal);
        Linearization {
            alpha,
            beta,
            grads,
            node_curvature,
            diagonal,
        }
    }

    /// `out = H v` restricted to free nodes.
    pub fn hess_vec(&self, lin: &Linearization, v: &[f64], out: &mut [f64]) {
        let mesh = self.mesh;
        let dim = mesh.dim();
        let vol = mesh.simplex_volume();
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut dv = [0.0; MAX_DIM];
        if lin.alpha.is_empty() {
            for &c in &mesh.cells {
                for pat in &mesh.patterns {
                    mesh.simplex_gradient(v, c, pat, &mut dv);
                    mesh.scatter(out, c, pat, &dv, vol);
                }
            }
        } else {
            let mut s = 0;
            for &c in &mesh.cells {
                for pat in &mesh.patterns {
                    mesh.simplex_gradient(v, c, pat, &mut dv);
                    let gs = &lin.grads[s * dim..(s + 1) * dim];
                    let gdv: f64 = gs.iter().zip(&dv[..dim]).map(|(a, b)| a * b).sum();
                    let (a, b) = (lin.alpha[s], lin.beta[s] * gdv);
                    for k in 0..dim {
                        dv[k] = a * dv[k] + b * gs[k];
                    }
                    mesh.scatter(out, c, pat, &dv, vol);
                    s += 1;
                }
            }
        }
        if self.absorption != 0.0 {
            for i in 0..v.len() {
                out[i] += lin.node_curvature[i] * v[i];
            }
        }
        self.project(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, m: usize) -> (Mesh, ConstraintMask) {
        let g = Grid::cube(vec![0.0; dim], 1.0, m).unwrap();
        let mask = ConstraintMask::boundary(&g);
        (Mesh::new(&g), mask)
    }

    fn random_field(mesh: &Mesh, mask: &ConstraintMask, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..mesh.node_count())
            .map(|i| {
                if mask.is_pinned(i) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect()
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (dim, p, eps, absorption) in [
            (2, 3.0, 0.0, 0.0),
            (2, 1.5, 1e-3, 1.0),
            (3, 2.0, 0.0, 1.0),
            (3, 2.5, 0.0, 0.0),
        ] {
            let (mesh, mask) = setup(dim, 6);
            let f: Vec<f64> = (0..mesh.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let prob = Problem {
                mesh: &mesh,
                mask: &mask,
                p,
                eps,
                absorption,
                source: Some(&f),
            };
            let u = random_field(&mesh, &mask, &mut rng);
            let v = random_field(&mesh, &mask, &mut rng);
            let lin = prob.linearize(&u, 0.0);
            let mut hv = vec![0.0; u.len()];
            prob.hess_vec(&lin, &v, &mut hv);
            let step = 1e-6;
            let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + step * b).collect();
            let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - step * b).collect();
            let (mut gp, mut gm) = (vec![0.0; u.len()], vec![0.0; u.len()]);
            prob.value_and_gradient(&up, &mut gp);
            prob.value_and_gradient(&um, &mut gm);
            let scale = hv.iter().map(|x| x.abs()).fold(0.0, f64::max);
            for i in 0..u.len() {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                assert!((fd - hv[i]).abs() <= 1e-5 * scale, "dim {dim} p {p}: {fd} vs {}", hv[i]);
            }
            // Diagonal agrees with unit-vector products.
            for i in (0..u.len()).step_by(7) {
                let mut e = vec![0.0; u.len()];
                if mask.is_pinned(i) {
                    continue;
                }
                e[i] = 1.0;
                prob.hess_vec(&lin, &e, &mut hv);
                assert!((hv[i] - lin.diagonal[i]).abs() <= 1e-10 * lin.diagonal[i].abs());
            }
        }
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let (mesh, mask) = setup(2, 5);
        let f = vec![2.0; mesh.node_count()];
        let prob = Problem {
            mesh: &mesh,
            mask: &mask,
            p: 1.5,
            eps: 1e-4,
            absorption: 1.0,
            source: Some(&f),
        };
        let e = prob.value(&vec![0.0; mesh.node_count()]);
        assert_eq!(e.total(), 0.0);
    }
}
