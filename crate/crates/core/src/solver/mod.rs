//! Minimization of the discrete p-Dirichlet energy over fields vanishing on a
//! constraint mask, and the derived compliance and flux quantities.
//!
//! Fields live on grid nodes and are interpolated linearly on the Kuhn
//! simplices of each cell, so every simplex carries a constant gradient.
//! Integrals of node quantities use the trapezoidal weights of the grid.

mod functional;
mod mesh;
mod minimize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{conjugate, validate_exponent, ConstraintMask, Grid};

pub use functional::EnergyParts;
pub(crate) use functional::Problem;
pub use mesh::Mesh;
pub(crate) use minimize::{minimize, Outcome};

/// Which minimization path [`solve`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Linear conjugate gradients when `p = 2`, descent otherwise.
    #[default]
    Auto,
    /// Line-search descent with truncated Newton directions.
    Descent,
    /// Linear conjugate gradients (`p = 2` only).
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Stopping threshold on the max-norm of the projected energy gradient.
    pub grad_tolerance: f64,
    /// Outer iterations: CG steps on the linear path, descent steps otherwise.
    pub max_iterations: usize,
    /// CG steps allowed per Newton direction.
    pub inner_max_iterations: usize,
    /// Smoothing of `|grad u|` near zero. `None` picks 0 for `p >= 2` and
    /// `1e-8 * max(|f|, 1)` below.
    pub regularization_eps: Option<f64>,
    pub armijo_shrink: f64,
    pub armijo_c: f64,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tolerance: 1e-8,
            max_iterations: 50_000,
            inner_max_iterations: 5_000,
            regularization_eps: None,
            armijo_shrink: 0.5,
            armijo_c: 1e-4,
            method: Method::Auto,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.grad_tolerance = tol;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.regularization_eps = Some(eps);
        self
    }

    pub fn validate(&self, p: f64) -> Result<()> {
        validate_exponent(p)?;
        if !(self.grad_tolerance > 0.0) {
            return Err(invalid(format!(
                "grad_tolerance must be positive, got {}",
                self.grad_tolerance
            )));
        }
        if let Some(eps) = self.regularization_eps {
            if !(eps >= 0.0) {
                return Err(invalid(format!("regularization_eps must be >= 0, got {eps}")));
            }
            if eps == 0.0 && p < 2.0 {
                return Err(invalid("regularization_eps = 0 requires p >= 2"));
            }
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(invalid("armijo_shrink must lie in (0, 1)"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(invalid("armijo_c must lie in (0, 1)"));
        }
        if self.max_iterations == 0 || self.inner_max_iterations == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        Ok(())
    }

    /// Regularization actually used for exponent `p` and source scale `f_scale`.
    pub fn effective_eps(&self, p: f64, f_scale: f64) -> f64 {
        match self.regularization_eps {
            Some(eps) => eps,
            None if p >= 2.0 => 0.0,
            None => 1e-8 * f_scale.max(1.0),
        }
    }
}

/// Node values of a discrete field.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::ShapeMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: vec![0.0; grid.node_count()],
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Trapezoidal `integral of |u|^q`.
    pub fn lq_norm_pow(&self, q: f64) -> f64 {
        (0..self.values.len())
            .map(|i| self.grid.node_weight(i) * self.values[i].abs().powf(q))
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One flux vector per simplex of every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    grid: Grid,
    simplices_per_cell: usize,
    simplex_volume: f64,
    /// Cell-major, then simplex, then component.
    vectors: Vec<f64>,
}

impl FluxField {
    pub(crate) fn from_parts(grid: Grid, simplices_per_cell: usize, simplex_volume: f64, vectors: Vec<f64>) -> Self {
        debug_assert_eq!(vectors.len(), grid.cell_count() * simplices_per_cell * grid.dim());
        Self {
            grid,
            simplices_per_cell,
            simplex_volume,
            vectors,
        }
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.vectors
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn simplices_per_cell(&self) -> usize {
        self.simplices_per_cell
    }

    pub fn simplex_volume(&self) -> f64 {
        self.simplex_volume
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.grid.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Flux vector of simplex `k` (global simplex index).
    pub fn vector(&self, k: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.vectors[k * d..(k + 1) * d]
    }

    /// `integral of |sigma|^q`.
    pub fn norm_pow(&self, q: f64) -> f64 {
        let d = self.grid.dim();
        self.vectors
            .chunks(d)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().powf(0.5 * q))
            .sum::<f64>()
            * self.simplex_volume
    }

    /// Per-cell magnitude averaged over the cell's simplices.
    pub fn cell_magnitudes(&self) -> Vec<f64> {
        let d = self.grid.dim();
        self.vectors
            .chunks(d * self.simplices_per_cell)
            .map(|cell| {
                cell.chunks(d)
                    .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / self.simplices_per_cell as f64
            })
            .collect()
    }

    /// `integral of sigma . grad(phi_i)` for every node hat function `phi_i`.
    pub fn weak_divergence(&self, mesh: &Mesh) -> Vec<f64> {
        let d = self.grid.dim();
        let mut out = vec![0.0; mesh.node_count()];
        let mut k = 0;
        for &c in &mesh.cells {
            for pat in &mesh.patterns {
                mesh.scatter(&mut out, c, pat, &self.vectors[k * d..(k + 1) * d], self.simplex_volume);
                k += 1;
            }
        }
        out
    }

    /// Max over free nodes of `|integral sigma . grad(phi_i) - integral f phi_i|`,
    /// the discrete residual of `-div sigma = f` away from pinned nodes.
    pub fn divergence_residual(&self, source: &[f64], mask: &ConstraintMask) -> f64 {
        let mesh = Mesh::new(&self.grid);
        let weak = self.weak_divergence(&mesh);
        (0..weak.len())
            .filter(|&i| !mask.is_pinned(i))
            .map(|i| (weak[i] - mesh.weights()[i] * source[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Energies and compliance of one converged configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceReport {
    pub p: f64,
    pub nodes_per_side: usize,
    pub h: f64,
    pub regularization_eps: f64,
    pub energy: f64,
    pub compliance_energy_form: f64,
    pub compliance_work_form: f64,
    pub flux_pnorm: f64,
    pub crack_length: f64,
    pub lambda: f64,
    pub penalized_objective: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl ComplianceReport {
    pub const CSV_HEADER: &'static str = "p,nodes_per_side,h,regularization_eps,energy,compliance_energy_form,compliance_work_form,flux_pnorm,crack_length,lambda,penalized_objective,iterations,residual";

    /// Sets the crack length and penalization and recomputes the objective.
    pub fn with_penalty(mut self, crack_length: f64, lambda: f64) -> Self {
        self.crack_length = crack_length;
        self.lambda = lambda;
        self.penalized_objective = self.compliance_energy_form + lambda * crack_length;
        self
    }

    /// Relative gap between the two compliance forms.
    pub fn duality_gap(&self) -> f64 {
        (self.compliance_energy_form - self.compliance_work_form).abs() / self.compliance_energy_form.max(f64::EPSILON)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.12e},{:.6e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{:.12e},{},{:.6e}",
            self.p,
            self.nodes_per_side,
            self.h,
            self.regularization_eps,
            self.energy,
            self.compliance_energy_form,
            self.compliance_work_form,
            self.flux_pnorm,
            self.crack_length,
            self.lambda,
            self.penalized_objective,
            self.iterations,
            self.residual
        )
    }
}

fn check_len(grid: &Grid, len: usize) -> Result<()> {
    if len != grid.node_count() {
        return Err(Error::ShapeMismatch {
            expected: grid.node_count(),
            got: len,
        });
    }
    Ok(())
}

/// Discrete energy `(1/p) int |grad u|^p - int f u` (unregularized).
pub fn energy(u: &GridField, f: &[f64], p: f64) -> Result<f64> {
    validate_exponent(p)?;
    check_len(u.grid(), f.len())?;
    let mesh = Mesh::new(u.grid());
    let mask = ConstraintMask::none(u.grid());
    let prob = Problem {
        mesh: &mesh,
        mask: &mask,
        p,
        eps: 0.0,
        absorption: 0.0,
        source: Some(f),
    };
    Ok(prob.value(u.values()).total())
}

/// Gradient of the regularized discrete energy with respect to the node
/// values, zeroed at pinned nodes.
pub fn energy_gradient(u: &GridField, f: &[f64], mask: &ConstraintMask, p: f64, eps: f64) -> Result<GridField> {
    validate_exponent(p)?;
    check_len(u.grid(), f.len())?;
    check_len(u.grid(), mask.len())?;
    if eps == 0.0 && p < 2.0 {
        return Err(invalid("eps = 0 requires p >= 2"));
    }
    let mesh = Mesh::new(u.grid());
    let prob = Problem {
        mesh: &mesh,
        mask,
        p,
        eps,
        absorption: 0.0,
        source: Some(f),
    };
    let mut grad = vec![0.0; u.values().len()];
    prob.value_and_gradient(u.values(), &mut grad);
    GridField::new(u.grid().clone(), grad)
}

/// `sigma = (|grad u|^2 + eps^2)^((p-2)/2) grad u` on every simplex.
pub fn flux(u: &GridField, p: f64, eps: f64) -> Result<FluxField> {
    validate_exponent(p)?;
    let grid = u.grid();
    let mesh = Mesh::new(grid);
    let d = grid.dim();
    let mut vectors = Vec::with_capacity(mesh.simplex_count() * d);
    let mut g = [0.0; functional::MAX_DIM];
    for &c in &mesh.cells {
        for pat in &mesh.patterns {
            mesh.simplex_gradient(u.values(), c, pat, &mut g);
            let r2 = g[..d].iter().map(|v| v * v).sum::<f64>() + eps * eps;
            let a = if p == 2.0 {
                1.0
            } else if r2 == 0.0 {
                0.0
            } else {
                r2.powf(0.5 * (p - 2.0))
            };
            vectors.extend(g[..d].iter().map(|v| a * v));
        }
    }
    Ok(FluxField {
        grid: grid.clone(),
        simplices_per_cell: mesh.simplices_per_cell(),
        simplex_volume: mesh.simplex_volume(),
        vectors,
    })
}

/// Minimizes the energy with source samples `f` over fields vanishing on
/// `mask` and reports the compliance.
pub fn solve(
    f: &[f64],
    grid: &Grid,
    mask: &ConstraintMask,
    p: f64,
    config: &SolverConfig,
) -> Result<(GridField, ComplianceReport)> {
    let mesh = Mesh::new(grid);
    solve_on_mesh(f, &mesh, mask, p, config)
}

/// [`solve`] on a prebuilt mesh.
pub fn solve_on_mesh(
    f: &[f64],
    mesh: &Mesh,
    mask: &ConstraintMask,
    p: f64,
    config: &SolverConfig,
) -> Result<(GridField, ComplianceReport)> {
    config.validate(p)?;
    let grid = mesh.grid();
    check_len(grid, f.len())?;
    check_len(grid, mask.len())?;
    let f_scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = config.effective_eps(p, f_scale);
    let prob = Problem {
        mesh,
        mask,
        p,
        eps,
        absorption: 0.0,
        source: Some(f),
    };
    let u0 = vec![0.0; grid.node_count()];
    let out = minimize(&prob, u0, config, true)?;
    let report = compliance_report(mesh, f, p, eps, &out);
    Ok((GridField::new(grid.clone(), out.u)?, report))
}

fn compliance_report(mesh: &Mesh, f: &[f64], p: f64, eps: f64, out: &Outcome) -> ComplianceReport {
    let mask = ConstraintMask::none(mesh.grid());
    let exact = Problem {
        mesh,
        mask: &mask,
        p,
        eps: 0.0,
        absorption: 0.0,
        source: Some(f),
    };
    let parts = exact.value(&out.u);
    let grad_p = p * parts.dirichlet;
    let pp = conjugate(p);
    let compliance = grad_p / pp;
    ComplianceReport {
        p,
        nodes_per_side: mesh.grid().nodes_per_side(),
        h: mesh.grid().h(),
        regularization_eps: eps,
        energy: parts.total(),
        compliance_energy_form: compliance,
        compliance_work_form: parts.work / pp,
        flux_pnorm: grad_p,
        crack_length: 0.0,
        lambda: 0.0,
        penalized_objective: compliance,
        iterations: out.iterations,
        residual: out.residual,
    }
}
