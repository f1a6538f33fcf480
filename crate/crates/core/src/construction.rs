//! Grids of shrinking cracks whose compliance vanishes while their total
//! length stays fixed.
//!
//! The box `(-R, R)^N` is cut into `(2n)^N` cubes of side `R/n`. Each cube
//! carries one centered segment of length `eps R / n^N`, so the union always
//! has length `2^N R eps`. On every cube the energy is minimized over fields
//! pinned only on its segment; the fluxes of the local minimizers glue to a
//! global field with `-div sigma = g` away from the cracks whose `p'`-norm
//! decays as `n` grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::capacity::{capacity_at, CapacityResult, CapacityTarget};
use crate::error::{invalid, Error, Result};
use crate::fit::{scaling_fit, LinearFit};
use crate::geometry::{
    conjugate, rasterize, rasterize_cracks_only, validate_exponent, ConstraintMask, CrackSet, Grid, Segment,
};
use crate::solver::{flux, solve_on_mesh, ComplianceReport, FluxField, GridField, Mesh, SolverConfig};
use crate::source::Source;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructionParams {
    pub n: usize,
    pub epsilon: f64,
    pub half_width: f64,
    pub dim: usize,
    pub p: f64,
}

impl ConstructionParams {
    pub fn new(n: usize, epsilon: f64, half_width: f64, dim: usize, p: f64) -> Result<Self> {
        let params = Self {
            n,
            epsilon,
            half_width,
            dim,
            p,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(invalid("n must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(invalid(format!("R must be positive, got {}", self.half_width)));
        }
        if self.dim < 2 {
            return Err(invalid("the construction needs N >= 2"));
        }
        validate_exponent(self.p)
    }

    /// Side `R/n` of the local cubes.
    pub fn cube_side(&self) -> f64 {
        self.half_width / self.n as f64
    }

    /// Length `eps R / n^N` of each local crack.
    pub fn crack_length(&self) -> f64 {
        self.epsilon * self.half_width / (self.n as f64).powi(self.dim as i32)
    }

    /// Crack length relative to the cube side, `eps / n^(N-1)`.
    pub fn relative_crack_length(&self) -> f64 {
        self.epsilon / (self.n as f64).powi(self.dim as i32 - 1)
    }

    /// `2^N R eps`, the length of the whole construction.
    pub fn total_length(&self) -> f64 {
        2f64.powi(self.dim as i32) * self.half_width * self.epsilon
    }

    pub fn cube_count(&self) -> usize {
        (2 * self.n).pow(self.dim as u32)
    }

    /// Lower corner of cube `k` (cubes ordered with axis 0 fastest).
    pub fn cube_origin(&self, mut k: usize) -> Vec<f64> {
        let per_axis = 2 * self.n;
        (0..self.dim)
            .map(|_| {
                let j = k % per_axis;
                k /= per_axis;
                -self.half_width + j as f64 * self.cube_side()
            })
            .collect()
    }

    /// The crack of the cube with lower corner `origin`.
    pub fn local_crack(&self, origin: &[f64]) -> Result<Segment> {
        let half_side = 0.5 * self.cube_side();
        let half_crack = 0.5 * self.crack_length();
        let mut start: Vec<f64> = origin.iter().map(|o| o + half_side).collect();
        let mut end = start.clone();
        start[0] -= half_crack;
        end[0] += half_crack;
        Segment::new(start, end)
    }
}

/// The union of all `(2n)^N` local cracks.
pub fn crack_grid_construction(params: &ConstructionParams) -> Result<CrackSet> {
    params.validate()?;
    let segments = (0..params.cube_count())
        .map(|k| params.local_crack(&params.cube_origin(k)))
        .collect::<Result<Vec<_>>>()?;
    CrackSet::new(params.dim, segments)
}

/// Minimizer of the energy on one cube, pinned only on its crack.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub origin: Vec<f64>,
    pub field: GridField,
    pub report: ComplianceReport,
    /// `int |g|^p'` over the cube.
    pub source_norm: f64,
}

impl LocalSolution {
    /// `int |grad u|^p` over the cube.
    pub fn dirichlet_integral(&self) -> f64 {
        self.report.flux_pnorm
    }
}

/// Solves the local problem on `grid` with the crack `cracks` pinned and the
/// cube faces free.
pub fn local_solve(grid: &Grid, cracks: &CrackSet, g: &Source, p: f64, config: &SolverConfig) -> Result<LocalSolution> {
    let mask = rasterize_cracks_only(cracks, grid)?;
    if mask.pinned_count() == 0 {
        return Err(Error::ResolutionTooCoarse {
            length: cracks.total_length(),
            h: grid.h(),
        });
    }
    let samples = g.sample(grid);
    let pp = conjugate(p);
    let source_norm = grid_integral(grid, &samples, pp);
    let mesh = Mesh::new(grid);
    let (field, report) = solve_on_mesh(&samples, &mesh, &mask, p, config)?;
    Ok(LocalSolution {
        origin: grid.origin().to_vec(),
        field,
        report,
        source_norm,
    })
}

fn grid_integral(grid: &Grid, values: &[f64], q: f64) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| grid.node_weight(i) * v.abs().powf(q))
        .sum()
}

/// Local grid of the cube with lower corner `origin`.
fn local_grid(params: &ConstructionParams, origin: Vec<f64>, nodes_per_side: usize) -> Result<Grid> {
    Grid::cube(origin, params.cube_side(), nodes_per_side)
}

/// Checks that every local crack spans at least `min_cells` cells on a cube
/// grid with `nodes_per_side` nodes.
pub fn check_resolution(
    params: &ConstructionParams,
    nodes_per_side: usize,
    min_nodes_per_side: usize,
    min_cells: f64,
) -> Result<()> {
    let h = params.cube_side() / (nodes_per_side - 1) as f64;
    if nodes_per_side < min_nodes_per_side || params.crack_length() < min_cells * h * (1.0 - 1e-9) {
        return Err(Error::ResolutionTooCoarse {
            length: params.crack_length(),
            h,
        });
    }
    Ok(())
}

/// Solves all `(2n)^N` local problems.
pub fn solve_all_cubes(
    params: &ConstructionParams,
    g: &Source,
    nodes_per_side: usize,
    config: &SolverConfig,
) -> Result<Vec<LocalSolution>> {
    params.validate()?;
    (0..params.cube_count())
        .into_par_iter()
        .map(|k| {
            let origin = params.cube_origin(k);
            let crack = CrackSet::single(params.local_crack(&origin)?);
            let grid = local_grid(params, origin, nodes_per_side)?;
            local_solve(&grid, &crack, g, params.p, config)
        })
        .collect()
}

/// The flux `sigma_n` on the whole box together with the global grid it
/// lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledFlux {
    pub flux: FluxField,
    /// Source samples on the global grid.
    pub source: Vec<f64>,
    /// Crack nodes of the global grid.
    pub mask: ConstraintMask,
}

/// Glues the local fluxes `|grad u|^(p-2) grad u` into one field on the
/// global grid `(-R, R)^N` with the local spacing.
pub fn assemble_flux(
    params: &ConstructionParams,
    locals: &[LocalSolution],
    g: &Source,
    eps: f64,
) -> Result<AssembledFlux> {
    if locals.len() != params.cube_count() {
        return Err(invalid(format!(
            "expected {} local solutions, got {}",
            params.cube_count(),
            locals.len()
        )));
    }
    let local_grid = locals[0].field.grid().clone();
    let m = local_grid.nodes_per_side();
    let dim = params.dim;
    let global = Grid::with_spacing(
        vec![-params.half_width; dim],
        local_grid.h(),
        2 * params.n * (m - 1) + 1,
    )?;
    let local_fluxes = locals
        .iter()
        .map(|s| flux(&s.field, params.p, eps))
        .collect::<Result<Vec<_>>>()?;
    let spc = local_fluxes[0].simplices_per_cell();
    let block = spc * dim;
    // Position of each local cell in the local cell list.
    let local_mesh = Mesh::new(&local_grid);
    let mut ordinal = vec![usize::MAX; local_grid.node_count()];
    for (k, &c) in local_mesh.cells.iter().enumerate() {
        ordinal[c] = k;
    }
    let global_mesh = Mesh::new(&global);
    let mut vectors = Vec::with_capacity(global_mesh.cells.len() * block);
    let per_axis = 2 * params.n;
    for &c in &global_mesh.cells {
        let idx = global.multi_index(c);
        let mut cube = 0;
        let mut scale = 1;
        let mut local_idx = Vec::with_capacity(dim);
        for &i in &idx {
            cube += (i / (m - 1)) * scale;
            scale *= per_axis;
            local_idx.push(i % (m - 1));
        }
        let k = ordinal[local_grid.flat_index(&local_idx)];
        vectors.extend_from_slice(&local_fluxes[cube].raw()[k * block..(k + 1) * block]);
    }
    let flux = FluxField::from_parts(global.clone(), spc, global_mesh.simplex_volume(), vectors);
    let cracks = crack_grid_construction(params)?;
    Ok(AssembledFlux {
        source: g.sample(&global),
        mask: rasterize_cracks_only(&cracks, &global)?,
        flux,
    })
}

/// Result of testing `int sigma . grad(phi) = int g phi` on smooth bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceCheck {
    pub samples: usize,
    /// Largest `|int sigma . grad(phi) - int g phi| / sum_i |phi(x_i)|`.
    pub max_ratio: f64,
    /// Allowed ratio.
    pub bound: f64,
}

impl DivergenceCheck {
    pub fn passed(&self) -> bool {
        self.max_ratio <= self.bound
    }
}

fn bump_1d(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Tests the weak divergence identity on `samples` tensor-product bumps with
/// random centers and radii, each supported inside the box and away from
/// every crack node. Both sides use the solver's quadrature, so the identity
/// holds up to the nodal residual of the local solves: `bound` should be
/// `2^N` times their gradient tolerance (a node is shared by up to `2^N`
/// cubes).
pub fn check_divergence(assembled: &AssembledFlux, samples: usize, bound: f64, seed: u64) -> Result<DivergenceCheck> {
    let grid = assembled.flux.grid();
    let dim = grid.dim();
    let mesh = Mesh::new(grid);
    let weak = assembled.flux.weak_divergence(&mesh);
    let residual: Vec<f64> = (0..weak.len())
        .map(|i| weak[i] - mesh.weights()[i] * assembled.source[i])
        .collect();
    let pinned: Vec<Vec<f64>> = (0..grid.node_count())
        .filter(|&i| assembled.mask.is_pinned(i))
        .map(|i| grid.coordinate(i))
        .collect();
    let lo = grid.origin()[0];
    let hi = lo + grid.side();
    let h = grid.h();
    let max_radius = 0.25 * grid.side();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    let mut found = 0;
    let mut attempts = 0;
    let mut x = vec![0.0; dim];
    while found < samples {
        attempts += 1;
        if attempts > 100_000 {
            return Err(invalid("could not place test bumps away from the cracks"));
        }
        let r = rng.gen_range(3.0 * h..max_radius.max(4.0 * h));
        let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo + r..hi - r)).collect();
        let touches_crack = pinned
            .iter()
            .any(|q| q.iter().zip(&center).all(|(a, b)| (a - b).abs() < r));
        if hi - lo <= 2.0 * r || touches_crack {
            continue;
        }
        found += 1;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for (i, res) in residual.iter().enumerate() {
            grid.coordinate_into(i, &mut x);
            let phi: f64 = x.iter().zip(&center).map(|(a, b)| bump_1d((a - b) / r)).product();
            if phi != 0.0 {
                acc += phi * res;
                norm += phi.abs();
            }
        }
        if norm > 0.0 {
            max_ratio = max_ratio.max(acc.abs() / norm);
        }
    }
    Ok(DivergenceCheck {
        samples,
        max_ratio,
        bound,
    })
}

/// Which capacity regime of the segment `A_{eps,n}` governs the decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayCase {
    /// `p <= N - 1`: segments are removable, no decay is predicted.
    Removable,
    /// `N - 1 < p < N`.
    BelowDimension,
    /// `p = N`: a logarithmic correction.
    AtDimension,
    /// `p > N`: points have positive capacity.
    AboveDimension,
}

impl DecayCase {
    pub fn classify(dim: usize, p: f64) -> Self {
        let n = dim as f64;
        if p <= n - 1.0 {
            DecayCase::Removable
        } else if p < n {
            DecayCase::BelowDimension
        } else if p == n {
            DecayCase::AtDimension
        } else {
            DecayCase::AboveDimension
        }
    }

    /// Predicted power of `n` in the decay of `int |sigma_n|^p'`; for `p = N`
    /// there is an extra `log n` factor.
    pub fn predicted_exponent(&self, dim: usize, p: f64) -> Option<f64> {
        let pp = conjugate(p);
        let n = dim as f64;
        match self {
            DecayCase::Removable => None,
            DecayCase::BelowDimension => Some((n - 1.0) * (n - p) * (pp - 1.0) - pp),
            DecayCase::AtDimension | DecayCase::AboveDimension => Some(-pp),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingConfig {
    pub n_list: Vec<usize>,
    pub epsilon: f64,
    pub p: f64,
    pub dim: usize,
    pub half_width: f64,
    pub lambda: f64,
    pub source: Source,
    pub nodes_per_side: usize,
    pub min_nodes_per_side: usize,
    /// Each local crack must span at least this many cells.
    pub min_crack_cells: f64,
    pub divergence_samples: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Multiplier on the calibrated bound.
    pub safety_factor: f64,
}

impl Default for VanishingConfig {
    fn default() -> Self {
        Self {
            n_list: vec![1, 2, 4, 8],
            epsilon: 0.25,
            p: 2.0,
            dim: 2,
            half_width: 1.0,
            lambda: 1.0,
            source: Source::Constant(1.0),
            nodes_per_side: 65,
            min_nodes_per_side: 33,
            min_crack_cells: 2.0,
            divergence_samples: 20,
            seed: 0,
            solver: SolverConfig::default(),
            safety_factor: 1.5,
        }
    }
}

impl VanishingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("n_list must be strictly increasing"));
        }
        if self.n_list.first() == Some(&0) {
            return Err(invalid("n must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid("lambda must be non-negative"));
        }
        if self.nodes_per_side < 2 {
            return Err(invalid("nodes_per_side must be at least 2"));
        }
        if !(self.safety_factor >= 1.0) {
            return Err(invalid("safety factor must be at least 1"));
        }
        ConstructionParams::new(1, self.epsilon, self.half_width, self.dim, self.p)?;
        self.solver.validate(self.p)
    }
}

/// One `n` of the vanishing sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct VanishingRow {
    pub n: usize,
    pub h_local: f64,
    pub cubes: usize,
    pub crack_length: f64,
    /// `int |sigma_n|^p'`, the sum of the local `int |grad u|^p`.
    pub flux_pnorm: f64,
    /// `int |g|^p'` over the box.
    pub source_norm: f64,
    /// Measured capacity of `A_{eps,n}` at the rescaled local spacing.
    pub capacity: CapacityResult,
    /// Right side of the decay bound with the calibrated constant.
    pub bound_rhs: f64,
    /// `(1/p') flux_pnorm + lambda crack_length`.
    pub penalized_value: f64,
    /// `(max - min) / max` of the local energies.
    pub local_spread: f64,
    pub divergence: DivergenceCheck,
}

impl VanishingRow {
    pub const CSV_HEADER: &'static str =
        "n,h_local,cubes,crack_length,flux_pnorm,source_norm,capacity,bound_rhs,penalized_value,local_spread,divergence_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6e},{},{:.15e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.3e},{:.3e}",
            self.n,
            self.h_local,
            self.cubes,
            self.crack_length,
            self.flux_pnorm,
            self.source_norm,
            self.capacity.value,
            self.bound_rhs,
            self.penalized_value,
            self.local_spread,
            self.divergence.max_ratio
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingSequenceReport {
    pub p: f64,
    pub dim: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub rows: Vec<VanishingRow>,
    /// `C~`, calibrated on the first row so the bound is tight there.
    pub c_tilde: f64,
    pub safety_factor: f64,
    pub case: DecayCase,
    /// Log-log fit of `flux_pnorm` against `n`, when at least three rows
    /// have positive flux.
    pub decay_fit: Option<LinearFit>,
    /// The first `n` skipped by the resolution guard, with the reason.
    pub stopped: Option<(usize, Error)>,
}

impl VanishingSequenceReport {
    /// `lambda 2^N R eps`, the limit of the penalized values.
    pub fn limit(&self) -> f64 {
        self.rows
            .first()
            .map(|r| self.lambda * r.crack_length)
            .unwrap_or(f64::NAN)
    }

    pub fn flux_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].flux_pnorm < w[0].flux_pnorm)
    }

    /// Every row satisfies `flux <= safety * bound` (up to round-off).
    pub fn bound_satisfied(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.flux_pnorm <= self.safety_factor * r.bound_rhs * (1.0 + 1e-12))
    }

    pub fn fit_summary(&self) -> String {
        let predicted = self
            .case
            .predicted_exponent(self.dim, self.p)
            .map(|e| format!("{e:.4}"))
            .unwrap_or_else(|| "none".into());
        match &self.decay_fit {
            Some(fit) => format!(
                "decay fit: slope {:.4} (predicted {predicted}, case {:?}), r2 {:.5}, C~ {:.6e}",
                fit.slope, self.case, fit.r2, self.c_tilde
            ),
            None => format!("decay fit: not enough positive rows (case {:?})", self.case),
        }
    }
}

/// Runs the construction for every `n` in the configured ladder.
pub fn vanishing_sequence_experiment(config: &VanishingConfig) -> Result<VanishingSequenceReport> {
    config.validate()?;
    let pp = conjugate(config.p);
    let mut rows: Vec<VanishingRow> = Vec::new();
    let mut stopped = None;
    let mut c_tilde = f64::NAN;
    for &n in &config.n_list {
        let params = ConstructionParams::new(n, config.epsilon, config.half_width, config.dim, config.p)?;
        if let Err(e) = check_resolution(
            &params,
            config.nodes_per_side,
            config.min_nodes_per_side,
            config.min_crack_cells,
        ) {
            log::warn!("stopping the vanishing sequence at n = {n}: {e}");
            stopped = Some((n, e));
            break;
        }
        let locals = solve_all_cubes(&params, &config.source, config.nodes_per_side, &config.solver)?;
        let flux_pnorm: f64 = locals.iter().map(LocalSolution::dirichlet_integral).sum();
        let source_norm: f64 = locals.iter().map(|s| s.source_norm).sum();
        let (lo, hi) = locals
            .iter()
            .map(LocalSolution::dirichlet_integral)
            .fold((f64::INFINITY, 0.0f64), |(a, b), e| (a.min(e), b.max(e)));
        let local_spread = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
        let eps = locals[0].report.regularization_eps;
        let assembled = assemble_flux(&params, &locals, &config.source, eps)?;
        let bound = 2f64.powi(config.dim as i32) * config.solver.grad_tolerance;
        let divergence = check_divergence(
            &assembled,
            config.divergence_samples,
            bound,
            config.seed.wrapping_add(n as u64),
        )?;
        let target = CapacityTarget::segment(config.dim, params.relative_crack_length())?;
        let capacity = capacity_at(&target, config.p, 1.0 / (config.nodes_per_side - 1) as f64, None)?;
        let shape = (n as f64).powf(-pp) * capacity.value.powf(1.0 - pp) * source_norm;
        if rows.is_empty() {
            c_tilde = if shape > 0.0 { flux_pnorm / shape } else { 0.0 };
        }
        let crack_length = crack_grid_construction(&params)?.total_length();
        rows.push(VanishingRow {
            n,
            h_local: assembled.flux.grid().h(),
            cubes: params.cube_count(),
            crack_length,
            flux_pnorm,
            source_norm,
            capacity,
            bound_rhs: c_tilde * shape,
            penalized_value: flux_pnorm / pp + config.lambda * crack_length,
            local_spread,
            divergence,
        });
    }
    let positive: Vec<&VanishingRow> = rows.iter().filter(|r| r.flux_pnorm > 0.0).collect();
    let decay_fit = if positive.len() >= 3 {
        let ns: Vec<f64> = positive.iter().map(|r| r.n as f64).collect();
        let fl: Vec<f64> = positive.iter().map(|r| r.flux_pnorm).collect();
        Some(scaling_fit(&ns, &fl)?)
    } else {
        None
    };
    Ok(VanishingSequenceReport {
        p: config.p,
        dim: config.dim,
        epsilon: config.epsilon,
        lambda: config.lambda,
        rows,
        c_tilde,
        safety_factor: config.safety_factor,
        case: DecayCase::classify(config.dim, config.p),
        decay_fit,
        stopped,
    })
}

/// Compliance of a single connected segment of the given length through the
/// center of the box along the first axis, with the box boundary pinned.
#[allow(clippy::too_many_arguments)]
pub fn connected_baseline(
    dim: usize,
    half_width: f64,
    length: f64,
    g: &Source,
    p: f64,
    nodes_per_side: usize,
    lambda: f64,
    config: &SolverConfig,
) -> Result<ComplianceReport> {
    if !(length > 0.0 && length <= 2.0 * half_width) {
        return Err(invalid(format!(
            "a connected segment of length {length} does not fit in the box"
        )));
    }
    let grid = Grid::cube(vec![-half_width; dim], 2.0 * half_width, nodes_per_side)?;
    let mut start = vec![0.0; dim];
    let mut end = vec![0.0; dim];
    start[0] = -0.5 * length;
    end[0] = 0.5 * length;
    let cracks = CrackSet::single(Segment::new(start, end)?);
    let mask = rasterize(&cracks, &grid)?;
    let samples = g.sample(&grid);
    let (_, report) = solve_on_mesh(&samples, &Mesh::new(&grid), &mask, p, config)?;
    Ok(report.with_penalty(length, lambda))
}
