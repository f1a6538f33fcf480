//! Variational (1,p)-capacity of crack sets and points.
//!
//! The capacity is the infimum of `int |grad u|^p + int |u|^p` over fields
//! that are at least one near the target. On the grid the field is pinned to
//! exactly one at every node within `h/2` of the target, which makes the
//! discrete minimizer an admissible competitor: the reported value is an
//! upper-bound estimate at resolution `h`. The infinite domain is truncated to
//! a box with a free (natural) boundary condition.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{validate_exponent, ConstraintMask, CrackSet, Grid, Segment};
use crate::solver::{minimize, Mesh, Problem, SolverConfig};

/// The set whose capacity is measured.
#[derive(Debug, Clone, PartialEq)]
pub enum CapacityTarget {
    Cracks(CrackSet),
    Point(Vec<f64>),
}

impl CapacityTarget {
    /// The segment `[0, t] x {0}^(N-1)`.
    pub fn segment(dim: usize, t: f64) -> Result<Self> {
        let mut end = vec![0.0; dim];
        end[0] = t;
        Ok(CapacityTarget::Cracks(CrackSet::single(Segment::new(
            vec![0.0; dim],
            end,
        )?)))
    }

    pub fn dim(&self) -> usize {
        match self {
            CapacityTarget::Cracks(c) => c.dim(),
            CapacityTarget::Point(x) => x.len(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            CapacityTarget::Cracks(c) => c.diameter(),
            CapacityTarget::Point(_) => 0.0,
        }
    }

    fn center(&self) -> Vec<f64> {
        match self {
            CapacityTarget::Cracks(c) => c.bounding_center(),
            CapacityTarget::Point(x) => x.clone(),
        }
    }

    fn is_empty(&self) -> bool {
        matches!(self, CapacityTarget::Cracks(c) if c.is_empty())
    }

    /// Nodes within `h/2` of the target.
    pub fn mask(&self, grid: &Grid) -> Result<ConstraintMask> {
        match self {
            CapacityTarget::Cracks(c) => crate::geometry::rasterize_cracks_only(c, grid),
            CapacityTarget::Point(x) => {
                if !grid.contains(x) {
                    return Err(Error::OutsideBox(format!("point {x:?}")));
                }
                let mut mask = ConstraintMask::none(grid);
                let radius = 0.5 * grid.h() * (1.0 + 1e-9);
                let mut y = vec![0.0; grid.dim()];
                for i in 0..grid.node_count() {
                    grid.coordinate_into(i, &mut y);
                    let d: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    if d <= radius {
                        mask.pin(i);
                    }
                }
                Ok(mask)
            }
        }
    }
}

/// Capacity estimate together with the discretization that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    /// Upper-bound estimate of the variational capacity at this resolution.
    pub value: f64,
    pub box_half_width: f64,
    pub grid_h: f64,
    pub p: f64,
    pub pinned_nodes: usize,
    pub iterations: usize,
}

impl CapacityResult {
    pub const CSV_HEADER: &'static str = "p,N,t,h,box,capacity";
}

/// Default truncation box half-width: `4 diam(E) + 1`.
pub fn default_half_width(target: &CapacityTarget) -> f64 {
    4.0 * target.diameter() + 1.0
}

/// Grid of spacing `h` on a box of at least `half_width` around the target,
/// with the target's bounding center snapped to a node.
pub fn capacity_grid(target: &CapacityTarget, h: f64, half_width: Option<f64>) -> Result<Grid> {
    if !(h > 0.0) {
        return Err(invalid(format!("grid spacing must be positive, got {h}")));
    }
    let hw = half_width.unwrap_or_else(|| default_half_width(target));
    if !(hw > 0.0) {
        return Err(invalid(format!("box half-width must be positive, got {hw}")));
    }
    let cells = (hw / h - 1e-9).ceil() as usize;
    let origin = target
        .center()
        .iter()
        .map(|c| (c / h).round() * h - cells as f64 * h)
        .collect();
    Grid::with_spacing(origin, h, 2 * cells + 1)
}

/// Tolerance used by the capacity sweeps. Nodal gradients of a field of
/// unit size scale like `h^(N-2)`, so this is a relative residual of `1e-8`;
/// the energy error is quadratic in it.
pub fn default_capacity_config(grid: &Grid) -> SolverConfig {
    SolverConfig::default().with_tolerance(1e-8 * grid.h().powi(grid.dim() as i32 - 2))
}

/// Variational capacity of `target` on `grid`.
pub fn variational_capacity(
    target: &CapacityTarget,
    p: f64,
    grid: &Grid,
    config: &SolverConfig,
) -> Result<CapacityResult> {
    validate_exponent(p)?;
    config.validate(p)?;
    if target.dim() != grid.dim() {
        return Err(invalid("target and grid dimensions differ"));
    }
    let half_width = 0.5 * grid.side();
    if target.is_empty() {
        return Ok(CapacityResult {
            value: 0.0,
            box_half_width: half_width,
            grid_h: grid.h(),
            p,
            pinned_nodes: 0,
            iterations: 0,
        });
    }
    let mask = target.mask(grid)?;
    let pinned = mask.pinned_count();
    if pinned == 0 {
        return Err(Error::DegenerateTarget { h: grid.h() });
    }
    let mesh = Mesh::new(grid);
    let eps = config.effective_eps(p, 1.0);
    let prob = Problem {
        mesh: &mesh,
        mask: &mask,
        p,
        eps,
        absorption: 1.0,
        source: None,
    };
    let u0: Vec<f64> = mask.flags().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let out = minimize(&prob, u0, config, true)?;
    // J = (1/p) (int |grad u|^p + int |u|^p), so the capacity is p J.
    let exact = Problem { eps: 0.0, ..prob };
    let parts = exact.value(&out.u);
    Ok(CapacityResult {
        value: p * (parts.dirichlet + parts.absorption),
        box_half_width: half_width,
        grid_h: grid.h(),
        p,
        pinned_nodes: pinned,
        iterations: out.iterations,
    })
}

/// Capacity on the default box around the target at spacing `h`.
pub fn capacity_at(target: &CapacityTarget, p: f64, h: f64, half_width: Option<f64>) -> Result<CapacityResult> {
    let grid = capacity_grid(target, h, half_width)?;
    variational_capacity(target, p, &grid, &default_capacity_config(&grid))
}

/// One row of a segment-length sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub dim: usize,
    pub t: f64,
    pub result: CapacityResult,
}

impl SweepPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.6e},{:.12e}",
            self.result.p, self.dim, self.t, self.result.grid_h, self.result.box_half_width, self.result.value
        )
    }
}

/// Capacities of the segments `A_t` for every `t` at a common spacing `h`,
/// each on its default box unless `half_width` is given. Lengths above one
/// are rejected (the scaling laws assume `diam <= 1`).
pub fn segment_sweep(dim: usize, p: f64, ts: &[f64], h: f64, half_width: Option<f64>) -> Result<Vec<SweepPoint>> {
    if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(invalid(format!("segment lengths must lie in (0, 1], got {t}")));
    }
    ts.par_iter()
        .map(|&t| {
            let target = CapacityTarget::segment(dim, t)?;
            let result = capacity_at(&target, p, h, half_width)?;
            Ok(SweepPoint { dim, t, result })
        })
        .collect()
}

/// Capacity of a segment at spacing `h` and `h/2` on the same box.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementStudy {
    pub coarse: CapacityResult,
    pub fine: CapacityResult,
}

impl RefinementStudy {
    /// `capacity(h/2) / capacity(h)`.
    pub fn ratio(&self) -> f64 {
        self.fine.value / self.coarse.value
    }
}

pub fn refinement_study(target: &CapacityTarget, p: f64, h: f64, half_width: Option<f64>) -> Result<RefinementStudy> {
    let hw = half_width.unwrap_or_else(|| default_half_width(target));
    let (coarse, fine) = rayon::join(
        || capacity_at(target, p, h, Some(hw)),
        || capacity_at(target, p, 0.5 * h, Some(hw)),
    );
    Ok(RefinementStudy {
        coarse: coarse?,
        fine: fine?,
    })
}
