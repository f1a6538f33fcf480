//! Numerical laboratory for the p-compliance of crack sets in a box.
//!
//! The crate minimizes discrete p-Dirichlet energies on uniform grids with
//! nodes pinned on crack sets, estimates variational capacities of segments
//! and points, measures capacity-Poincaré constants, and builds the grids of
//! shrinking cracks whose compliance vanishes while their total length stays
//! fixed.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod construction;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod poincare;
pub mod solver;
pub mod source;
pub mod stability;

pub use capacity::{variational_capacity, CapacityResult, CapacityTarget};
pub use construction::{
    crack_grid_construction, vanishing_sequence_experiment, ConstructionParams, VanishingConfig,
    VanishingSequenceReport,
};
pub use error::{Error, Result};
pub use fit::{log_law_fit, scaling_fit, LinearFit, LogLawFit};
pub use geometry::{
    build_grid, rasterize, rasterize_cracks_only, total_length, ConstraintMask, CrackSet, Grid, ProblemSpec, Segment,
};
pub use poincare::{best_poincare_constant, PoincareOptions, PoincareResult};
pub use solver::{energy, energy_gradient, flux, solve, ComplianceReport, FluxField, GridField, Method, SolverConfig};
pub use source::Source;
pub use stability::{check_stability, z, StabilityBound};
