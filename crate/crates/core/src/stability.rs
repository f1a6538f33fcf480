//! Stability of the compliance under perturbations of the source.
//!
//! For sources `f1`, `f2` and a fixed crack set the compliances satisfy
//! `C(f1) <= 2^(p-1) C(f2) + A z(|f1 - f2|_q0)`, where `z` is the modulus
//! below and `A` depends only on `p`. The constant is not known explicitly,
//! so it is calibrated here on sampled pairs and then checked on others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{conjugate, rasterize, source_exponent, validate_exponent, ConstraintMask, CrackSet, Grid};
use crate::solver::{energy, solve_on_mesh, GridField, Mesh, SolverConfig};
use crate::source::{lq_norm, Source};

/// Which branch of the modulus `z` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZForm {
    /// `z(t) = t^p'` for `p >= 2`.
    ConjugatePower,
    /// `z(t) = (|f1|^p' + |f2|^p')^(2-p) t^p` for `1 < p < 2`.
    WeightedPower,
}

impl ZForm {
    pub fn for_exponent(p: f64) -> Self {
        if p >= 2.0 {
            ZForm::ConjugatePower
        } else {
            ZForm::WeightedPower
        }
    }
}

/// The modulus `z(t)`. `norms` holds `(|f1|_q0, |f2|_q0)` and is required
/// when `p < 2`.
pub fn z(t: f64, p: f64, norms: Option<(f64, f64)>) -> Result<f64> {
    validate_exponent(p)?;
    if !(t >= 0.0) {
        return Err(invalid(format!("z is defined for t >= 0, got {t}")));
    }
    let pp = conjugate(p);
    match ZForm::for_exponent(p) {
        ZForm::ConjugatePower => Ok(t.powf(pp)),
        ZForm::WeightedPower => {
            let (a, b) = norms.ok_or_else(|| invalid("z needs the source norms when p < 2"))?;
            Ok((a.powf(pp) + b.powf(pp)).powf(2.0 - p) * t.powf(p))
        }
    }
}

/// Both compliances of one source pair and the terms of the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeasurement {
    pub id: usize,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    /// `|f1 - f2|_q0`.
    pub distance: f64,
    pub z: f64,
    /// `int |grad u1 - grad u2|^p`.
    pub gradient_gap: f64,
}

impl PairMeasurement {
    /// `gradient_gap / z`, the constant needed in the underlying gradient
    /// estimate; `None` when `z = 0`.
    pub fn gradient_ratio(&self) -> Option<f64> {
        (self.z > 0.0).then(|| self.gradient_gap / self.z)
    }

    pub fn lhs(&self) -> f64 {
        self.c1
    }

    pub fn rhs(&self, a: f64) -> f64 {
        2f64.powf(self.p - 1.0) * self.c2 + a * self.z
    }

    /// Whether the estimate holds with constant `a`, allowing a relative
    /// round-off slack of `1e-9` on the compliances.
    pub fn satisfied(&self, a: f64) -> bool {
        self.lhs() <= self.rhs(a) + 1e-9 * self.c1.abs().max(self.c2.abs())
    }
}

/// Solves for both sources on `mask` and measures the estimate's terms.
pub fn measure_pair(
    id: usize,
    f1: &[f64],
    f2: &[f64],
    mesh: &Mesh,
    mask: &ConstraintMask,
    p: f64,
    config: &SolverConfig,
) -> Result<PairMeasurement> {
    let grid = mesh.grid();
    let q0 = source_exponent(grid.dim(), p);
    let (u1, r1) = solve_on_mesh(f1, mesh, mask, p, config)?;
    let (u2, r2) = if f1 == f2 {
        (u1.clone(), r1.clone())
    } else {
        solve_on_mesh(f2, mesh, mask, p, config)?
    };
    let diff: Vec<f64> = f1.iter().zip(f2).map(|(a, b)| a - b).collect();
    let distance = lq_norm(&diff, grid, q0);
    let norms = (lq_norm(f1, grid, q0), lq_norm(f2, grid, q0));
    let zv = z(distance, p, Some(norms))?;
    let w: Vec<f64> = u1.values().iter().zip(u2.values()).map(|(a, b)| a - b).collect();
    let zero = vec![0.0; w.len()];
    let gradient_gap = p * energy(&GridField::new(grid.clone(), w)?, &zero, p)?;
    Ok(PairMeasurement {
        id,
        p,
        c1: r1.compliance_energy_form,
        c2: r2.compliance_energy_form,
        distance,
        z: zv,
        gradient_gap,
    })
}

/// Single-pair check with a given constant.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub measurement: PairMeasurement,
    pub a: f64,
    pub satisfied: bool,
}

impl StabilityRow {
    pub const CSV_HEADER: &'static str = "pair,p,c1,c2,z,lhs,rhs,satisfied";

    pub fn csv_row(&self) -> String {
        let m = &self.measurement;
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            m.id,
            m.p,
            m.c1,
            m.c2,
            m.z,
            m.lhs(),
            m.rhs(self.a),
            self.satisfied
        )
    }
}

/// Solves both problems and checks the estimate with constant `a`.
pub fn check_stability(
    f1: &Source,
    f2: &Source,
    cracks: &CrackSet,
    p: f64,
    grid: &Grid,
    config: &SolverConfig,
    a: f64,
) -> Result<StabilityRow> {
    let mask = rasterize(cracks, grid)?;
    let mesh = Mesh::new(grid);
    let m = measure_pair(0, &f1.sample(grid), &f2.sample(grid), &mesh, &mask, p, config)?;
    Ok(StabilityRow {
        satisfied: m.satisfied(a),
        a,
        measurement: m,
    })
}

/// Calibrated constant and its held-out check.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityBound {
    pub p: f64,
    pub z_form: ZForm,
    /// Largest `int |grad u1 - grad u2|^p / z` on the calibration pairs.
    pub gradient_constant: f64,
    /// `A = 2^(p-1) * gradient_constant`.
    pub measured_a: f64,
    pub calibration: Vec<StabilityRow>,
    pub held_out: Vec<StabilityRow>,
    /// Held-out pairs violating the estimate.
    pub violations: usize,
}

/// Calibrates `A` from the gradient estimate that underlies the stability
/// inequality: the pointwise bound `|a|^p <= 2^(p-1) (|b|^p + |a - b|^p)`
/// turns `int |grad u1 - grad u2|^p <= C z` into the inequality with
/// `A = 2^(p-1) C`. `C` is the largest ratio seen on the calibration pairs.
pub fn calibrate(p: f64, calibration: Vec<PairMeasurement>, held_out: Vec<PairMeasurement>) -> Result<StabilityBound> {
    validate_exponent(p)?;
    let gradient_constant = calibration
        .iter()
        .filter_map(PairMeasurement::gradient_ratio)
        .fold(0.0f64, f64::max);
    let measured_a = 2f64.powf(p - 1.0) * gradient_constant;
    let rows = |ms: Vec<PairMeasurement>| -> Vec<StabilityRow> {
        ms.into_iter()
            .map(|m| StabilityRow {
                satisfied: m.satisfied(measured_a),
                a: measured_a,
                measurement: m,
            })
            .collect()
    };
    let calibration = rows(calibration);
    let held_out = rows(held_out);
    let violations = held_out.iter().filter(|r| !r.satisfied).count();
    Ok(StabilityBound {
        p,
        z_form: ZForm::for_exponent(p),
        gradient_constant,
        measured_a,
        calibration,
        held_out,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub p: f64,
    pub nodes_per_side: usize,
    pub pairs: usize,
    pub calibration_pairs: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            nodes_per_side: 65,
            pairs: 10,
            calibration_pairs: 5,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

/// The crack sets cycled through by the pair experiment on the unit square:
/// none, one horizontal segment, and the `n = 2` crack grid.
pub fn sample_crack_sets() -> Result<Vec<CrackSet>> {
    let segment = crate::geometry::axis_segment(&[0.5, 0.5], 0, 0.5)?;
    let grid_params = crate::construction::ConstructionParams::new(2, 0.4, 0.5, 2, 2.0)?;
    let crack_grid = crate::construction::crack_grid_construction(&grid_params)?.translated(&[0.5, 0.5]);
    Ok(vec![CrackSet::empty(2), CrackSet::single(segment), crack_grid])
}

/// Random smooth source pairs on `(0, 1)^2`, split into calibration and
/// held-out sets.
pub fn pair_experiment(config: &StabilityConfig) -> Result<StabilityBound> {
    validate_exponent(config.p)?;
    config.solver.validate(config.p)?;
    if config.calibration_pairs == 0 || config.calibration_pairs > config.pairs {
        return Err(invalid("need 1 <= calibration_pairs <= pairs"));
    }
    let grid = Grid::cube(vec![0.0, 0.0], 1.0, config.nodes_per_side)?;
    let mesh = Mesh::new(&grid);
    let crack_sets = sample_crack_sets()?;
    let masks = crack_sets
        .iter()
        .map(|c| rasterize(c, &grid))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sources: Vec<(Source, Source)> = (0..config.pairs)
        .map(|_| {
            (
                Source::random_smooth(&mut rng, &[0.0, 0.0], 1.0),
                Source::random_smooth(&mut rng, &[0.0, 0.0], 1.0),
            )
        })
        .collect();
    let measurements = sources
        .par_iter()
        .enumerate()
        .map(|(id, (f1, f2))| {
            let mask = &masks[id % masks.len()];
            measure_pair(
                id,
                &f1.sample(&grid),
                &f2.sample(&grid),
                &mesh,
                mask,
                config.p,
                &config.solver,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut calibration = measurements;
    let held_out = calibration.split_off(config.calibration_pairs);
    calibrate(config.p, calibration, held_out)
}

/// One level of the truncation sequence `f_m = clamp(f, -m, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRow {
    pub level: f64,
    /// `|f - f_m|_q0`.
    pub distance: f64,
    /// `A z(|f - f_m|_q0)`, the bound on the infimum of the compliance.
    pub bound: f64,
    pub compliance_f: f64,
    pub compliance_fm: f64,
    pub satisfied: bool,
}

/// Truncates `f` at each level and evaluates the stability bound with
/// constant `a` on the crack set `cracks`.
pub fn truncation_sequence(
    f: &Source,
    levels: &[f64],
    cracks: &CrackSet,
    grid: &Grid,
    p: f64,
    a: f64,
    config: &SolverConfig,
) -> Result<Vec<TruncationRow>> {
    if levels.iter().any(|m| !(*m > 0.0)) {
        return Err(invalid("truncation levels must be positive"));
    }
    let mask = rasterize(cracks, grid)?;
    let mesh = Mesh::new(grid);
    let samples = f.sample(grid);
    levels
        .par_iter()
        .map(|&level| {
            let truncated: Vec<f64> = samples.iter().map(|v| v.clamp(-level, level)).collect();
            let m = measure_pair(0, &samples, &truncated, &mesh, &mask, p, config)?;
            Ok(TruncationRow {
                level,
                distance: m.distance,
                bound: a * m.z,
                compliance_f: m.c1,
                compliance_fm: m.c2,
                satisfied: m.satisfied(a),
            })
        })
        .collect()
}
