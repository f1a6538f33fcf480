//! The subcommands. Each writes its tables into the output directory and
//! returns the names of the checks that failed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};

use pcompliance_core::capacity::{segment_sweep, CapacityResult, SweepPoint};
use pcompliance_core::construction::{
    assemble_flux, check_resolution, connected_baseline, solve_all_cubes, ConstructionParams, VanishingConfig,
    VanishingRow,
};
use pcompliance_core::io::{flux_magnitude_svg, grid_field_svg, write_grid_field_csv, SCHEMA_LINE};
use pcompliance_core::poincare::{poincare_sweep, PoincareOptions, PoincareRow};
use pcompliance_core::stability::{pair_experiment, truncation_sequence, StabilityConfig, StabilityRow, TruncationRow};
use pcompliance_core::{
    build_grid, flux, log_law_fit, rasterize, scaling_fit, vanishing_sequence_experiment, ComplianceReport, CrackSet,
    Grid, ProblemSpec, Source,
};

use crate::config::ExperimentConfig;

pub type Runner = fn(&Context) -> Result<Vec<String>>;

pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    /// Directory of the config file; relative paths in it resolve here.
    pub base: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes a CSV table with the schema and seed preamble.
    fn write_table(&self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut text = format!("{SCHEMA_LINE}\n# seed={}\n{header}\n", self.config.seed);
        for row in rows {
            text.push_str(&row);
            text.push('\n');
        }
        write_file(&self.path(name), &text)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref()
        .with_context(|| format!("the config has no [{name}] section"))
}

pub fn solve(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let s = section(&cfg.solve, "solve")?;
    let pr = &cfg.problem;
    let spec = ProblemSpec::new(pr.p, pr.dim, pr.half_width)?.with_lambda(pr.lambda)?;
    let grid = build_grid(&spec, s.nodes_per_side)?;
    let cracks = cfg.solve_cracks(&ctx.base)?;
    let mask = rasterize(&cracks, &grid)?;
    let source = Source::parse(&s.source)?;
    let solver = cfg.solver_config()?;
    let (u, report) = pcompliance_core::solve(&source.sample(&grid), &grid, &mask, pr.p, &solver)?;
    let report = report.with_penalty(cracks.total_length(), pr.lambda);

    ctx.write_table("report.csv", ComplianceReport::CSV_HEADER, [report.csv_row()])?;
    let mut buf = Vec::new();
    write_grid_field_csv(&u, &mut buf)?;
    fs::write(ctx.path("u.csv"), buf)?;
    if s.svg {
        if pr.dim == 2 {
            write_file(&ctx.path("u.svg"), &grid_field_svg(&u, "u")?)?;
            let sigma = flux(&u, pr.p, report.regularization_eps)?;
            write_file(&ctx.path("sigma.svg"), &flux_magnitude_svg(&sigma, "|sigma|")?)?;
        } else {
            log::warn!("heatmaps are only drawn for dim = 2");
        }
    }
    for i in mask.invisible_segments() {
        log::warn!("segment {i} is shorter than the grid spacing and pins no node");
    }
    println!(
        "compliance {:.12e} (work form {:.12e}), penalized {:.12e}, iterations {}",
        report.compliance_energy_form, report.compliance_work_form, report.penalized_objective, report.iterations
    );

    let mut failed = Vec::new();
    if let Some(budget) = pr.length_budget {
        if cracks.total_length() > budget * (1.0 + 1e-12) {
            failed.push(format!(
                "crack length {} exceeds the budget {budget}",
                cracks.total_length()
            ));
        }
    }
    Ok(failed)
}

pub fn capacity_sweep(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let c = section(&cfg.capacity, "capacity")?;
    let (dim, p) = (cfg.problem.dim, cfg.problem.p);
    let header = format!("{SCHEMA_LINE}\n# seed={}\n{}\n", cfg.seed, CapacityResult::CSV_HEADER);
    if c.t.is_empty() {
        write_file(&ctx.path("capacity.csv"), &header)?;
        println!("empty sweep");
        return Ok(Vec::new());
    }
    let points = segment_sweep(dim, p, &c.t, c.h, c.box_half_width)?;
    ctx.write_table(
        "capacity.csv",
        CapacityResult::CSV_HEADER,
        points.iter().map(SweepPoint::csv_row),
    )?;

    let mut failed = Vec::new();
    let mut summary = String::new();
    let ts: Vec<f64> = points.iter().map(|s| s.t).collect();
    let caps: Vec<f64> = points.iter().map(|s| s.result.value).collect();
    if points.len() >= 3 {
        let power = scaling_fit(&ts, &caps)?;
        writeln!(
            summary,
            "power-law fit: slope {:.4}, r2 {:.5}, rss {:.4e}",
            power.slope, power.r2, power.rss
        )?;
        if let Some(target) = c.slope_target {
            let ok = (power.slope - target).abs() <= c.slope_tolerance;
            writeln!(
                summary,
                "slope target {target} +/- {}: {}",
                c.slope_tolerance,
                if ok { "ok" } else { "outside" }
            )?;
            if !ok {
                failed.push(format!(
                    "capacity slope {:.4} outside {target} +/- {}",
                    power.slope, c.slope_tolerance
                ));
            }
        }
        if p == dim as f64 {
            let log = log_law_fit(&ts, &caps, p)?;
            writeln!(
                summary,
                "log-law fit: c {:.4}, C {:.4}, exponent {:.4}, r2 {:.5}, rss {:.4e}",
                log.c, log.big_c, log.exponent, log.r2, log.rss
            )?;
            if log.rss >= power.rss {
                failed.push(format!(
                    "log law does not beat the power law (rss {:.3e} vs {:.3e})",
                    log.rss, power.rss
                ));
            }
        }
    } else {
        writeln!(summary, "fewer than 3 lengths, no fit")?;
    }
    print!("{summary}");
    write_file(&ctx.path("capacity_fit.txt"), &summary)?;
    Ok(failed)
}

fn vanishing_config(cfg: &ExperimentConfig) -> Result<VanishingConfig> {
    let v = section(&cfg.vanishing, "vanishing")?;
    let pr = &cfg.problem;
    Ok(VanishingConfig {
        n_list: v.n_list.clone(),
        epsilon: v.epsilon,
        p: pr.p,
        dim: pr.dim,
        half_width: pr.half_width,
        lambda: pr.lambda,
        source: Source::parse(&v.source)?,
        nodes_per_side: v.nodes_per_side,
        divergence_samples: v.divergence_samples,
        seed: cfg.seed,
        solver: cfg.solver_config()?,
        safety_factor: v.safety_factor,
        ..VanishingConfig::default()
    })
}

pub fn sweep_vanishing(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let v = section(&cfg.vanishing, "vanishing")?;
    let vc = vanishing_config(cfg)?;
    let report = vanishing_sequence_experiment(&vc)?;
    ctx.write_table(
        "vanishing.csv",
        VanishingRow::CSV_HEADER,
        report.rows.iter().map(VanishingRow::csv_row),
    )?;

    let mut failed = Vec::new();
    let mut summary = String::new();
    writeln!(summary, "{}", report.fit_summary())?;
    writeln!(summary, "limit of the penalized values: {:.12e}", report.limit())?;
    if let Some((n, e)) = &report.stopped {
        writeln!(summary, "stopped at n = {n}: {e}")?;
    }
    let expected_length = 2f64.powi(vc.dim as i32) * vc.half_width * vc.epsilon;
    for r in &report.rows {
        if (r.crack_length - expected_length).abs() > 1e-12 * expected_length {
            failed.push(format!(
                "n = {}: total crack length {} != {expected_length}",
                r.n, r.crack_length
            ));
        }
        if !r.divergence.passed() {
            failed.push(format!(
                "n = {}: divergence ratio {:.3e} above {:.3e}",
                r.n, r.divergence.max_ratio, r.divergence.bound
            ));
        }
    }
    if !report.bound_satisfied() {
        failed.push(format!("flux exceeds {} x the calibrated bound", report.safety_factor));
    }
    writeln!(
        summary,
        "flux strictly decreasing: {}",
        if report.flux_strictly_decreasing() { "yes" } else { "no" }
    )?;

    if v.baseline_nodes_per_side > 0 && report.rows.last().is_some() {
        let last = report.rows.last().unwrap();
        match connected_baseline(
            vc.dim,
            vc.half_width,
            expected_length,
            &vc.source,
            vc.p,
            v.baseline_nodes_per_side,
            vc.lambda,
            &vc.solver,
        ) {
            Ok(base) => writeln!(
                summary,
                "connected segment of the same length: penalized {:.6e}; crack grid at n = {}: {:.6e} ({})",
                base.penalized_objective,
                last.n,
                last.penalized_value,
                if last.penalized_value < base.penalized_objective {
                    "grid wins"
                } else {
                    "segment wins"
                }
            )?,
            Err(e) => writeln!(summary, "connected baseline skipped: {e}")?,
        }
    }
    if v.svg && vc.dim == 2 {
        if let Some(last) = report.rows.last() {
            let params = ConstructionParams::new(last.n, vc.epsilon, vc.half_width, vc.dim, vc.p)?;
            check_resolution(&params, vc.nodes_per_side, vc.min_nodes_per_side, vc.min_crack_cells)?;
            let locals = solve_all_cubes(&params, &vc.source, vc.nodes_per_side, &vc.solver)?;
            let eps = locals[0].report.regularization_eps;
            let assembled = assemble_flux(&params, &locals, &vc.source, eps)?;
            let title = format!("|sigma_n|, n = {}", last.n);
            write_file(&ctx.path("sigma.svg"), &flux_magnitude_svg(&assembled.flux, &title)?)?;
        }
    }
    print!("{summary}");
    write_file(&ctx.path("vanishing_summary.txt"), &summary)?;
    Ok(failed)
}

pub fn poincare(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let pc = section(&cfg.poincare, "poincare")?;
    let p = cfg.problem.p;
    let options = PoincareOptions {
        solver: cfg.solver_config()?,
        ..PoincareOptions::default()
    };
    let rows = if pc.delta.is_empty() || pc.a.is_empty() {
        Vec::new()
    } else {
        poincare_sweep(cfg.problem.dim, p, &pc.delta, &pc.a, pc.nodes_per_side, &options)?
    };
    ctx.write_table(
        "poincare.csv",
        PoincareRow::CSV_HEADER,
        rows.iter().map(PoincareRow::csv_row),
    )?;

    let mut failed = Vec::new();
    // Rows come grouped by `a`, each group in the order of `delta`.
    for group in rows.chunks(pc.delta.len().max(1)) {
        for w in group.windows(2) {
            let ratio = w[1].result.delta / w[0].result.delta;
            if (ratio - 2.0).abs() > 1e-12 {
                continue;
            }
            let observed = w[1].result.constant / w[0].result.constant;
            let rel = (observed / 2f64.powf(p) - 1.0).abs();
            println!(
                "a = {}: delta {} -> {}: constant ratio {observed:.6} (2^p = {:.6})",
                w[0].a,
                w[0].result.delta,
                w[1].result.delta,
                2f64.powf(p)
            );
            if rel > pc.doubling_tolerance {
                failed.push(format!(
                    "a = {}: doubling delta from {} scaled the constant by {observed:.4}",
                    w[0].a, w[0].result.delta
                ));
            }
        }
    }
    for &delta in &pc.delta {
        let products: Vec<f64> = rows
            .iter()
            .filter(|r| r.result.delta == delta)
            .map(PoincareRow::normalized_product)
            .collect();
        if products.len() < 2 {
            continue;
        }
        let hi = products.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = products.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "delta = {delta}: constant * capacity / delta^p in [{lo:.6}, {hi:.6}], spread {:.4}",
            hi / lo
        );
        if hi > pc.capacity_factor * lo {
            failed.push(format!(
                "delta = {delta}: constant * capacity varies by {:.3} > {}",
                hi / lo,
                pc.capacity_factor
            ));
        }
    }
    Ok(failed)
}

pub fn stability(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let st = section(&cfg.stability, "stability")?;
    let p = cfg.problem.p;
    let solver = cfg.solver_config()?;
    let mut failed = Vec::new();
    let mut a = 0.0;
    if st.pairs > 0 {
        let bound = pair_experiment(&StabilityConfig {
            p,
            nodes_per_side: st.nodes_per_side,
            pairs: st.pairs,
            calibration_pairs: st.calibration_pairs,
            seed: cfg.seed,
            solver: solver.clone(),
        })?;
        a = bound.measured_a;
        let rows = bound
            .calibration
            .iter()
            .chain(&bound.held_out)
            .map(StabilityRow::csv_row);
        ctx.write_table("stability.csv", StabilityRow::CSV_HEADER, rows)?;
        println!(
            "A = {:.6e} ({:?}), held-out violations {}/{}",
            a,
            bound.z_form,
            bound.violations,
            bound.held_out.len()
        );
        if bound.violations > 0 {
            failed.push(format!(
                "{} held-out pairs violate the calibrated estimate",
                bound.violations
            ));
        }
    } else {
        ctx.write_table("stability.csv", StabilityRow::CSV_HEADER, std::iter::empty())?;
    }
    if !st.truncation_levels.is_empty() {
        if st.pairs == 0 {
            bail!("the truncation sequence needs calibration pairs to fix A");
        }
        let grid = Grid::cube(vec![0.0, 0.0], 1.0, st.nodes_per_side)?;
        let f = Source::parse(&st.truncation_source)?;
        let rows = truncation_sequence(&f, &st.truncation_levels, &CrackSet::empty(2), &grid, p, a, &solver)?;
        ctx.write_table(
            "truncation.csv",
            "level,distance,bound,compliance_f,compliance_fm,satisfied",
            rows.iter().map(truncation_row),
        )?;
        // A is calibrated on smooth pairs; concentrated truncation
        // differences may exceed it, so this is reported, not checked.
        let violations = rows.iter().filter(|r| !r.satisfied).count();
        println!(
            "truncation levels: {}, levels above the calibrated estimate {violations}",
            rows.len()
        );
        if rows.windows(2).any(|w| w[1].bound > w[0].bound) {
            failed.push("truncation bound is not non-increasing".into());
        }
    }
    Ok(failed)
}

fn truncation_row(r: &TruncationRow) -> String {
    format!(
        "{},{:.12e},{:.12e},{:.12e},{:.12e},{}",
        r.level, r.distance, r.bound, r.compliance_f, r.compliance_fm, r.satisfied
    )
}
