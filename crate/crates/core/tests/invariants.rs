use std::sync::OnceLock;

use proptest::prelude::*;

use pcompliance_core::capacity::capacity_at;
use pcompliance_core::geometry::conjugate;
use pcompliance_core::poincare::{crack_cube, rayleigh_quotient};
use pcompliance_core::{
    best_poincare_constant, crack_grid_construction, flux, rasterize, rasterize_cracks_only, solve, CapacityTarget,
    ConstraintMask, ConstructionParams, CrackSet, Grid, GridField, PoincareOptions, PoincareResult, Segment,
    SolverConfig, Source,
};

fn unit_square(m: usize) -> Grid {
    Grid::cube(vec![0.0, 0.0], 1.0, m).unwrap()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 2)
}

fn segment() -> impl Strategy<Value = Segment> {
    (point(), point())
        .prop_filter("distinct endpoints", |(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]) > 1e-3)
        .prop_map(|(a, b)| Segment::new(a, b).unwrap())
}

fn crack_set(max: usize) -> impl Strategy<Value = CrackSet> {
    prop::collection::vec(segment(), 0..=max)
        .prop_filter_map("overlapping segments", |segs| CrackSet::new(2, segs).ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn construction_length_is_exact(
        n in 1usize..=24,
        eps in 0.01..0.99f64,
        half_width in 0.1..10.0f64,
        dim in 2usize..=3,
    ) {
        // Keep the dim = 3 grids small: the overlap check is quadratic.
        let n = if dim == 3 { 1 + n % 8 } else { n };
        let params = ConstructionParams::new(n, eps, half_width, dim, 2.0).unwrap();
        let cracks = crack_grid_construction(&params).unwrap();
        let expected = 2f64.powi(dim as i32) * half_width * eps;
        prop_assert_eq!(cracks.segments().len(), (2 * n).pow(dim as u32));
        prop_assert!((cracks.total_length() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn adding_a_segment_never_unpins(cracks in crack_set(4), extra in segment(), m in 3usize..40) {
        let grid = unit_square(m);
        let before = rasterize(&cracks, &grid).unwrap();
        let mut more = cracks.clone();
        prop_assume!(more.push(extra).is_ok());
        let after = rasterize(&more, &grid).unwrap();
        prop_assert!(before.is_subset_of(&after));
    }

    #[test]
    fn crack_nodes_are_exactly_those_within_half_a_cell(cracks in crack_set(3), m in 3usize..30) {
        let grid = unit_square(m);
        let mask = rasterize_cracks_only(&cracks, &grid).unwrap();
        for node in 0..grid.node_count() {
            let x = grid.coordinate(node);
            let d = cracks
                .segments()
                .iter()
                .map(|s| s.distance_to(&x))
                .fold(f64::INFINITY, f64::min);
            // Nodes at exactly h/2 may go either way by round-off.
            if (d - 0.5 * grid.h()).abs() > 1e-9 * grid.h() {
                prop_assert_eq!(mask.is_pinned(node), d < 0.5 * grid.h());
            }
        }
    }

    #[test]
    fn empty_crack_set_pins_only_the_boundary(m in 2usize..50, dim in 2usize..=3) {
        let grid = Grid::cube(vec![-1.0; dim], 2.0, m.min(20)).unwrap();
        let mask = rasterize(&CrackSet::empty(dim), &grid).unwrap();
        prop_assert_eq!(mask, ConstraintMask::boundary(&grid));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn more_pinning_never_raises_compliance(
        cracks in crack_set(3),
        extra in segment(),
        p in prop::sample::select(vec![1.5, 2.0, 3.0]),
    ) {
        let grid = unit_square(17);
        let mut more = cracks.clone();
        prop_assume!(more.push(extra).is_ok());
        let f = Source::Constant(1.0).sample(&grid);
        let cfg = SolverConfig::default();
        let (_, r1) = solve(&f, &grid, &rasterize(&cracks, &grid).unwrap(), p, &cfg).unwrap();
        let (_, r2) = solve(&f, &grid, &rasterize(&more, &grid).unwrap(), p, &cfg).unwrap();
        prop_assert!(r2.compliance_energy_form <= r1.compliance_energy_form * (1.0 + 1e-6) + 1e-12);
    }

    #[test]
    fn quadratic_compliance_scales_with_the_square(cracks in crack_set(2), c in 0.1..10.0f64) {
        let grid = unit_square(17);
        let mask = rasterize(&cracks, &grid).unwrap();
        let src = Source::bump(3.0, vec![0.3, 0.6], 0.2);
        let f = src.sample(&grid);
        let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
        let cfg = SolverConfig::default().with_tolerance(1e-11);
        let (_, r1) = solve(&f, &grid, &mask, 2.0, &cfg).unwrap();
        let (_, rc) = solve(&cf, &grid, &mask, 2.0, &cfg).unwrap();
        let expected = c * c * r1.compliance_energy_form;
        prop_assert!((rc.compliance_energy_form - expected).abs() <= 1e-8 * expected);
    }

    #[test]
    fn solutions_vanish_on_the_mask_and_satisfy_the_flux_identity(
        cracks in crack_set(3),
        p in prop::sample::select(vec![2.0, 2.5, 3.0]),
    ) {
        let grid = unit_square(17);
        let mask = rasterize(&cracks, &grid).unwrap();
        let f = Source::Constant(1.0).sample(&grid);
        let (u, report) = solve(&f, &grid, &mask, p, &SolverConfig::default()).unwrap();
        for node in 0..grid.node_count() {
            if mask.is_pinned(node) {
                prop_assert_eq!(u.values()[node], 0.0);
            }
        }
        prop_assert!(report.compliance_energy_form >= 0.0 && report.compliance_work_form >= 0.0);
        let sigma = flux(&u, p, 0.0).unwrap();
        let pp = conjugate(p);
        let flux_norm = sigma.norm_pow(pp);
        let expected = pp * report.compliance_energy_form;
        prop_assert!((flux_norm - expected).abs() <= 1e-12 * expected.max(1e-300));
        prop_assert!((report.flux_pnorm - expected).abs() <= 1e-12 * expected.max(1e-300));
    }
}

fn poincare_reference() -> &'static (GridField, PoincareResult) {
    static CELL: OnceLock<(GridField, PoincareResult)> = OnceLock::new();
    CELL.get_or_init(|| {
        let (grid, cracks) = crack_cube(2, 1.0, 0.5, 17).unwrap();
        let mask = rasterize_cracks_only(&cracks, &grid).unwrap();
        let r = best_poincare_constant(&grid, &mask, 2.0, &PoincareOptions::default()).unwrap();
        let flags = GridField::new(
            grid.clone(),
            mask.flags().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        (flags, r)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measured_poincare_constant_bounds_random_fields(values in prop::collection::vec(-1.0..1.0f64, 17 * 17)) {
        let (pinned, r) = poincare_reference();
        let w: Vec<f64> = values
            .iter()
            .zip(pinned.values())
            .map(|(v, flag)| if *flag == 1.0 { 0.0 } else { *v })
            .collect();
        prop_assume!(w.iter().any(|v| *v != 0.0));
        let field = GridField::new(pinned.grid().clone(), w).unwrap();
        let q = rayleigh_quotient(&field, 2.0).unwrap();
        // int |w|^p <= C int |grad w|^p is q >= 1 / C.
        prop_assert!(q * r.constant >= 1.0 - 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn capacity_is_translation_invariant(
        i in -5i32..=5,
        j in -5i32..=5,
        dx in -0.5..0.5f64,
        dy in -0.5..0.5f64,
    ) {
        let h = 0.04;
        let hw = Some(2.0);
        let base = CapacityTarget::segment(2, 0.5).unwrap();
        let reference = capacity_at(&base, 2.0, h, hw).unwrap().value;
        let CapacityTarget::Cracks(cracks) = &base else { unreachable!() };

        let aligned = CapacityTarget::Cracks(cracks.translated(&[i as f64 * h, j as f64 * h]));
        let shifted = capacity_at(&aligned, 2.0, h, hw).unwrap().value;
        prop_assert!((shifted - reference).abs() <= 1e-9 * reference);

        let moved = CapacityTarget::Cracks(cracks.translated(&[dx, dy]));
        let arbitrary = capacity_at(&moved, 2.0, h, hw).unwrap().value;
        prop_assert!((arbitrary - reference).abs() <= 0.05 * reference);
    }
}
