use std::sync::Arc;

use hjbreach_core::analysis::{extract_contours, mask, member, slice};
use hjbreach_core::dynamics::uniform_controls;
use hjbreach_core::oracle::{brute_force_value, OracleSettings};
use hjbreach_core::solver::{solve, SolverConfig};
use hjbreach_core::systems::SingleIntegrator;
use hjbreach_core::{
    integrate_step, optimal_control, simulate_closed_loop, stage_cost, Axis, CostSpec, FieldMeta,
    GridSpec, OutOfDomain, Problem, SystemModel, TargetBox, TargetSet, ValueField,
};
use proptest::prelude::*;

fn integrator_problem() -> Problem {
    Problem::new(
        SystemModel::new(
            Arc::new(SingleIntegrator),
            uniform_controls(-1.0, 1.0, 3),
            vec![None],
        )
        .unwrap(),
        CostSpec::min_time(),
        TargetSet::from_boxes(vec![TargetBox::new(vec![Some((-0.1, 0.1))])]),
    )
}

// node spacing 0.01 and unit speed with dt 0.05 keep every step on a node
fn integrator_field(steps: usize) -> ValueField {
    let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, 201)]).unwrap();
    solve(
        &integrator_problem(),
        &grid,
        &SolverConfig::fixed(0.05, steps).unwrap(),
    )
    .unwrap()
    .0
}

fn random_field(shape: &[usize], periodic_last: bool, values: &[f64]) -> ValueField {
    let axes = shape
        .iter()
        .enumerate()
        .map(|(d, &n)| {
            if periodic_last && d + 1 == shape.len() {
                Axis::periodic(0.0, 1.0, n)
            } else {
                Axis::new(-1.0, 1.0, n)
            }
        })
        .collect();
    let grid = GridSpec::new(axes).unwrap();
    let n = grid.node_count();
    ValueField::new(grid, values[..n].to_vec(), FieldMeta::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_is_exact_at_nodes(
        values in prop::collection::vec(-5.0f64..5.0, 5 * 6 * 4),
        i in 0usize..5, j in 0usize..6, k in 0usize..4,
    ) {
        let f = random_field(&[5, 6, 4], true, &values);
        let s = f.grid().node_coordinates(&[i, j, k]).unwrap();
        let v = f.interpolate(&s, OutOfDomain::Saturate).unwrap();
        prop_assert_eq!(v, f.value_at(&[i, j, k]).unwrap());
    }

    #[test]
    fn interpolation_stays_within_cell_range(
        values in prop::collection::vec(-5.0f64..5.0, 7 * 7),
        x in -1.0f64..1.0, y in -1.0f64..1.0,
    ) {
        let f = random_field(&[7, 7], false, &values);
        let v = f.interpolate(&[x, y], OutOfDomain::Saturate).unwrap();
        let (lo, hi) = f.enclosing_range(&[x, y], OutOfDomain::Saturate).unwrap().unwrap();
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn interpolation_is_periodic(
        values in prop::collection::vec(-5.0f64..5.0, 4 * 8),
        x in -1.0f64..1.0, t in 0.0f64..1.0, turns in -3i32..3,
    ) {
        let f = random_field(&[4, 8], true, &values);
        let a = f.interpolate(&[x, t], OutOfDomain::Saturate).unwrap();
        let b = f.interpolate(&[x, t + turns as f64], OutOfDomain::Saturate).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn slice_commutes_with_membership(
        values in prop::collection::vec(-5.0f64..5.0, 5 * 5 * 6),
        x in -1.0f64..1.0, y in -1.0f64..1.0, t in 0.0f64..1.0, j in -5.0f64..5.0,
    ) {
        let f = random_field(&[5, 5, 6], true, &values);
        let s2 = slice(&f, &[(2, t)]).unwrap();
        let direct = member(&f, &[x, y, t], j, OutOfDomain::Saturate).unwrap();
        let sliced = member(&s2, &[x, y], j, OutOfDomain::Saturate).unwrap();
        prop_assert!((direct.value - sliced.value).abs() < 1e-9);
        if (direct.value - j).abs() > 1e-9 {
            prop_assert_eq!(direct.inside, sliced.inside);
        }
    }

    #[test]
    fn contour_points_lie_on_the_level(
        values in prop::collection::vec(-5.0f64..5.0, 9 * 9),
        j in -4.0f64..4.0,
    ) {
        let f = random_field(&[9, 9], false, &values);
        let c = extract_contours(&f, j).unwrap();
        let range = f.max() - f.min();
        for p in c.polylines.iter().flatten() {
            let v = f.interpolate(p, OutOfDomain::Clamp).unwrap();
            prop_assert!((v - j).abs() <= 1e-6 * range.max(1.0), "{} vs {}", v, j);
        }
    }

    #[test]
    fn masks_nest(
        values in prop::collection::vec(-5.0f64..5.0, 6 * 6),
        a in -5.0f64..5.0, b in -5.0f64..5.0,
    ) {
        let f = random_field(&[6, 6], false, &values);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(mask(&f, lo).is_subset_of(&mask(&f, hi)));
    }

    #[test]
    fn extra_steps_leave_the_valid_region_unchanged(steps in 1usize..25) {
        let a = integrator_field(steps);
        let b = integrator_field(steps + 1);
        // saturated nodes sum m stage costs, which can round just below m * dt
        let bound = a.meta().horizon - 1e-9;
        for (va, vb) in a.values().iter().zip(b.values()) {
            prop_assert!(vb >= va);
            if *va < bound {
                prop_assert!((va - vb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn chosen_control_minimizes_the_candidate(node in 0usize..201) {
        let problem = integrator_problem();
        let f = integrator_field(20);
        let s = [f.grid().axis(0).node(node)];
        prop_assume!(!problem.target.contains(&s));
        let choice = optimal_control(&f, &problem, &s, OutOfDomain::Saturate).unwrap();
        for u in problem.model.controls() {
            let next = integrate_step(&problem.model, &s, u, 0.05).unwrap();
            let cand = stage_cost(&problem.costs, &s, u, 0.05)
                + f.interpolate(&next, OutOfDomain::Saturate).unwrap();
            prop_assert!(choice.value <= cand + 1e-12);
        }
    }

    #[test]
    fn closed_loop_cost_matches_prediction(x in -0.95f64..0.95) {
        let problem = integrator_problem();
        let f = integrator_field(20);
        let w = f.interpolate(&[x], OutOfDomain::Saturate).unwrap();
        prop_assume!(w < 0.9);
        let t = simulate_closed_loop(&f, &problem, &[x], 40, OutOfDomain::Saturate).unwrap();
        prop_assert!(t.reached_target);
        // interpolation can undershoot by at most one step
        prop_assert!(t.accumulated_cost <= w + 0.05 + 1e-9);
        let values: Vec<f64> = t
            .states
            .iter()
            .map(|s| f.interpolate(s, OutOfDomain::Saturate).unwrap())
            .collect();
        for pair in values.windows(2) {
            prop_assert!(pair[1] < pair[0] + 1e-12);
        }
    }

    #[test]
    fn solver_agrees_with_brute_force_at_nodes(node in 0usize..201) {
        let problem = integrator_problem();
        let f = integrator_field(6);
        let s = [f.grid().axis(0).node(node)];
        let r = brute_force_value(&problem, &s, &OracleSettings::new(6, 0.05)).unwrap();
        let w = f.value_at(&[node]).unwrap();
        match r.cost {
            Some(c) => prop_assert!((w - c).abs() < 1e-9, "node {}: {} vs {}", node, w, c),
            None => prop_assert!(w >= r.saturation - 1e-9),
        }
    }
}

#[test]
fn repeated_solves_are_bit_identical() {
    let a = integrator_field(10);
    let b = integrator_field(10);
    assert_eq!(a.digest(), b.digest());
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_serial_sweeps_agree() {
    let problem = integrator_problem();
    let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, 201)]).unwrap();
    let config = SolverConfig::fixed(0.05, 10).unwrap();
    let serial = solve(&problem, &grid, &config.clone().with_parallel(false)).unwrap().0;
    let parallel = solve(&problem, &grid, &config.with_parallel(true)).unwrap().0;
    assert_eq!(serial.digest(), parallel.digest());
}
