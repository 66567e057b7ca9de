mod common;

use biaspot_core::dynamics::{
    evolve_measure, fixed_point_diagnostics, potential_flow_equivalence_check, velocity_field, DtPolicy, FlowOperator,
    MeasureFlowConfig,
};
use biaspot_core::model::{empirical_kernel, sample_features};
use biaspot_core::objectives::Target;
use biaspot_core::{Grid, GridDensity, SampleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_density(grid: Grid, seed: u64) -> GridDensity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridDensity::from_weights(grid, (0..grid.cells()).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap()
}

#[test]
fn velocity_matches_brute_force_double_sum() {
    let f = sample_features(1, 50, 3).unwrap();
    let grid = Grid::new(1, 8).unwrap();
    let q = random_density(grid, 1);
    let atoms = SampleSet::new(1, vec![-0.41, 0.66], None).unwrap();
    let field = velocity_field(&q, &Target::Empirical(atoms.clone()), &f).unwrap();
    for i in 0..8 {
        let x = grid.point(i);
        let toward: f64 = atoms.iter().map(|y| 0.5 * empirical_kernel(&f, &x, y).unwrap()).sum();
        let away: f64 = (0..8)
            .map(|l| q.mass()[l] * empirical_kernel(&f, &x, &grid.point(l)).unwrap())
            .sum();
        let v = toward - away;
        assert!(
            (field.v[i] - v).abs() <= 1e-10 * v.abs().max(1e-3),
            "node {i}: {} vs {v}",
            field.v[i]
        );
    }
}

#[test]
fn lyapunov_descent_and_mass_conservation_over_seeded_flows() {
    for seed in 0..10u64 {
        let (f, grid, q_star, atoms) = common::flow_setup(64, 200, 25, 40 + seed);
        let target = if seed % 2 == 0 {
            Target::Empirical(atoms)
        } else {
            Target::Population(q_star)
        };
        let q0 = random_density(grid, seed);
        let cfg = MeasureFlowConfig {
            steps: 500,
            ..MeasureFlowConfig::default()
        };
        let flow = evolve_measure(&q0, &target, &f, &cfg).unwrap();
        assert_eq!(flow.lyapunov_violations(1e-12), 0, "seed {seed}");
        assert!(
            flow.max_mass_drift <= 1e-12,
            "seed {seed}: drift {}",
            flow.max_mass_drift
        );
        assert!((flow.final_density.mass().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(flow.mmd_curve.last().unwrap() < flow.mmd_curve.first().unwrap());
    }
}

#[test]
fn fixed_step_within_the_curvature_limit_descends_without_rejections() {
    let (f, grid, _, atoms) = common::flow_setup(64, 200, 25, 7);
    let target = Target::Empirical(atoms);
    let op = FlowOperator::new(&grid, &target, &f).unwrap();
    let cfg = MeasureFlowConfig {
        dt: 1.0 / op.max_diagonal_kernel(),
        steps: 500,
        policy: DtPolicy::Fixed,
        ..MeasureFlowConfig::default()
    };
    let flow = evolve_measure(&GridDensity::uniform(grid), &target, &f, &cfg).unwrap();
    assert_eq!(flow.rejected, 0);
    assert_eq!(flow.lyapunov_violations(1e-12), 0);
}

#[test]
fn mass_in_charged_cells_decays_at_most_exponentially() {
    let (f, grid, _, atoms) = common::flow_setup(64, 200, 25, 8);
    let target = Target::Empirical(atoms);
    let kmax = FlowOperator::new(&grid, &target, &f).unwrap().max_diagonal_kernel();
    let q0 = random_density(grid, 8);
    let flow = evolve_measure(
        &q0,
        &target,
        &f,
        &MeasureFlowConfig {
            steps: 2000,
            ..Default::default()
        },
    )
    .unwrap();
    let horizon: f64 = flow.records.iter().map(|r| r.dt).sum();
    let floor = 1e-6 * (-4.0 * kmax * horizon).exp();
    for (m0, m1) in q0.mass().iter().zip(flow.final_density.mass()) {
        if *m0 >= 1e-6 {
            assert!(*m1 >= floor, "{m1} < {floor}");
        }
    }
}

#[test]
fn fixed_points_either_match_the_target_or_miss_its_atoms() {
    let (f, grid, q_star, atoms) = common::flow_setup(64, 200, 25, 9);

    let at_target = fixed_point_diagnostics(&q_star, &Target::Population(q_star.clone()), &f).unwrap();
    assert!(at_target.max_abs_vbar <= 1e-9);
    assert!(at_target.mmd_sq.sqrt() <= 1e-6);

    // A point mass away from every atom is stationary on its own support.
    let target = Target::Empirical(atoms.clone());
    let occupied: Vec<usize> = atoms.iter().map(|x| grid.cell_of(x)).collect();
    let free = (0..grid.cells())
        .find(|c| occupied.iter().all(|o| o.abs_diff(*c) > 2))
        .unwrap();
    let q = GridDensity::point_mass(grid, free).unwrap();
    let field = velocity_field(&q, &target, &f).unwrap();
    assert!(field.vbar[free].abs() <= 1e-9);
    let diag = fixed_point_diagnostics(&q, &target, &f).unwrap();
    assert!(diag.mmd_sq.sqrt() > 1e-6);
    assert!(diag.min_target_cell_mass <= 1e-6);
}

#[test]
fn potential_and_measure_flows_agree() {
    let (f, grid, _, atoms) = common::flow_setup(256, 500, 25, 12);
    let target = Target::Empirical(atoms);
    let report = potential_flow_equivalence_check(&f, &target, &grid, &vec![0.0; 500], 0.5, 200).unwrap();
    assert!(report.per_step[1] <= 1e-12, "first step {}", report.per_step[1]);
    assert!(report.max_deviation <= 1e-6, "{}", report.max_deviation);
}

#[test]
fn flows_started_at_the_target_stay_put() {
    let (f, grid, q_star, _) = common::flow_setup(64, 100, 5, 13);
    let target = Target::Population(q_star.clone());
    let star = vec![50.0; 100];
    let report = potential_flow_equivalence_check(&f, &target, &grid, &star, 0.5, 20).unwrap();
    assert!(report.max_deviation <= 1e-12);
    let flow = evolve_measure(
        &q_star,
        &target,
        &f,
        &MeasureFlowConfig {
            steps: 20,
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in flow.final_density.mass().iter().zip(q_star.mass()) {
        assert!((a - b).abs() <= 1e-15);
    }
}
