use std::sync::Arc;

use biaspot_core::measures::{
    density_from_potential, expectation_on_samples, kl_divergence, log_partition, log_partition_lipschitz_check,
    mmd_sq, mmd_sq_between, MeasureRef,
};
use biaspot_core::model::{empirical_kernel, sample_features, Activation, FeatureSet};
use biaspot_core::{Grid, GridDensity, Potential, SampleSet, SignedGridMeasure};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn relu(d: usize) -> Potential {
    let mut row = vec![0.0; d + 1];
    row[0] = 1.0;
    let f = FeatureSet::from_rows(d, &[row], 0, Activation::Relu).unwrap();
    Potential::new(Arc::new(f), vec![1.0]).unwrap()
}

fn random_density(grid: Grid, seed: u64) -> GridDensity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridDensity::from_weights(grid, (0..grid.cells()).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
}

fn closed_form_log_z() -> f64 {
    (1.0 - 0.5 * (-1.0f64).exp()).ln()
}

#[test]
fn relu_log_partition_converges_under_refinement() {
    let pot = relu(1);
    let exact = closed_form_log_z();
    let err = |p: usize| (log_partition(&pot, &Grid::new(1, p).unwrap()).unwrap() - exact).abs();
    assert!(err(4096) < 1e-5);
    assert!(err(1024) < err(512));
    assert!(err(4096) < err(1024));
}

#[test]
fn relu_kl_against_uniform_matches_closed_form() {
    let grid = Grid::new(1, 4096).unwrap();
    let q = density_from_potential(&relu(1), &grid).unwrap();
    let z = 1.0 - 0.5 * (-1.0f64).exp();
    let ev = (1.0 - 2.0 * (-1.0f64).exp()) / (2.0 * z);
    let exact = -ev - z.ln();
    let kl = kl_divergence(&q, &GridDensity::uniform(grid)).unwrap();
    assert!((kl - exact).abs() < 1e-4, "{kl} vs {exact}");
}

#[test]
fn kl_is_asymmetric_and_nonnegative() {
    let grid = Grid::new(1, 64).unwrap();
    let p = random_density(grid, 1);
    let q = random_density(grid, 2);
    let pq = kl_divergence(&p, &q).unwrap();
    let qp = kl_divergence(&q, &p).unwrap();
    assert!(pq > 0.0 && qp > 0.0);
    assert!((pq - qp).abs() > 1e-6);
    let empty = GridDensity::point_mass(grid, 3).unwrap();
    assert_eq!(kl_divergence(&p, &empty).unwrap(), f64::INFINITY);
    assert_eq!(kl_divergence(&empty, &p).unwrap(), -p.mass()[3].ln());
}

#[test]
fn relu_feature_sample_mean_is_a_quarter() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let s = SampleSet::new(1, pts.clone(), None).unwrap();
    let f = |x: &[f64]| x[0].max(0.0);
    let mean = expectation_on_samples(f, &s).unwrap();
    let var = pts.iter().map(|x| (x.max(0.0) - mean).powi(2)).sum::<f64>() / 999.0;
    assert!((mean - 0.25).abs() <= 3.0 * (var / 1000.0).sqrt(), "{mean}");
    assert!(expectation_on_samples(f, &SampleSet::new(1, vec![], None).unwrap()).is_err());
}

fn brute_force_mmd(atoms: &[(Vec<f64>, f64)], f: &FeatureSet) -> f64 {
    let mut total = 0.0;
    for (x, wx) in atoms {
        for (y, wy) in atoms {
            total += wx * wy * empirical_kernel(f, x, y).unwrap();
        }
    }
    total
}

#[test]
fn embedding_mmd_matches_double_sum() {
    let f = sample_features(1, 80, 5).unwrap();
    let grid = Grid::new(1, 16).unwrap();
    let p = random_density(grid, 7);
    let q = random_density(grid, 8);
    let s = SampleSet::new(1, vec![-0.9, -0.2, 0.31, 0.77, 0.5], None).unwrap();

    let mut grid_vs_grid = Vec::new();
    let mut grid_vs_samples = Vec::new();
    for i in 0..grid.cells() {
        let x = grid.point(i);
        grid_vs_grid.push((x.clone(), p.mass()[i] - q.mass()[i]));
        grid_vs_samples.push((x, p.mass()[i]));
    }
    for x in s.iter() {
        grid_vs_samples.push((x.to_vec(), -1.0 / s.len() as f64));
    }

    let cases = [
        (
            mmd_sq_between(MeasureRef::Grid(&p), MeasureRef::Grid(&q), &f).unwrap(),
            brute_force_mmd(&grid_vs_grid, &f),
        ),
        (
            mmd_sq_between(MeasureRef::Grid(&p), MeasureRef::Samples(&s), &f).unwrap(),
            brute_force_mmd(&grid_vs_samples, &f),
        ),
    ];
    for (fast, slow) in cases {
        assert!((fast - slow).abs() <= 1e-10 * slow.abs(), "{fast} vs {slow}");
    }
    let t = SampleSet::new(1, vec![0.1, 0.2], None).unwrap();
    let mut atoms: Vec<(Vec<f64>, f64)> = s.iter().map(|x| (x.to_vec(), 0.2)).collect();
    atoms.extend(t.iter().map(|x| (x.to_vec(), -0.5)));
    let fast = mmd_sq_between(MeasureRef::Samples(&s), MeasureRef::Samples(&t), &f).unwrap();
    assert!((fast - brute_force_mmd(&atoms, &f)).abs() <= 1e-10 * fast);
}

#[test]
fn mmd_is_positive_for_nonzero_measures_when_features_outnumber_cells() {
    let f = sample_features(1, 400, 2).unwrap();
    let grid = Grid::new(1, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let mass: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = SignedGridMeasure::new(grid, mass).unwrap();
        assert!(mmd_sq(&[(1.0, MeasureRef::Signed(&mu))], &f).unwrap() > 0.0);
    }
    let zero = SignedGridMeasure::new(grid, vec![0.0; 32]).unwrap();
    assert_eq!(mmd_sq(&[(1.0, MeasureRef::Signed(&zero))], &f).unwrap(), 0.0);
}

#[test]
fn log_partition_is_lipschitz_for_random_pairs() {
    let f = Arc::new(sample_features(2, 60, 3).unwrap());
    let grid = Grid::new(2, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(-30.0..30.0)).collect();
        let b: Vec<f64> = (0..60).map(|_| rng.random_range(-30.0..30.0)).collect();
        let (gap, bound) = log_partition_lipschitz_check(
            &Potential::new(f.clone(), a).unwrap(),
            &Potential::new(f.clone(), b).unwrap(),
            &grid,
        )
        .unwrap();
        assert!(gap <= bound + 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn densities_are_normalized_and_kl_is_nonnegative(seed in 0u64..10_000, scale in 0.0f64..80.0, d in 1usize..3) {
        let f = Arc::new(sample_features(d, 30, seed).unwrap());
        let a: Vec<f64> = (0..30).map(|j| scale * ((j as f64) * 0.91 + seed as f64).sin()).collect();
        let grid = Grid::new(d, 24).unwrap();
        let p = density_from_potential(&Potential::new(f.clone(), a).unwrap(), &grid).unwrap();
        let q = density_from_potential(&Potential::constant(f, 1.0), &grid).unwrap();
        prop_assert!((p.mass().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        let kl = kl_divergence(&p, &q).unwrap();
        prop_assert!(kl >= -1e-12);
        let max_diff = p.mass().iter().zip(q.mass()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if max_diff > 1e-6 {
            prop_assert!(kl > 0.0);
        }
    }
}
