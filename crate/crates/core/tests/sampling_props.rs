use std::sync::Arc;

use biaspot_core::measures::density_from_potential;
use biaspot_core::model::sample_features;
use biaspot_core::sampling::{sample_grid_oracle, sample_langevin, LangevinConfig};
use biaspot_core::{Grid, GridDensity, Potential, SampleSet};

/// 99th percentile of the χ² law with 63 degrees of freedom.
const CHI2_63_Q99: f64 = 92.010;

fn star(d: usize, value: f64, seed: u64) -> Potential {
    Potential::constant(Arc::new(sample_features(d, 500, seed).unwrap()), value)
}

/// Mean of `f` over the samples with a batch-means standard error: each
/// chain's states are split into contiguous batches and the batch means are
/// treated as independent.
fn mcmc_mean(s: &SampleSet, chains: usize, batches_per_chain: usize, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let mut batch_means = Vec::new();
    for c in 0..chains {
        let vals: Vec<f64> = s.iter().skip(c).step_by(chains).map(&f).collect();
        let size = vals.len() / batches_per_chain;
        for b in vals.chunks_exact(size) {
            batch_means.push(b.iter().sum::<f64>() / b.len() as f64);
        }
    }
    let k = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / k;
    let var = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn marginal_histogram(s: &SampleSet, axis: usize, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for x in s.iter() {
        let b = (((x[axis] + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        h[b] += 1.0 / s.len() as f64;
    }
    h
}

/// Continuous CDF of the oracle law for a `d = 1` grid density.
fn grid_cdf(q: &GridDensity, x: f64) -> f64 {
    let p = q.grid().points_per_dim();
    let pos = ((x + 1.0) / 2.0 * p as f64).clamp(0.0, p as f64);
    let cell = (pos.floor() as usize).min(p - 1);
    q.mass()[..cell].iter().sum::<f64>() + q.mass()[cell] * (pos - cell as f64)
}

#[test]
fn langevin_without_potential_is_uniform_in_the_box() {
    let pot = Potential::zeros(Arc::new(sample_features(2, 10, 1).unwrap()));
    let cfg = LangevinConfig {
        seed: 3,
        ..LangevinConfig::default()
    };
    let s = sample_langevin(&pot, 10_000, &cfg).unwrap();
    assert!(s.points().iter().all(|x| (-1.0..=1.0).contains(x)));
    for axis in 0..2 {
        let (m1, e1) = mcmc_mean(&s, cfg.chains, 10, |x| x[axis]);
        assert!(m1.abs() <= 4.0 * e1, "axis {axis}: mean {m1} ± {e1}");
        let (m2, e2) = mcmc_mean(&s, cfg.chains, 10, |x| x[axis] * x[axis]);
        assert!(
            (m2 - 1.0 / 3.0).abs() <= 4.0 * e2,
            "axis {axis}: second moment {m2} ± {e2}"
        );
    }
}

#[test]
fn langevin_histogram_passes_chi_square_against_the_grid_density() {
    let pot = star(1, 50.0, 2);
    let q = density_from_potential(&pot, &Grid::new(1, 1024).unwrap()).unwrap();
    let n = 10_000;
    let s = sample_langevin(
        &pot,
        n,
        &LangevinConfig {
            seed: 8,
            ..LangevinConfig::default()
        },
    )
    .unwrap();
    let observed = marginal_histogram(&s, 0, 64);
    let chi2: f64 = (0..64)
        .map(|b| {
            let expected = q.mass()[b * 16..(b + 1) * 16].iter().sum::<f64>() * n as f64;
            (observed[b] * n as f64 - expected).powi(2) / expected
        })
        .sum();
    assert!(chi2 <= CHI2_63_Q99, "chi2 = {chi2}");
}

#[test]
fn oracle_on_uniform_density_is_centered() {
    let q = GridDensity::uniform(Grid::new(2, 16).unwrap());
    let s = sample_grid_oracle(&q, 10_000, 5).unwrap();
    for axis in 0..2 {
        let vals: Vec<f64> = s.iter().map(|x| x[axis]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 4.0 * sd / n.sqrt());
    }
}

#[test]
fn oracle_passes_kolmogorov_smirnov() {
    let q = density_from_potential(&star(1, 50.0, 4), &Grid::new(1, 1024).unwrap()).unwrap();
    let n = 10_000;
    let band = 1.63 / (n as f64).sqrt();
    let passes = (0..20u64)
        .filter(|&seed| {
            let mut xs = sample_grid_oracle(&q, n, seed).unwrap().points().to_vec();
            xs.sort_by(f64::total_cmp);
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = grid_cdf(&q, x);
                    (f - i as f64 / n as f64)
                        .abs()
                        .max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            ks <= band
        })
        .count();
    assert!(passes >= 18, "{passes}/20 within the KS band");
}

#[test]
fn langevin_agrees_with_oracle_in_one_and_two_dimensions() {
    for (d, p) in [(1usize, 1024usize), (2, 128)] {
        let pot = star(d, 50.0, 10 + d as u64);
        let q = density_from_potential(&pot, &Grid::new(d, p).unwrap()).unwrap();
        let a = sample_langevin(
            &pot,
            10_000,
            &LangevinConfig {
                seed: 1,
                ..LangevinConfig::default()
            },
        )
        .unwrap();
        let b = sample_grid_oracle(&q, 10_000, 1).unwrap();
        for axis in 0..d {
            let (ha, hb) = (marginal_histogram(&a, axis, 32), marginal_histogram(&b, axis, 32));
            let tv: f64 = ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
            assert!(tv <= 0.08, "d={d} axis {axis}: tv {tv}");
        }
    }
}

#[test]
fn chain_streams_do_not_depend_on_the_chain_count() {
    let pot = star(1, 50.0, 6);
    let cfg8 = LangevinConfig {
        seed: 2,
        burn_in: 100,
        ..LangevinConfig::default()
    };
    let cfg4 = LangevinConfig { chains: 4, ..cfg8 };
    let a = sample_langevin(&pot, 80, &cfg8).unwrap();
    let b = sample_langevin(&pot, 40, &cfg4).unwrap();
    for c in 0..4 {
        let from8: Vec<&[f64]> = a.iter().skip(c).step_by(8).collect();
        let from4: Vec<&[f64]> = b.iter().skip(c).step_by(4).collect();
        assert_eq!(from8, from4, "chain {c}");
    }
    assert_eq!(a, sample_langevin(&pot, 80, &cfg8).unwrap());
}
