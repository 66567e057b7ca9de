#![allow(dead_code)]

use std::sync::Arc;

use biaspot_core::model::{sample_features, sample_features_with, Activation, TwoLayerNet};
use biaspot_core::objectives::{grad_backward, grad_forward, loss_backward, loss_forward, Target};
use biaspot_core::sampling::sample_grid_oracle;
use biaspot_core::training::{two_layer_gradient, two_layer_loss};
use biaspot_core::{measures::density_from_potential, Grid, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so that vanishing partials compare absolutely.
pub fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

/// A random configuration: potential with `m` coefficients drawn in
/// `[-scale, scale]`, an empirical target of 40 points from a different
/// potential, and a grid.
pub fn random_config(seed: u64, d: usize, m: usize, scale: f64) -> (Potential, Target, Grid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Arc::new(sample_features(d, m, seed).unwrap());
    let grid = Grid::new(d, if d == 1 { 256 } else { 32 }).unwrap();
    let a: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();
    let star = Potential::new(f.clone(), b).unwrap();
    let q = density_from_potential(&star, &grid).unwrap();
    let samples = sample_grid_oracle(&q, 40, seed ^ 0xabc).unwrap();
    (Potential::new(f, a).unwrap(), Target::Empirical(samples), grid)
}

fn partial<F: Fn(&Potential) -> f64>(loss: F, pot: &Potential, j: usize) -> f64 {
    let mut plus = pot.coeffs().to_vec();
    let mut minus = plus.clone();
    plus[j] += FD_STEP;
    minus[j] -= FD_STEP;
    (loss(&pot.with_coeffs(plus).unwrap()) - loss(&pot.with_coeffs(minus).unwrap())) / (2.0 * FD_STEP)
}

/// Largest relative error of `g_j / m` against central differences of `L⁻`
/// over `configs` random configurations (one random coordinate each).
pub fn max_backward_fd_error(configs: usize) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let d = 1 + (c as usize % 2);
        let (pot, target, grid) = random_config(100 + c, d, 20, 30.0);
        let j = (c as usize * 7) % pot.m();
        let g = grad_backward(&pot, &target, &grid).unwrap();
        let fd = partial(|p| loss_backward(p, &target, &grid).unwrap(), &pot, j);
        worst = worst.max(rel_err(fd, g.g[j] / pot.m() as f64));
    }
    worst
}

pub fn max_forward_fd_error(configs: usize) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let d = 1 + (c as usize % 2);
        let (pot, target, grid) = random_config(200 + c, d, 20, 30.0);
        let j = (c as usize * 5 + 3) % pot.m();
        let g = grad_forward(&pot, &target, &grid).unwrap();
        let fd = partial(|p| loss_forward(p, &target, &grid).unwrap(), &pot, j);
        worst = worst.max(rel_err(fd, g.g[j] / pot.m() as f64));
    }
    worst
}

/// Random smoothed-ReLU two-layer configuration, `d = 1`.
pub fn random_two_layer(seed: u64, m: usize) -> (TwoLayerNet, Target, Grid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = Activation::SmoothedRelu { beta: 10.0 };
    let f = sample_features_with(1, m, seed, act).unwrap();
    let a: Vec<f64> = (0..m).map(|_| rng.random_range(-20.0..20.0)).collect();
    let net = TwoLayerNet::from_features(&f, &a, 10.0).unwrap();
    let (_, target, grid) = random_config(seed + 1, 1, m, 30.0);
    (net, target, grid)
}

/// Largest relative error of every coordinate of one particle's velocity
/// against `m` times central differences of `L⁻`.
pub fn max_two_layer_fd_error(configs: usize) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..configs as u64 {
        let (net, target, grid) = random_two_layer(300 + c, 15);
        let (vel, _, _) = two_layer_gradient(&net, &target, &grid).unwrap();
        let k = net.d() + 2;
        let j = c as usize % net.m();
        for i in 0..k {
            let idx = j * k + i;
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.particles_mut()[idx] += FD_STEP;
            minus.particles_mut()[idx] -= FD_STEP;
            let fd = (two_layer_loss(&plus, &target, &grid).unwrap() - two_layer_loss(&minus, &target, &grid).unwrap())
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(fd * net.m() as f64, vel[idx]));
        }
    }
    worst
}

/// Population-target gradient descent from `a = 0` toward `a_* ≡ value`;
/// returns the number of checkpoints with
/// `KL > 1.1 · ‖a_*‖² / (2 t)`, `t = step · η`, and the checkpoint count.
pub fn trainability_violations(value: f64, seed: u64, steps: usize) -> (usize, usize) {
    use biaspot_core::training::{train, Schedule, TrainConfig};
    let f = Arc::new(sample_features(1, 500, seed).unwrap());
    let grid = Grid::default_for(1).unwrap();
    let star = Potential::constant(f.clone(), value);
    let q = density_from_potential(&star, &grid).unwrap();
    let cfg = TrainConfig {
        steps,
        reference: Some(q.clone()),
        schedule: Schedule::log_default(),
        ..TrainConfig::default()
    };
    let traj = train(&Potential::zeros(f), &Target::Population(q), &grid, &cfg).unwrap();
    let a_sq = star.rkhs_norm().powi(2);
    let bad = traj
        .checkpoints
        .iter()
        .filter(|c| c.step > 0)
        .filter(|c| c.test_kl.unwrap() > 1.1 * a_sq / (2.0 * c.step as f64 * cfg.step_size))
        .count();
    (bad, traj.checkpoints.len())
}

/// Features, grid and `a_* ≡ 50` density for the measure-flow checks, plus
/// `n` atoms drawn from that density.
pub fn flow_setup(
    p: usize,
    m: usize,
    n: usize,
    seed: u64,
) -> (
    biaspot_core::FeatureSet,
    Grid,
    biaspot_core::GridDensity,
    biaspot_core::SampleSet,
) {
    let f = Arc::new(sample_features(1, m, seed).unwrap());
    let grid = Grid::new(1, p).unwrap();
    let q = density_from_potential(&Potential::constant(f.clone(), 50.0), &grid).unwrap();
    let atoms = sample_grid_oracle(&q, n, seed + 1).unwrap();
    ((*f).clone(), grid, q, atoms)
}
