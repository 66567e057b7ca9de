//! Drawing samples from `Q ∝ e^{-V}` on `[-1,1]^d`.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::measures::{GridDensity, SampleSet};
use crate::model::Potential;

/// Projected Langevin settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinConfig {
    pub step: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            step: 1e-3,
            burn_in: 5000,
            thinning: 10,
            chains: 8,
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid("langevin step must be positive"));
        }
        if self.burn_in == 0 || self.thinning == 0 || self.chains == 0 {
            return Err(invalid("burn_in, thinning and chains must be at least 1"));
        }
        Ok(())
    }
}

/// Runs one chain from the origin and returns `count` thinned states.
fn run_chain(pot: &Potential, cfg: &LangevinConfig, chain: usize, count: usize) -> Result<Vec<f64>> {
    let d = pot.d();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let noise = (2.0 * cfg.step).sqrt();
    let mut x = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut out = Vec::with_capacity(count * d);
    let total = cfg.burn_in + count * cfg.thinning;
    for it in 1..=total {
        pot.gradient_into(&x, &mut grad);
        for i in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            x[i] = (x[i] - cfg.step * grad[i] + noise * xi).clamp(-1.0, 1.0);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("langevin chain {chain} left the reals")));
        }
        if it > cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thinning) {
            out.extend_from_slice(&x);
        }
    }
    Ok(out)
}

/// Projected Langevin Monte Carlo:
/// `x ← clamp(x − η∇V(x) + √(2η) ξ)`, chains started at the origin.
///
/// Point `k` of the output is the `(k / chains)`-th kept state of chain
/// `k mod chains`, so the result does not depend on thread scheduling.
pub fn sample_langevin(pot: &Potential, n: usize, cfg: &LangevinConfig) -> Result<SampleSet> {
    cfg.validate()?;
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let d = pot.d();
    let chains = cfg.chains.min(n);
    let per_chain: Vec<usize> = (0..chains).map(|c| n / chains + usize::from(c < n % chains)).collect();
    let runs: Vec<Vec<f64>> = (0..chains)
        .into_par_iter()
        .map(|c| run_chain(pot, cfg, c, per_chain[c]))
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(n * d);
    for k in 0..n {
        let (c, r) = (k % chains, k / chains);
        points.extend_from_slice(&runs[c][r * d..(r + 1) * d]);
    }
    SampleSet::new(d, points, Some(cfg.seed))
}

/// Exact sampler for a grid density: a cell drawn with probability `q_i`, then
/// a uniform point inside that cell.
pub fn sample_grid_oracle(q: &GridDensity, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let grid = q.grid();
    let d = grid.d();
    let cells = WeightedIndex::new(q.mass()).map_err(|e| invalid(format!("bad density: {e}")))?;
    let half = grid.spacing() / 2.0;
    let jitter = Uniform::new_inclusive(-half, half).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n * d);
    let mut node = vec![0.0; d];
    for _ in 0..n {
        grid.point_into(cells.sample(&mut rng), &mut node);
        for &c in &node {
            points.push((c + jitter.sample(&mut rng)).clamp(-1.0, 1.0));
        }
    }
    SampleSet::new(d, points, Some(seed))
}
