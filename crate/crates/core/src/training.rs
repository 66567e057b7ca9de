//! Gradient-flow training of random-feature potentials and two-layer nets.
//!
//! Coefficient updates use the functional gradient `g` of
//! [`objectives`](crate::objectives): gradient descent is `a ← a − η g`, so a
//! step size `η` here corresponds to a parameter-space learning rate `η·m`.
//! Continuous training time is `t = step · η`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, invalid, Error, Result};
use crate::measures::{kl_masses, Grid, GridDensity};
use crate::model::{rkhs_norm, ActivationTable, FeatureSet, Potential, TwoLayerNet};
use crate::numeric;
use crate::objectives::{BackwardObjective, Target};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Gd,
    /// Minibatches drawn with replacement from an empirical target.
    Sgd {
        batch: usize,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd() -> Self {
        Optimizer::Sgd { batch: 32 }
    }
}

/// When checkpoints are recorded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    /// Every `eval_every` steps, plus the last step.
    Regular,
    /// Every step up to `dense_until`, then steps growing by `ratio`.
    DenseThenGeometric { dense_until: usize, ratio: f64 },
}

impl Schedule {
    pub fn log_default() -> Self {
        Schedule::DenseThenGeometric {
            dense_until: 100,
            ratio: 1.1,
        }
    }
}

/// Ends a run once test KL has clearly turned upward: stop when
/// `kl ≥ rise_factor · best` and `step ≥ min_step_ratio · best_step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub rise_factor: f64,
    pub min_step_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub step_size: f64,
    pub steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Radius `R` of the `‖a‖_{L²(ρ₀)} ≤ R` ball for projected training.
    pub projection_radius: Option<f64>,
    /// Population density used to log `KL(reference‖Q_t)` at checkpoints.
    pub reference: Option<GridDensity>,
    pub schedule: Schedule,
    /// Steps at which coefficients are kept.
    pub snapshot_steps: Vec<usize>,
    /// Keep coefficients at every checkpoint.
    pub snapshot_checkpoints: bool,
    pub stop_rule: Option<StopRule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Gd,
            step_size: 0.5,
            steps: 1000,
            eval_every: 10,
            seed: 0,
            projection_radius: None,
            reference: None,
            schedule: Schedule::Regular,
            snapshot_steps: Vec::new(),
            snapshot_checkpoints: false,
            stop_rule: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size must be positive"));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be at least 1"));
        }
        if self.projection_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(invalid("projection radius must be positive"));
        }
        match self.optimizer {
            Optimizer::Sgd { batch: 0 } => return Err(invalid("sgd batch must be at least 1")),
            Optimizer::Adam { beta1, beta2, eps }
                if (!(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0)) =>
            {
                return Err(invalid("adam needs beta1, beta2 in [0,1) and eps > 0"));
            }
            _ => {}
        }
        if let Schedule::DenseThenGeometric { ratio, .. } = self.schedule {
            if !(ratio > 1.0) {
                return Err(invalid("geometric checkpoint ratio must exceed 1"));
            }
        }
        Ok(())
    }

    /// Checkpoint steps in increasing order; always ends at `steps`.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        let mut out = Vec::new();
        match self.schedule {
            Schedule::Regular => {
                let mut s = self.eval_every;
                while s < self.steps {
                    out.push(s);
                    s += self.eval_every;
                }
            }
            Schedule::DenseThenGeometric { dense_until, ratio } => {
                let mut s = 1usize;
                while s < self.steps {
                    out.push(s);
                    s = if s < dense_until {
                        s + 1
                    } else {
                        ((s as f64 * ratio - 1e-9).ceil() as usize).max(s + 1)
                    };
                }
            }
        }
        out.push(self.steps);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    StoppedEarly,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "ok",
            RunStatus::StoppedEarly => "stopped",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub train_loss: f64,
    pub test_kl: Option<f64>,
    pub rkhs_norm: f64,
    /// Seconds since the start of the run; not part of any export.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    /// Final coefficients, or the flattened particles for a two-layer run.
    pub final_coeffs: Vec<f64>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub status: RunStatus,
    /// Checkpoints at which a full-batch population loss went up.
    pub loss_increases: usize,
}

impl Trajectory {
    pub fn snapshot(&self, step: usize) -> Option<&[f64]> {
        self.snapshots
            .iter()
            .find(|(s, _)| *s == step)
            .map(|(_, c)| c.as_slice())
    }

    pub fn checkpoint(&self, step: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.step == step)
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    /// CSV `step,train_loss,test_kl,rkhs_norm,status`. The status column is
    /// `ok` on every row but the last, which carries the run status.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "train_loss", "test_kl", "rkhs_norm", "status"])?;
        let n = self.checkpoints.len();
        for (i, c) in self.checkpoints.iter().enumerate() {
            let status = if i + 1 == n { self.status.as_str() } else { "ok" };
            w.write_record([
                c.step.to_string(),
                c.train_loss.to_string(),
                c.test_kl.map(|k| k.to_string()).unwrap_or_default(),
                c.rkhs_norm.to_string(),
                status.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every coefficient snapshot as `snap_{step}.json` in `dir`.
    pub fn write_snapshots(
        &self,
        features: &std::sync::Arc<FeatureSet>,
        dir: &Path,
    ) -> Result<Vec<std::path::PathBuf>> {
        let mut paths = Vec::new();
        for (step, coeffs) in &self.snapshots {
            let pot = Potential::new(features.clone(), coeffs.clone())?;
            let path = dir.join(format!("snap_{step}.json"));
            pot.save(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// `a ← a · R/‖a‖` when `‖a‖ > R`.
pub fn project_to_ball(coeffs: &mut [f64], radius: f64) {
    let norm = rkhs_norm(coeffs);
    if norm > radius {
        let s = radius / norm;
        coeffs.iter_mut().for_each(|a| *a *= s);
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Tracks the running test-KL minimum for the stop rule.
struct StopTracker {
    rule: Option<StopRule>,
    best: f64,
    best_step: usize,
}

impl StopTracker {
    fn new(rule: Option<StopRule>) -> Self {
        StopTracker {
            rule,
            best: f64::INFINITY,
            best_step: 0,
        }
    }

    fn observe(&mut self, step: usize, kl: Option<f64>) -> bool {
        let Some(kl) = kl else { return false };
        if kl < self.best {
            self.best = kl;
            self.best_step = step;
        }
        match self.rule {
            Some(r) => kl >= r.rise_factor * self.best && step as f64 >= r.min_step_ratio * self.best_step as f64,
            None => false,
        }
    }
}

/// Trains the coefficients of `pot` on `L⁻` (the input is not modified).
pub fn train(pot: &Potential, target: &Target, grid: &Grid, cfg: &TrainConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let objective = BackwardObjective::new(pot.features(), target, grid)?;
    let sample_table = match (cfg.optimizer, target) {
        (Optimizer::Sgd { .. }, Target::Empirical(s)) => Some(ActivationTable::new(pot.features(), s.points())),
        (Optimizer::Sgd { .. }, Target::Population(_)) => return Err(invalid("sgd requires an empirical target")),
        _ => None,
    };
    let population = matches!(target, Target::Population(_));
    train_with_objective(&objective, pot.coeffs(), sample_table.as_ref(), population, cfg)
}

/// Projected training on `{‖a‖_{L²(ρ₀)} ≤ R}`; `cfg.projection_radius` must be set.
pub fn train_projected(pot: &Potential, target: &Target, grid: &Grid, cfg: &TrainConfig) -> Result<Trajectory> {
    if cfg.projection_radius.is_none() {
        return Err(invalid("projected training needs a projection radius"));
    }
    train(pot, target, grid, cfg)
}

/// Training loop over a prebuilt objective. `sample_table` holds the sample
/// activations used for SGD minibatches.
pub fn train_with_objective(
    objective: &BackwardObjective,
    init: &[f64],
    sample_table: Option<&ActivationTable>,
    population_target: bool,
    cfg: &TrainConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dim(objective.m(), init.len())?;
    if let Some(r) = &cfg.reference {
        if r.grid() != objective.grid() {
            return Err(invalid("reference density lives on a different grid"));
        }
    }
    let m = objective.m();
    let start = Instant::now();
    let checkpoints_at = cfg.checkpoint_steps();
    let mut next_ck = 0;
    let mut a = init.to_vec();
    let mut adam = AdamState::new(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batch_embedding = vec![0.0; m];
    let mut out = Trajectory {
        checkpoints: Vec::with_capacity(checkpoints_at.len()),
        final_coeffs: Vec::new(),
        snapshots: Vec::new(),
        status: RunStatus::Completed,
        loss_increases: 0,
    };
    let mut stop = StopTracker::new(cfg.stop_rule);
    let mut prev_loss: Option<f64> = None;
    let check_monotone = population_target && cfg.optimizer == Optimizer::Gd;

    // Iteration `step` evaluates a_step, records it if due, then moves to a_{step+1}.
    let mut step = 0usize;
    loop {
        let eval = match &sample_table {
            Some(table) if step < cfg.steps => {
                let Optimizer::Sgd { batch } = cfg.optimizer else {
                    unreachable!()
                };
                batch_embedding.iter_mut().for_each(|e| *e = 0.0);
                let w = 1.0 / batch as f64;
                for _ in 0..batch {
                    let k = rng.random_range(0..table.rows());
                    numeric::axpy(w, table.row(k), &mut batch_embedding);
                }
                objective.eval_with_embedding(&a, &batch_embedding)
            }
            _ => objective.eval(&a),
        };
        let eval = match eval {
            Ok(e) if e.loss.is_finite() && rkhs_norm(&a).is_finite() => e,
            Ok(_) | Err(Error::Numeric(_)) => {
                out.status = RunStatus::Diverged;
                out.checkpoints.push(Checkpoint {
                    step,
                    train_loss: f64::NAN,
                    test_kl: None,
                    rkhs_norm: rkhs_norm(&a),
                    wall_time: start.elapsed().as_secs_f64(),
                });
                break;
            }
            Err(e) => return Err(e),
        };

        if next_ck < checkpoints_at.len() && checkpoints_at[next_ck] == step {
            next_ck += 1;
            let test_kl = cfg.reference.as_ref().map(|r| kl_masses(r.mass(), eval.density.mass()));
            if check_monotone {
                if let Some(p) = prev_loss {
                    if eval.loss > p + 1e-12 * p.abs().max(1.0) {
                        out.loss_increases += 1;
                    }
                }
                prev_loss = Some(eval.loss);
            }
            out.checkpoints.push(Checkpoint {
                step,
                train_loss: eval.loss,
                test_kl,
                rkhs_norm: rkhs_norm(&a),
                wall_time: start.elapsed().as_secs_f64(),
            });
            if cfg.snapshot_checkpoints || cfg.snapshot_steps.contains(&step) {
                out.snapshots.push((step, a.clone()));
            }
            if step < cfg.steps && stop.observe(step, test_kl) {
                out.status = RunStatus::StoppedEarly;
                break;
            }
        } else if cfg.snapshot_steps.contains(&step) {
            out.snapshots.push((step, a.clone()));
        }
        if step == cfg.steps {
            break;
        }

        match cfg.optimizer {
            Optimizer::Gd | Optimizer::Sgd { .. } => numeric::axpy(-cfg.step_size, &eval.grad, &mut a),
            Optimizer::Adam { beta1, beta2, eps } => adam.step(&mut a, &eval.grad, cfg.step_size, beta1, beta2, eps),
        }
        if let Some(r) = cfg.projection_radius {
            project_to_ball(&mut a, r);
        }
        step += 1;
    }
    out.final_coeffs = a;
    Ok(out)
}

/// `(T_o, L_o)`: the checkpoint with the smallest test KL, earliest on ties.
pub fn early_stop_select(traj: &Trajectory) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for c in &traj.checkpoints {
        if let Some(kl) = c.test_kl {
            if c.step == 0 {
                continue;
            }
            match best {
                Some((_, b)) if kl >= b => {}
                _ => best = Some((c.step, kl)),
            }
        }
    }
    best.ok_or_else(|| invalid("trajectory has no test KL to select from"))
}

/// Points and weights where a target's expectations are taken.
fn target_support(target: &Target, grid: &Grid) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(match target {
        Target::Population(q) => {
            if q.grid() != grid {
                return Err(invalid("population target lives on a different grid"));
            }
            (grid.points(), q.mass().to_vec())
        }
        Target::Empirical(s) => {
            if s.is_empty() {
                return Err(invalid("empirical target has no samples"));
            }
            (s.points().to_vec(), vec![1.0 / s.len() as f64; s.len()])
        }
    })
}

/// Adds `sign · weight_i · [σ, a σ' x, a σ']` over `points` into `vel`.
fn accumulate_particle_moments(net: &TwoLayerNet, points: &[f64], weights: &[f64], sign: f64, vel: &mut [f64]) {
    let d = net.d();
    let k = d + 2;
    let act = net.activation();
    for (x, &w) in points.chunks_exact(d).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let sw = sign * w;
        for j in 0..net.m() {
            let p = net.particle(j);
            let mut z = p[d + 1];
            for i in 0..d {
                z += p[1 + i] * x[i];
            }
            let s = act.value(z);
            let ds = p[0] * act.derivative(z) * sw;
            let v = &mut vel[j * k..(j + 1) * k];
            v[0] += sw * s;
            for i in 0..d {
                v[1 + i] += ds * x[i];
            }
            v[d + 1] += ds;
        }
    }
}

/// Per-particle velocity field of the two-layer flow,
/// `E_{Q_*−Q}[σ(w_j·x+b_j); a_j σ'(·) x; a_j σ'(·)]` (equal to
/// `m · ∂L⁻/∂(a_j, w_j, b_j)`), together with `L⁻` and the model density.
pub fn two_layer_gradient(net: &TwoLayerNet, target: &Target, grid: &Grid) -> Result<(Vec<f64>, f64, GridDensity)> {
    check_dim(net.d(), grid.d())?;
    check_dim(grid.d(), target.d())?;
    let grid_points = grid.points();
    let hidden = net.hidden_features();
    let table = ActivationTable::new(&hidden, &grid_points);
    let v = table.potential(&net.output_weights());
    let lz = crate::measures::log_partition_from_values(&v)?;
    let density = GridDensity::from_potential_values(*grid, &v)?;
    let (tp, tw) = target_support(target, grid)?;
    let target_v = ActivationTable::new(&hidden, &tp).potential(&net.output_weights());
    let loss = numeric::dot(&tw, &target_v) + lz;
    let mut vel = vec![0.0; net.particles().len()];
    accumulate_particle_moments(net, &tp, &tw, 1.0, &mut vel);
    accumulate_particle_moments(net, &grid_points, density.mass(), -1.0, &mut vel);
    Ok((vel, loss, density))
}

/// `L⁻` for a two-layer net.
pub fn two_layer_loss(net: &TwoLayerNet, target: &Target, grid: &Grid) -> Result<f64> {
    check_dim(net.d(), grid.d())?;
    let hidden = net.hidden_features();
    let v = ActivationTable::new(&hidden, &grid.points()).potential(&net.output_weights());
    let lz = crate::measures::log_partition_from_values(&v)?;
    let (tp, tw) = target_support(target, grid)?;
    let target_v = ActivationTable::new(&hidden, &tp).potential(&net.output_weights());
    Ok(numeric::dot(&tw, &target_v) + lz)
}

/// Euler steps of the conservative particle flow
/// `d/dt (a_j, w_j, b_j) = −E_{Q_*−Q}[σ; a σ' x; a σ']`.
/// Only [`Optimizer::Gd`] is accepted.
pub fn train_two_layer(net: &TwoLayerNet, target: &Target, grid: &Grid, cfg: &TrainConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.optimizer != Optimizer::Gd {
        return Err(invalid("two-layer training runs plain Euler (gd) steps only"));
    }
    let start = Instant::now();
    let checkpoints_at = cfg.checkpoint_steps();
    let mut next_ck = 0;
    let mut net = net.clone();
    let mut out = Trajectory {
        checkpoints: Vec::new(),
        final_coeffs: Vec::new(),
        snapshots: Vec::new(),
        status: RunStatus::Completed,
        loss_increases: 0,
    };
    let mut step = 0usize;
    loop {
        let blown = net.particles().iter().any(|p| !p.is_finite() || p.abs() > 1e6);
        let eval = if blown {
            None
        } else {
            two_layer_gradient(&net, target, grid).ok()
        };
        let Some((vel, loss, density)) = eval.filter(|e| e.1.is_finite()) else {
            out.status = RunStatus::Diverged;
            out.checkpoints.push(Checkpoint {
                step,
                train_loss: f64::NAN,
                test_kl: None,
                rkhs_norm: rkhs_norm(&net.output_weights()),
                wall_time: start.elapsed().as_secs_f64(),
            });
            break;
        };
        if next_ck < checkpoints_at.len() && checkpoints_at[next_ck] == step {
            next_ck += 1;
            out.checkpoints.push(Checkpoint {
                step,
                train_loss: loss,
                test_kl: cfg.reference.as_ref().map(|r| kl_masses(r.mass(), density.mass())),
                rkhs_norm: rkhs_norm(&net.output_weights()),
                wall_time: start.elapsed().as_secs_f64(),
            });
            if cfg.snapshot_checkpoints || cfg.snapshot_steps.contains(&step) {
                out.snapshots.push((step, net.particles().to_vec()));
            }
        }
        if step == cfg.steps {
            break;
        }
        numeric::axpy(-cfg.step_size, &vel, net.particles_mut());
        step += 1;
    }
    out.final_coeffs = net.particles().to_vec();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationRow {
    pub step: usize,
    pub time: f64,
    /// `‖a_t − a_t^{(n)}‖_{L²(ρ₀)}`.
    pub deviation: f64,
    /// `ε̂ · t`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationReport {
    /// `max_j |E_{Q_*−Q_*^{(n)}}[σ_j]|` over the realized features.
    pub eps_features: f64,
    /// The same maximum with the `2(d+1)` signed coordinate directions added.
    pub eps_with_coordinates: f64,
    pub rows: Vec<DeviationRow>,
}

/// Twin gradient-descent runs from `a = 0` on a population target and on its
/// empirical counterpart, comparing coefficient trajectories with `ε̂ t`.
pub fn trajectory_deviation_check(
    features: &std::sync::Arc<FeatureSet>,
    pop_target: &Target,
    emp_target: &Target,
    grid: &Grid,
    cfg: &TrainConfig,
) -> Result<DeviationReport> {
    if cfg.optimizer != Optimizer::Gd {
        return Err(invalid("deviation check runs gradient descent"));
    }
    let mut cfg = cfg.clone();
    cfg.snapshot_checkpoints = true;
    cfg.projection_radius = None;
    cfg.stop_rule = None;
    let init = Potential::zeros(features.clone());
    let pop = train(&init, pop_target, grid, &cfg)?;
    let emp = train(&init, emp_target, grid, &cfg)?;

    let ep = pop_target.embedding(features)?;
    let es = emp_target.embedding(features)?;
    let eps_features = ep.iter().zip(&es).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let coords = crate::model::coordinate_features(features.d(), features.activation())?;
    let cp = pop_target.embedding(&coords)?;
    let cs = emp_target.embedding(&coords)?;
    let eps_with_coordinates = cp
        .iter()
        .zip(&cs)
        .map(|(a, b)| (a - b).abs())
        .fold(eps_features, f64::max);

    let mut rows = Vec::new();
    for ((s1, a1), (s2, a2)) in pop.snapshots.iter().zip(&emp.snapshots) {
        debug_assert_eq!(s1, s2);
        let diff: Vec<f64> = a1.iter().zip(a2).map(|(x, y)| x - y).collect();
        let time = *s1 as f64 * cfg.step_size;
        rows.push(DeviationRow {
            step: *s1,
            time,
            deviation: rkhs_norm(&diff),
            bound: eps_features * time,
        });
    }
    Ok(DeviationReport {
        eps_features,
        eps_with_coordinates,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{density_from_potential, SampleSet};
    use crate::model::{sample_features, Activation};
    use std::sync::Arc;

    fn traj_from(kls: &[(usize, f64)]) -> Trajectory {
        Trajectory {
            checkpoints: kls
                .iter()
                .map(|&(step, kl)| Checkpoint {
                    step,
                    train_loss: 0.0,
                    test_kl: Some(kl),
                    rkhs_norm: 0.0,
                    wall_time: 0.0,
                })
                .collect(),
            final_coeffs: vec![],
            snapshots: vec![],
            status: RunStatus::Completed,
            loss_increases: 0,
        }
    }

    #[test]
    fn early_stop_examples() {
        assert_eq!(
            early_stop_select(&traj_from(&[(1, 3.0), (2, 2.0), (3, 1.0)])).unwrap(),
            (3, 1.0)
        );
        assert_eq!(
            early_stop_select(&traj_from(&[(10, 3.0), (20, 1.0), (30, 2.0)])).unwrap(),
            (20, 1.0)
        );
        assert_eq!(
            early_stop_select(&traj_from(&[(10, 2.0), (20, 1.0), (30, 1.0)])).unwrap(),
            (20, 1.0)
        );
        let mut t = traj_from(&[(5, 1.0)]);
        t.checkpoints[0].test_kl = None;
        assert!(early_stop_select(&t).is_err());
    }

    #[test]
    fn checkpoint_schedules() {
        let cfg = TrainConfig {
            steps: 25,
            eval_every: 10,
            ..Default::default()
        };
        assert_eq!(cfg.checkpoint_steps(), vec![10, 20, 25]);
        let cfg = TrainConfig {
            steps: 130,
            schedule: Schedule::log_default(),
            ..Default::default()
        };
        let s = cfg.checkpoint_steps();
        assert_eq!(&s[..3], &[1, 2, 3]);
        assert!(s.contains(&100) && s.contains(&110) && s.contains(&121));
        assert_eq!(*s.last().unwrap(), 130);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig {
                step_size: 0.0,
                ..Default::default()
            },
            TrainConfig {
                steps: 0,
                ..Default::default()
            },
            TrainConfig {
                eval_every: 0,
                ..Default::default()
            },
            TrainConfig {
                projection_radius: Some(-1.0),
                ..Default::default()
            },
            TrainConfig {
                optimizer: Optimizer::Sgd { batch: 0 },
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn fixed_point_at_the_target() {
        let f = Arc::new(sample_features(1, 30, 2).unwrap());
        let g = Grid::new(1, 128).unwrap();
        let star = Potential::constant(f, 50.0);
        let target = Target::Population(density_from_potential(&star, &g).unwrap());
        let cfg = TrainConfig {
            steps: 20,
            eval_every: 5,
            ..Default::default()
        };
        let traj = train(&star, &target, &g, &cfg).unwrap();
        for (a, b) in traj.final_coeffs.iter().zip(star.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_needs_samples() {
        let f = Arc::new(sample_features(1, 5, 2).unwrap());
        let g = Grid::new(1, 16).unwrap();
        let target = Target::Population(GridDensity::uniform(g));
        let cfg = TrainConfig {
            optimizer: Optimizer::sgd(),
            ..Default::default()
        };
        assert!(train(&Potential::zeros(f), &target, &g, &cfg).is_err());
    }

    #[test]
    fn sgd_is_deterministic_in_seed() {
        let f = Arc::new(sample_features(1, 20, 2).unwrap());
        let g = Grid::new(1, 64).unwrap();
        let s = SampleSet::new(1, (0..40).map(|i| -0.95 + i as f64 * 0.045).collect(), None).unwrap();
        let target = Target::Empirical(s);
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd { batch: 4 },
            steps: 50,
            seed: 9,
            ..Default::default()
        };
        let a = train(&Potential::zeros(f.clone()), &target, &g, &cfg).unwrap();
        let b = train(&Potential::zeros(f.clone()), &target, &g, &cfg).unwrap();
        assert_eq!(a.final_coeffs, b.final_coeffs);
        let c = train(&Potential::zeros(f), &target, &g, &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.final_coeffs, c.final_coeffs);
    }

    #[test]
    fn projection_is_idempotent() {
        let mut a = vec![3.0, -4.0, 12.0];
        project_to_ball(&mut a, 2.0);
        let once = a.clone();
        project_to_ball(&mut a, 2.0);
        assert_eq!(a, once);
        assert!((rkhs_norm(&a) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn divergence_is_recorded_not_raised() {
        let f = Arc::new(sample_features(1, 10, 3).unwrap());
        let g = Grid::new(1, 32).unwrap();
        let target = Target::Empirical(SampleSet::new(1, vec![0.5], None).unwrap());
        let pot = Potential::new(f, vec![f64::INFINITY; 10]).unwrap();
        let traj = train(&pot, &target, &g, &TrainConfig::default()).unwrap();
        assert_eq!(traj.status, RunStatus::Diverged);
    }

    #[test]
    fn two_layer_rejects_other_optimizers() {
        let f = sample_features(1, 4, 1).unwrap();
        let net = TwoLayerNet::from_features(&f, &[0.0; 4], 10.0).unwrap();
        let g = Grid::new(1, 16).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(),
            ..Default::default()
        };
        let target = Target::Population(GridDensity::uniform(g));
        assert!(train_two_layer(&net, &target, &g, &cfg).is_err());
        let _ = Activation::Relu;
    }

    #[test]
    fn csv_export_layout() {
        let mut t = traj_from(&[(1, 0.5), (2, 0.25)]);
        t.status = RunStatus::Diverged;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,train_loss,test_kl,rkhs_norm,status");
        assert_eq!(lines[1], "1,0,0.5,0,ok");
        assert_eq!(lines[2], "2,0,0.25,0,diverged");
    }
}
