//! Experiment drivers: sample-complexity rates, memorization curves, the
//! Monte-Carlo approximation rate, and the bound checks that go with them.
//!
//! Every trial draws its randomness from `mix_seed(master_seed, tags)`, runs
//! sequentially, and results are gathered in canonical order, so outputs do
//! not depend on the size of the rayon pool.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::measures::{
    density_from_potential, kl_divergence, mean_embedding, Grid, GridDensity, MeasureRef, SampleSet,
};
use crate::model::{coordinate_features, sample_features, sample_features_with, FeatureSet, Potential};
use crate::numeric::{self, mix_seed};
use crate::objectives::{BackwardObjective, Target};
use crate::sampling::{sample_grid_oracle, sample_langevin, LangevinConfig};
use crate::training::{
    early_stop_select, train, train_with_objective, Optimizer, RunStatus, Schedule, StopRule, TrainConfig, Trajectory,
};

const TAG_FEATURES: u64 = 0xfea7;
const TAG_SAMPLES: u64 = 0x5a3e;
const TAG_SUBSAMPLE: u64 = 0x50b5;
const TAG_PROBE: u64 = 0x9b0e;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplerKind {
    Oracle,
    Langevin(LangevinConfig),
}

impl SamplerKind {
    fn draw(&self, pot: &Potential, density: &GridDensity, n: usize, seed: u64) -> Result<SampleSet> {
        match self {
            SamplerKind::Oracle => sample_grid_oracle(density, n, seed),
            SamplerKind::Langevin(cfg) => sample_langevin(pot, n, &LangevinConfig { seed, ..*cfg }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressionMode {
    /// Regress the per-`n` mean of `log L_o` on `log n`.
    AveragedLog,
    /// Regress every trial's `(log n, log L_o)` pair.
    Pooled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateExperimentConfig {
    pub dims: Vec<usize>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub m: usize,
    pub a_star_value: f64,
    /// Template for every trial; `reference` and `seed` are filled per trial.
    pub train: TrainConfig,
    pub master_seed: u64,
    pub sampler: SamplerKind,
    /// Grid resolution for every `d`; the per-`d` default when absent.
    pub grid_points: Option<usize>,
    pub regression: RegressionMode,
}

impl RateExperimentConfig {
    pub fn defaults(master_seed: u64) -> Self {
        RateExperimentConfig {
            dims: vec![1, 2],
            ns: vec![25, 50, 100, 200],
            trials: 20,
            m: 500,
            a_star_value: 50.0,
            train: TrainConfig {
                optimizer: Optimizer::Gd,
                step_size: 0.5,
                steps: 60_000,
                schedule: Schedule::log_default(),
                stop_rule: Some(StopRule {
                    rise_factor: 1.25,
                    min_step_ratio: 2.0,
                }),
                ..TrainConfig::default()
            },
            master_seed,
            sampler: SamplerKind::Oracle,
            grid_points: None,
            regression: RegressionMode::AveragedLog,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(invalid("dims must be a nonempty list of positive dimensions"));
        }
        if self.trials < 2 {
            return Err(invalid("trials must be at least 2"));
        }
        let mut ns = self.ns.clone();
        ns.sort_unstable();
        ns.dedup();
        if ns.len() < 3 || ns[0] == 0 {
            return Err(invalid("ns needs at least 3 distinct positive sample sizes"));
        }
        if self.m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        self.train.validate()
    }

    fn grid(&self, d: usize) -> Result<Grid> {
        match self.grid_points {
            Some(p) => Grid::new(d, p),
            None => Grid::default_for(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateResultRow {
    pub d: usize,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    /// Absent when no test KL was recorded before divergence.
    pub t_o: Option<usize>,
    pub l_o: Option<f64>,
    pub status: RunStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRegression {
    pub d: usize,
    /// `α` with `L_o ∝ n^{-α}`.
    pub alpha: f64,
    pub alpha_stderr: f64,
    /// Slope of `log T_o` on `log n`.
    pub t_exponent: f64,
    pub t_exponent_stderr: f64,
    pub excluded_trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateResultRow>,
    pub regressions: Vec<RateRegression>,
}

/// Per-trial seed for the rate experiment.
pub fn trial_seed(master: u64, d: usize, n: usize, trial: usize) -> u64 {
    mix_seed(master, &[TAG_SAMPLES, d as u64, n as u64, trial as u64])
}

/// Feature seed shared by every trial at dimension `d`.
pub fn feature_seed(master: u64, d: usize) -> u64 {
    mix_seed(master, &[TAG_FEATURES, d as u64])
}

/// The ground-truth potential `a_* ≡ value` on the per-`d` features.
pub fn rate_target(cfg: &RateExperimentConfig, d: usize) -> Result<(Potential, Grid, GridDensity)> {
    let features = Arc::new(sample_features(d, cfg.m, feature_seed(cfg.master_seed, d))?);
    let star = Potential::constant(features, cfg.a_star_value);
    let grid = cfg.grid(d)?;
    let density = density_from_potential(&star, &grid)?;
    Ok((star, grid, density))
}

pub fn run_rate_experiment(cfg: &RateExperimentConfig) -> Result<RateReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut regressions = Vec::new();
    for &d in &cfg.dims {
        let (star, grid, population) = rate_target(cfg, d)?;
        let table = Arc::new(grid.activation_table(star.features()));
        let tasks: Vec<(usize, usize)> = cfg
            .ns
            .iter()
            .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
            .collect();
        let d_rows: Vec<RateResultRow> = tasks
            .par_iter()
            .map(|&(n, trial)| {
                let seed = trial_seed(cfg.master_seed, d, n, trial);
                let samples = cfg.sampler.draw(&star, &population, n, seed)?;
                let emb = mean_embedding(MeasureRef::Samples(&samples), star.features())?;
                let objective = BackwardObjective::from_parts(grid, table.clone(), emb);
                let tcfg = TrainConfig {
                    seed,
                    reference: Some(population.clone()),
                    ..cfg.train.clone()
                };
                let traj = train_with_objective(&objective, &vec![0.0; cfg.m], None, false, &tcfg)?;
                let selected = early_stop_select(&traj).ok();
                Ok(RateResultRow {
                    d,
                    n,
                    trial,
                    seed,
                    t_o: selected.map(|s| s.0),
                    l_o: selected.map(|s| s.1),
                    status: traj.status,
                })
            })
            .collect::<Result<_>>()?;
        let reg = rate_regression(d, &d_rows, cfg.regression)?;
        if reg.excluded_trials * 10 > d_rows.len() {
            return Err(Error::Experiment(format!(
                "{} of {} trials diverged at d={d}",
                reg.excluded_trials,
                d_rows.len()
            )));
        }
        regressions.push(reg);
        rows.extend(d_rows);
    }
    Ok(RateReport { rows, regressions })
}

/// Fits `α` and the `T_o` exponent from the rows of one dimension.
/// Diverged rows are excluded and counted.
pub fn rate_regression(d: usize, rows: &[RateResultRow], mode: RegressionMode) -> Result<RateRegression> {
    let usable: Vec<(usize, usize, f64)> = rows
        .iter()
        .filter(|r| r.d == d && r.status != RunStatus::Diverged)
        .filter_map(|r| Some((r.n, r.t_o?, r.l_o?)))
        .collect();
    let excluded = rows.iter().filter(|r| r.d == d).count() - usable.len();
    let (xs, ls, ts): (Vec<f64>, Vec<f64>, Vec<f64>) = match mode {
        RegressionMode::Pooled => (
            usable.iter().map(|u| u.0 as f64).collect(),
            usable.iter().map(|u| u.2).collect(),
            usable.iter().map(|u| u.1 as f64).collect(),
        ),
        RegressionMode::AveragedLog => {
            let mut ns: Vec<usize> = usable.iter().map(|u| u.0).collect();
            ns.sort_unstable();
            ns.dedup();
            let mut xs = Vec::new();
            let mut ls = Vec::new();
            let mut ts = Vec::new();
            for n in ns {
                let group: Vec<&(usize, usize, f64)> = usable.iter().filter(|u| u.0 == n).collect();
                let ll: Vec<f64> = group.iter().map(|u| u.2.ln()).collect();
                let lt: Vec<f64> = group.iter().map(|u| (u.1 as f64).ln()).collect();
                xs.push(n as f64);
                ls.push(numeric::mean(&ll).exp());
                ts.push(numeric::mean(&lt).exp());
            }
            (xs, ls, ts)
        }
    };
    let fl = fit_power_law(&xs, &ls)?;
    let ft = fit_power_law(&xs, &ts)?;
    Ok(RateRegression {
        d,
        alpha: -fl.slope,
        alpha_stderr: fl.stderr,
        t_exponent: ft.slope,
        t_exponent_stderr: ft.stderr,
        excluded_trials: excluded,
    })
}

pub fn write_rate_results<W: Write>(rows: &[RateResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["d", "n", "trial", "seed", "T_o", "L_o", "status"])?;
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.n.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.t_o.map(|t| t.to_string()).unwrap_or_default(),
            r.l_o.map(|l| l.to_string()).unwrap_or_default(),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rate_regression<W: Write>(regs: &[RateRegression], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "d",
        "alpha",
        "alpha_stderr",
        "t_exponent",
        "t_exponent_stderr",
        "excluded_trials",
    ])?;
    for r in regs {
        w.write_record([
            r.d.to_string(),
            r.alpha.to_string(),
            r.alpha_stderr.to_string(),
            r.t_exponent.to_string(),
            r.t_exponent_stderr.to_string(),
            r.excluded_trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
}

/// Ordinary least squares of `log y` on `log x`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(invalid("power-law fit needs at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("power-law fit needs positive finite inputs"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = numeric::mean(&lx);
    let my = numeric::mean(&ly);
    let dx: Vec<f64> = lx.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ly.iter().map(|y| y - my).collect();
    let sxx = numeric::dot(&dx, &dx);
    if sxx == 0.0 {
        return Err(invalid("power-law fit needs at least two distinct x values"));
    }
    let slope = numeric::dot(&dx, &dy) / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = dx.iter().zip(&dy).map(|(x, y)| (y - slope * x).powi(2)).collect();
    let dof = (xs.len() - 2) as f64;
    let stderr = (numeric::sum(&resid) / dof / sxx).sqrt();
    Ok(PowerLawFit {
        slope,
        intercept,
        stderr,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemorizeConfig {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub a_star_value: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Iterations at which the model density is exported.
    pub snapshot_steps: Vec<usize>,
    /// Length of the population-target control run; 0 skips it.
    pub control_steps: usize,
    pub master_seed: u64,
    pub grid_points: Option<usize>,
}

impl MemorizeConfig {
    pub fn defaults(master_seed: u64) -> Self {
        MemorizeConfig {
            d: 1,
            n: 25,
            m: 500,
            a_star_value: 50.0,
            steps: 100_000,
            step_size: 0.1,
            snapshot_steps: vec![160, 1_000, 10_000, 100_000],
            control_steps: 10_000,
            master_seed,
            grid_points: None,
        }
    }
}

pub struct MemorizeReport {
    pub samples: SampleSet,
    pub trajectory: Trajectory,
    pub control: Option<Trajectory>,
    pub t_o: usize,
    pub l_o: f64,
    /// Model densities at the configured snapshot steps that were reached.
    pub snapshots: Vec<(usize, GridDensity)>,
    pub target_density: GridDensity,
}

impl MemorizeReport {
    /// CSV `step,test_kl,rkhs_norm`.
    pub fn write_curve<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "test_kl", "rkhs_norm"])?;
        for c in &self.trajectory.checkpoints {
            w.write_record([
                c.step.to_string(),
                c.test_kl.map(|k| k.to_string()).unwrap_or_default(),
                c.rkhs_norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adam on an `n`-point sample of `Q_*`, logging test KL and norm on the
/// logarithmic checkpoint schedule, plus an optional control run on `Q_*`.
pub fn run_memorization_experiment(cfg: &MemorizeConfig) -> Result<MemorizeReport> {
    if cfg.n == 0 || cfg.m == 0 || cfg.d == 0 {
        return Err(invalid("d, n and m must be positive"));
    }
    let features = Arc::new(sample_features(cfg.d, cfg.m, feature_seed(cfg.master_seed, cfg.d))?);
    let star = Potential::constant(features.clone(), cfg.a_star_value);
    let grid = match cfg.grid_points {
        Some(p) => Grid::new(cfg.d, p)?,
        None => Grid::default_for(cfg.d)?,
    };
    let population = density_from_potential(&star, &grid)?;
    let seed = trial_seed(cfg.master_seed, cfg.d, cfg.n, 0);
    let samples = sample_grid_oracle(&population, cfg.n, seed)?;
    let tcfg = TrainConfig {
        optimizer: Optimizer::adam(),
        step_size: cfg.step_size,
        steps: cfg.steps,
        seed,
        reference: Some(population.clone()),
        schedule: Schedule::log_default(),
        snapshot_steps: cfg.snapshot_steps.clone(),
        ..TrainConfig::default()
    };
    let init = Potential::zeros(features.clone());
    let (trajectory, control) = rayon::join(
        || train(&init, &Target::Empirical(samples.clone()), &grid, &tcfg),
        || {
            (cfg.control_steps > 0).then(|| {
                let ccfg = TrainConfig {
                    steps: cfg.control_steps,
                    snapshot_steps: vec![],
                    ..tcfg.clone()
                };
                train(&init, &Target::Population(population.clone()), &grid, &ccfg)
            })
        },
    );
    let trajectory = trajectory?;
    let control = control.transpose()?;
    let (t_o, l_o) = early_stop_select(&trajectory)?;
    let snapshots = trajectory
        .snapshots
        .iter()
        .map(|(s, a)| Ok((*s, density_from_potential(&init.with_coeffs(a.clone())?, &grid)?)))
        .collect::<Result<_>>()?;
    Ok(MemorizeReport {
        samples,
        trajectory,
        control,
        t_o,
        l_o,
        snapshots,
        target_density: population,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxConfig {
    pub d: usize,
    pub m_ref: usize,
    pub ms: Vec<usize>,
    pub resamples: usize,
    /// Reference coefficients `a ≡ value` on the `m_ref` features.
    pub a_ref_value: f64,
    pub master_seed: u64,
    pub grid_points: Option<usize>,
}

impl ApproxConfig {
    pub fn defaults(master_seed: u64) -> Self {
        ApproxConfig {
            d: 1,
            m_ref: 10_000,
            ms: (4..=12).map(|k| 1usize << k).collect(),
            resamples: 10,
            a_ref_value: 50.0,
            master_seed,
            grid_points: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxRow {
    pub m: usize,
    pub resample: usize,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxReport {
    pub rows: Vec<ApproxRow>,
    /// `(m, mean KL over resamples)`.
    pub mean_kl: Vec<(usize, f64)>,
    pub fit: PowerLawFit,
    pub reference_norm: f64,
    /// `(m, bound, resamples within the bound)`.
    pub bound_checks: Vec<(usize, f64, usize)>,
}

impl ApproxReport {
    /// CSV `m,resample,kl`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m", "resample", "kl"])?;
        for r in &self.rows {
            w.write_record([r.m.to_string(), r.resample.to_string(), r.kl.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(‖V‖_H / √m) · 2√3 · Lip(σ) · √(R² + 1) · r` with `Lip(σ) = 1`, `R = 1`
/// and `r = 1`.
pub fn approximation_bound(norm: f64, m: usize) -> f64 {
    norm / (m as f64).sqrt() * 2.0 * 3f64.sqrt() * 2f64.sqrt()
}

/// KL between the reference density and the density of `m` features drawn
/// without replacement from the reference set, coefficients carried over.
pub fn run_approximation_experiment(cfg: &ApproxConfig) -> Result<ApproxReport> {
    if cfg.resamples == 0 || cfg.ms.is_empty() {
        return Err(invalid("need at least one m and one resample"));
    }
    if cfg.ms.iter().any(|&m| m == 0 || m > cfg.m_ref) {
        return Err(invalid("every m must lie in 1..=m_ref"));
    }
    let features = sample_features(cfg.d, cfg.m_ref, feature_seed(cfg.master_seed, cfg.d))?;
    let grid = match cfg.grid_points {
        Some(p) => Grid::new(cfg.d, p)?,
        None => Grid::default_for(cfg.d)?,
    };
    let table = grid.activation_table(&features);
    let coeffs = vec![cfg.a_ref_value; cfg.m_ref];
    let reference = GridDensity::from_potential_values(grid, &table.potential(&coeffs))?;
    let reference_norm = crate::model::rkhs_norm(&coeffs);

    let tasks: Vec<(usize, usize)> = cfg
        .ms
        .iter()
        .flat_map(|&m| (0..cfg.resamples).map(move |r| (m, r)))
        .collect();
    let rows: Vec<ApproxRow> = tasks
        .par_iter()
        .map(|&(m, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.master_seed, &[TAG_SUBSAMPLE, m as u64, r as u64]));
            let mut idx = rand::seq::index::sample(&mut rng, cfg.m_ref, m).into_vec();
            idx.sort_unstable();
            let values: Vec<f64> = (0..table.rows())
                .map(|i| {
                    let row = table.row(i);
                    let terms: Vec<f64> = idx.iter().map(|&j| row[j] * coeffs[j]).collect();
                    numeric::sum(&terms) / m as f64
                })
                .collect();
            let qm = GridDensity::from_potential_values(grid, &values)?;
            Ok(ApproxRow {
                m,
                resample: r,
                kl: kl_divergence(&reference, &qm)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut mean_kl = Vec::new();
    let mut bound_checks = Vec::new();
    for &m in &cfg.ms {
        let ks: Vec<f64> = rows.iter().filter(|r| r.m == m).map(|r| r.kl).collect();
        let bound = approximation_bound(reference_norm, m);
        bound_checks.push((m, bound, ks.iter().filter(|&&k| k <= bound).count()));
        mean_kl.push((m, numeric::mean(&ks)));
    }
    let fit_pts: Vec<&(usize, f64)> = mean_kl.iter().filter(|(m, k)| *m < cfg.m_ref && *k > 0.0).collect();
    let fit = fit_power_law(
        &fit_pts.iter().map(|p| p.0 as f64).collect::<Vec<_>>(),
        &fit_pts.iter().map(|p| p.1).collect::<Vec<_>>(),
    )?;
    Ok(ApproxReport {
        rows,
        mean_kl,
        fit,
        reference_norm,
        bound_checks,
    })
}

/// `B = 2 (4√(2 log 2d) + √(2 log(2/δ))) / √n`, the coefficient of `t` in
/// the generalization bound.
pub fn generalization_slope(d: usize, n: usize, delta: f64) -> f64 {
    let ld = (2.0 * d as f64).ln();
    2.0 * (4.0 * (2.0 * ld).sqrt() + (2.0 * (2.0 / delta).ln()).sqrt()) / (n as f64).sqrt()
}

/// `A/(2t) + B t` with `A = ‖a_* − a_0‖²`.
pub fn generalization_bound(a_sq: f64, slope: f64, t: f64) -> f64 {
    a_sq / (2.0 * t) + slope * t
}

/// Closed-form minimizer `T* = √(A / 2B)` of [`generalization_bound`].
pub fn optimal_stopping_time(a_sq: f64, slope: f64) -> f64 {
    (a_sq / (2.0 * slope)).sqrt()
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol * (lo.abs() + hi.abs()).max(1e-300) {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheckRow {
    pub step: usize,
    pub t: f64,
    pub kl: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// Both sides of the generalization bound at every checkpoint carrying a
/// test KL; `t = step · step_size`, and step 0 is skipped.
pub fn check_generalization_bound(
    traj: &Trajectory,
    a_sq: f64,
    d: usize,
    n: usize,
    delta: f64,
    step_size: f64,
) -> Vec<BoundCheckRow> {
    let slope = generalization_slope(d, n, delta);
    traj.checkpoints
        .iter()
        .filter(|c| c.step > 0)
        .filter_map(|c| {
            let kl = c.test_kl?;
            let t = c.step as f64 * step_size;
            let bound = generalization_bound(a_sq, slope, t);
            Some(BoundCheckRow {
                step: c.step,
                t,
                kl,
                bound,
                satisfied: kl <= bound,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationConfig {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub delta: f64,
    pub a_star_value: f64,
    pub train: TrainConfig,
    pub master_seed: u64,
    pub grid_points: Option<usize>,
}

impl GeneralizationConfig {
    pub fn defaults(master_seed: u64) -> Self {
        GeneralizationConfig {
            d: 1,
            n: 50,
            m: 500,
            trials: 50,
            delta: 0.1,
            a_star_value: 50.0,
            train: TrainConfig {
                steps: 2_000,
                schedule: Schedule::log_default(),
                ..TrainConfig::default()
            },
            master_seed,
            grid_points: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationReport {
    /// Per trial: checkpoints violating the bound.
    pub violations: Vec<usize>,
    pub satisfied_fraction: f64,
    pub t_star_closed_form: f64,
    pub t_star_numeric: f64,
}

/// Repeats an empirical-target run over seeded draws and checks the
/// generalization bound at every checkpoint of every trial.
pub fn run_generalization_check(cfg: &GeneralizationConfig) -> Result<GeneralizationReport> {
    if cfg.trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let rcfg = RateExperimentConfig {
        dims: vec![cfg.d],
        ns: vec![cfg.n],
        trials: cfg.trials,
        m: cfg.m,
        a_star_value: cfg.a_star_value,
        train: cfg.train.clone(),
        master_seed: cfg.master_seed,
        sampler: SamplerKind::Oracle,
        grid_points: cfg.grid_points,
        regression: RegressionMode::AveragedLog,
    };
    let (star, grid, population) = rate_target(&rcfg, cfg.d)?;
    let a_sq = star.rkhs_norm().powi(2);
    let table = Arc::new(grid.activation_table(star.features()));
    let violations: Vec<usize> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(cfg.master_seed, cfg.d, cfg.n, trial);
            let samples = sample_grid_oracle(&population, cfg.n, seed)?;
            let emb = mean_embedding(MeasureRef::Samples(&samples), star.features())?;
            let objective = BackwardObjective::from_parts(grid, table.clone(), emb);
            let tcfg = TrainConfig {
                seed,
                reference: Some(population.clone()),
                ..cfg.train.clone()
            };
            let traj = train_with_objective(&objective, &vec![0.0; cfg.m], None, false, &tcfg)?;
            let rows = check_generalization_bound(&traj, a_sq, cfg.d, cfg.n, cfg.delta, tcfg.step_size);
            Ok(rows.iter().filter(|r| !r.satisfied).count())
        })
        .collect::<Result<_>>()?;
    let ok = violations.iter().filter(|&&v| v == 0).count();
    let slope = generalization_slope(cfg.d, cfg.n, cfg.delta);
    let closed = optimal_stopping_time(a_sq, slope);
    let numeric_t = golden_section_min(|t| generalization_bound(a_sq, slope, t), 1e-6, 1e6, 1e-10);
    Ok(GeneralizationReport {
        satisfied_fraction: ok as f64 / cfg.trials as f64,
        violations,
        t_star_closed_form: closed,
        t_star_numeric: numeric_t,
    })
}

/// `4√(2 log 2d / n) + √(2 log(2/δ) / n)`.
pub fn sampling_gap_bound(d: usize, n: usize, delta: f64) -> f64 {
    let n = n as f64;
    4.0 * (2.0 * (2.0 * d as f64).ln() / n).sqrt() + (2.0 * (2.0 / delta).ln() / n).sqrt()
}

/// `2R (4√(2 log 2d) + √(2 log(2/δ))) / √n`, the constrained-estimator bound.
pub fn projected_bound(radius: f64, d: usize, n: usize, delta: f64) -> f64 {
    radius * generalization_slope(d, n, delta)
}

/// Largest `E_{Q_*}[σ(w·x̃)] − E_{Q_*^{(n)}}[σ(w·x̃)]` over the realized
/// features, the `2(d+1)` signed coordinate directions and `probes` fresh
/// draws from the ℓ¹ sphere (seeded by `seed`). A lower bound on the
/// supremum over the ball.
pub fn estimate_sampling_gap(
    samples: &SampleSet,
    population: &GridDensity,
    features: &FeatureSet,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let d = features.d();
    let mut sets = vec![features.clone(), coordinate_features(d, features.activation())?];
    if probes > 0 {
        sets.push(sample_features_with(
            d,
            probes,
            mix_seed(seed, &[TAG_PROBE]),
            features.activation(),
        )?);
    }
    let mut best = f64::NEG_INFINITY;
    for f in &sets {
        let ep = mean_embedding(MeasureRef::Grid(population), f)?;
        let es = mean_embedding(MeasureRef::Samples(samples), f)?;
        for (a, b) in ep.iter().zip(&es) {
            best = best.max(a - b);
        }
    }
    Ok(best)
}
