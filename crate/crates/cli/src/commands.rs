use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use biaspot_core::experiments::{
    run_approximation_experiment, run_memorization_experiment, run_rate_experiment, write_rate_regression,
    write_rate_results, ApproxConfig, MemorizeConfig, RateExperimentConfig, RegressionMode, SamplerKind,
};
use biaspot_core::measures::{density_from_potential, kl_divergence, log_partition};
use biaspot_core::model::sample_features;
use biaspot_core::objectives::loss_backward;
use biaspot_core::plot::{loglog_svg, Series};
use biaspot_core::sampling::{sample_grid_oracle, sample_langevin, LangevinConfig};
use biaspot_core::training::{train, train_projected, Optimizer, RunStatus, TrainConfig};
use biaspot_core::{Grid, GridDensity, Potential, SampleSet, Target};

use crate::args::*;
use crate::manifest::Outputs;
use crate::{CliError, CommandOutcome};

type Res<T> = Result<T, CliError>;

pub fn run(cmd: &Command, dir: &Path) -> Res<CommandOutcome> {
    match cmd {
        Command::Train(a) => cmd_train(a, dir),
        Command::Experiment(ExperimentCommand::Rate(a)) => cmd_rate(a, dir),
        Command::Experiment(ExperimentCommand::Memorize(a)) => cmd_memorize(a, dir),
        Command::Experiment(ExperimentCommand::Approx(a)) => cmd_approx(a, dir),
        Command::Sample(a) => cmd_sample(a, dir),
        Command::Eval(a) => cmd_eval(a, dir),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn grid_for(d: usize, points: Option<usize>) -> Res<Grid> {
    Ok(match points {
        Some(p) => Grid::new(d, p)?,
        None => Grid::default_for(d)?,
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn require_seed(seed: Option<u64>) -> Res<u64> {
    seed.ok_or_else(|| usage("--seed is required for experiment subcommands"))
}

fn langevin_config(a: &LangevinArgs, seed: u64) -> LangevinConfig {
    LangevinConfig {
        step: a.langevin_step,
        burn_in: a.burn_in,
        thinning: a.thinning,
        chains: a.chains,
        seed,
    }
}

/// Creates `path`, hands the file to `write`, and records it as an output.
fn emit<F>(outputs: &mut Outputs, path: PathBuf, write: F) -> Res<()>
where
    F: FnOnce(File) -> biaspot_core::Result<()>,
{
    write(File::create(&path)?)?;
    outputs.add(path);
    Ok(())
}

fn emit_text(outputs: &mut Outputs, path: PathBuf, text: &str) -> Res<()> {
    std::fs::write(&path, text)?;
    outputs.add(path);
    Ok(())
}

fn load_density(path: &Path, grid: &Grid) -> Res<GridDensity> {
    if is_csv(path) {
        Ok(GridDensity::load_csv(path)?)
    } else {
        let pot = Potential::load(path)?;
        Ok(density_from_potential(&pot, grid)?)
    }
}

fn cmd_train(a: &TrainArgs, dir: &Path) -> Res<CommandOutcome> {
    let target_path = a
        .target
        .as_ref()
        .ok_or_else(|| usage("missing --target (a potential JSON or a sample CSV)"))?;
    let grid = grid_for(a.d, a.grid_points)?;
    let mut reference_path = a.reference.clone();
    let target = if is_csv(target_path) {
        Target::Empirical(SampleSet::load_csv(target_path)?)
    } else {
        let pot = Potential::load(target_path)?;
        if pot.d() != a.d {
            return Err(usage(format!("target has d={} but --d is {}", pot.d(), a.d)));
        }
        reference_path.get_or_insert_with(|| target_path.clone());
        Target::Population(density_from_potential(&pot, &grid)?)
    };
    if target.d() != a.d {
        return Err(usage(format!("target has d={} but --d is {}", target.d(), a.d)));
    }
    let reference = reference_path.as_deref().map(|p| load_density(p, &grid)).transpose()?;
    if reference.as_ref().is_some_and(|r| r.grid() != &grid) {
        return Err(usage("reference density grid does not match the training grid"));
    }
    let features = Arc::new(sample_features(a.d, a.m, a.feature_seed.unwrap_or(a.seed))?);
    let cfg = TrainConfig {
        optimizer: match a.opt {
            OptimizerArg::Gd => Optimizer::Gd,
            OptimizerArg::Sgd => Optimizer::Sgd { batch: a.batch },
            OptimizerArg::Adam => Optimizer::adam(),
        },
        step_size: a.lr,
        steps: a.steps,
        eval_every: a.eval_every,
        seed: a.seed,
        projection_radius: a.radius,
        reference,
        snapshot_steps: a.snapshot_steps.clone(),
        ..TrainConfig::default()
    };
    let init = Potential::zeros(features.clone());
    let traj = if a.radius.is_some() {
        train_projected(&init, &target, &grid, &cfg)?
    } else {
        train(&init, &target, &grid, &cfg)?
    };

    let mut outputs = Outputs::default();
    emit(&mut outputs, dir.join("trajectory.csv"), |f| traj.write_csv(f))?;
    if traj.final_coeffs.iter().all(|c| c.is_finite()) {
        let fin = init.with_coeffs(traj.final_coeffs.clone())?;
        let path = dir.join("final_potential.json");
        fin.save(&path)?;
        outputs.add(path);
    }
    for p in traj.write_snapshots(&features, dir)? {
        outputs.add(p);
    }
    let last = traj.last();
    for c in &traj.checkpoints {
        eprintln!(
            "step {} loss {} test_kl {} norm {}",
            c.step,
            c.train_loss,
            c.test_kl.map_or("-".to_string(), |k| k.to_string()),
            c.rkhs_norm
        );
    }
    Ok(CommandOutcome {
        master_seed: Some(a.seed),
        result: json!({
            "status": traj.status.as_str(),
            "final_step": last.map(|c| c.step),
            "final_train_loss": last.map(|c| c.train_loss),
            "final_test_kl": last.and_then(|c| c.test_kl),
            "final_rkhs_norm": last.map(|c| c.rkhs_norm),
        }),
        outputs,
        exit_code: if traj.status == RunStatus::Diverged { 2 } else { 0 },
    })
}

fn cmd_rate(a: &RateArgs, dir: &Path) -> Res<CommandOutcome> {
    let seed = require_seed(a.seed)?;
    let mut cfg = RateExperimentConfig::defaults(seed);
    cfg.dims = a.dims.clone();
    cfg.ns = a.ns.clone();
    cfg.trials = a.trials;
    cfg.m = a.m;
    cfg.a_star_value = a.a_star;
    cfg.train.steps = a.steps;
    cfg.train.step_size = a.lr;
    if let Some(rule) = cfg.train.stop_rule.as_mut() {
        rule.rise_factor = a.stop_rise;
        rule.min_step_ratio = a.stop_step_ratio;
    }
    cfg.sampler = match a.sampler {
        SamplerArg::Oracle => SamplerKind::Oracle,
        SamplerArg::Langevin => SamplerKind::Langevin(langevin_config(&a.langevin, seed)),
    };
    cfg.regression = match a.regression {
        RegressionArg::Averaged => RegressionMode::AveragedLog,
        RegressionArg::Pooled => RegressionMode::Pooled,
    };
    cfg.grid_points = a.grid_points;
    cfg.validate()?;
    let report = run_rate_experiment(&cfg)?;

    let mut outputs = Outputs::default();
    emit(&mut outputs, dir.join("rate_results.csv"), |f| {
        write_rate_results(&report.rows, f)
    })?;
    emit(&mut outputs, dir.join("rate_regression.csv"), |f| {
        write_rate_regression(&report.regressions, f)
    })?;
    if a.plot {
        let series: Vec<Series> = cfg
            .dims
            .iter()
            .map(|&d| Series {
                label: format!("d={d}"),
                points: cfg
                    .ns
                    .iter()
                    .map(|&n| {
                        let ls: Vec<f64> = report
                            .rows
                            .iter()
                            .filter(|r| r.d == d && r.n == n)
                            .filter_map(|r| r.l_o.map(f64::ln))
                            .collect();
                        (n as f64, (ls.iter().sum::<f64>() / ls.len().max(1) as f64).exp())
                    })
                    .collect(),
            })
            .collect();
        emit_text(
            &mut outputs,
            dir.join("rate_plot.svg"),
            &loglog_svg("Early-stopped test KL", "n", "L_o", &series)?,
        )?;
    }
    for r in &report.regressions {
        eprintln!(
            "d={} alpha={} t_exponent={} excluded={}",
            r.d, r.alpha, r.t_exponent, r.excluded_trials
        );
    }
    Ok(CommandOutcome {
        master_seed: Some(seed),
        result: json!({
            "regressions": report.regressions.iter().map(|r| json!({
                "d": r.d,
                "alpha": r.alpha,
                "alpha_stderr": r.alpha_stderr,
                "t_exponent": r.t_exponent,
                "t_exponent_stderr": r.t_exponent_stderr,
                "excluded_trials": r.excluded_trials,
            })).collect::<Vec<_>>(),
        }),
        outputs,
        exit_code: 0,
    })
}

fn cmd_memorize(a: &MemorizeArgs, dir: &Path) -> Res<CommandOutcome> {
    let seed = require_seed(a.seed)?;
    let cfg = MemorizeConfig {
        d: a.d,
        n: a.n,
        m: a.m,
        a_star_value: a.a_star,
        steps: a.steps,
        step_size: a.lr,
        snapshot_steps: a.snapshots.clone(),
        control_steps: a.control_steps,
        master_seed: seed,
        grid_points: a.grid_points,
    };
    let report = run_memorization_experiment(&cfg)?;
    let mut outputs = Outputs::default();
    emit(&mut outputs, dir.join("memorize_curve.csv"), |f| report.write_curve(f))?;
    if let Some(control) = &report.control {
        emit(&mut outputs, dir.join("memorize_control.csv"), |f| control.write_csv(f))?;
    }
    emit(&mut outputs, dir.join("samples.csv"), |f| report.samples.write_csv(f))?;
    emit(&mut outputs, dir.join("target_density.csv"), |f| {
        report.target_density.write_csv(f)
    })?;
    for (step, q) in &report.snapshots {
        emit(&mut outputs, dir.join(format!("density_{step}.csv")), |f| {
            q.write_csv(f)
        })?;
    }
    if a.plot {
        let pick = |f: &dyn Fn(&biaspot_core::training::Checkpoint) -> Option<f64>| -> Vec<(f64, f64)> {
            report
                .trajectory
                .checkpoints
                .iter()
                .filter_map(|c| Some((c.step as f64, f(c)?)))
                .collect()
        };
        let series = [
            Series {
                label: "test KL".into(),
                points: pick(&|c| c.test_kl),
            },
            Series {
                label: "RKHS norm".into(),
                points: pick(&|c| Some(c.rkhs_norm)),
            },
        ];
        emit_text(
            &mut outputs,
            dir.join("memorize_plot.svg"),
            &loglog_svg("Memorization", "iteration", "value", &series)?,
        )?;
    }
    let last = report.trajectory.last();
    let norm_at_to = report.trajectory.checkpoint(report.t_o).map(|c| c.rkhs_norm);
    eprintln!("T_o={} L_o={}", report.t_o, report.l_o);
    Ok(CommandOutcome {
        master_seed: Some(seed),
        result: json!({
            "t_o": report.t_o,
            "l_o": report.l_o,
            "rkhs_norm_at_t_o": norm_at_to,
            "final_test_kl": last.and_then(|c| c.test_kl),
            "final_rkhs_norm": last.map(|c| c.rkhs_norm),
            "status": report.trajectory.status.as_str(),
        }),
        outputs,
        exit_code: if report.trajectory.status == RunStatus::Diverged {
            2
        } else {
            0
        },
    })
}

fn cmd_approx(a: &ApproxArgs, dir: &Path) -> Res<CommandOutcome> {
    let seed = require_seed(a.seed)?;
    let cfg = ApproxConfig {
        d: a.d,
        m_ref: a.m_ref,
        ms: a.ms.clone(),
        resamples: a.resamples,
        a_ref_value: a.a_ref,
        master_seed: seed,
        grid_points: a.grid_points,
    };
    let report = run_approximation_experiment(&cfg)?;
    let mut outputs = Outputs::default();
    emit(&mut outputs, dir.join("approx_rate.csv"), |f| report.write_csv(f))?;
    if a.plot {
        let series = [
            Series {
                label: "mean KL".into(),
                points: report.mean_kl.iter().map(|(m, k)| (*m as f64, *k)).collect(),
            },
            Series {
                label: "bound".into(),
                points: report.bound_checks.iter().map(|(m, b, _)| (*m as f64, *b)).collect(),
            },
        ];
        emit_text(
            &mut outputs,
            dir.join("approx_plot.svg"),
            &loglog_svg("Feature subsampling", "m", "KL", &series)?,
        )?;
    }
    eprintln!("slope={} stderr={}", report.fit.slope, report.fit.stderr);
    Ok(CommandOutcome {
        master_seed: Some(seed),
        result: json!({
            "slope": report.fit.slope,
            "slope_stderr": report.fit.stderr,
            "reference_norm": report.reference_norm,
            "mean_kl": report.mean_kl,
            "bound_checks": report.bound_checks,
        }),
        outputs,
        exit_code: 0,
    })
}

fn cmd_sample(a: &SampleArgs, dir: &Path) -> Res<CommandOutcome> {
    if a.n <= 0 {
        return Err(usage(format!("--n must be positive, got {}", a.n)));
    }
    let n = a.n as usize;
    let pot = Potential::load(&a.potential)?;
    let samples = match a.sampler {
        SamplerArg::Oracle => {
            let grid = grid_for(pot.d(), a.grid_points)?;
            sample_grid_oracle(&density_from_potential(&pot, &grid)?, n, a.seed)?
        }
        SamplerArg::Langevin => sample_langevin(&pot, n, &langevin_config(&a.langevin, a.seed))?,
    };
    let mut outputs = Outputs::default();
    emit(&mut outputs, dir.join("samples.csv"), |f| samples.write_csv(f))?;
    Ok(CommandOutcome {
        master_seed: Some(a.seed),
        result: json!({ "n": n, "d": pot.d() }),
        outputs,
        exit_code: 0,
    })
}

fn cmd_eval(a: &EvalArgs, _dir: &Path) -> Res<CommandOutcome> {
    let (name, value) = match a.metric {
        MetricArg::RkhsNorm => ("rkhs_norm", Potential::load(&a.p)?.rkhs_norm()),
        MetricArg::LogPartition => {
            let pot = Potential::load(&a.p)?;
            (
                "log_partition",
                log_partition(&pot, &grid_for(pot.d(), a.grid_points)?)?,
            )
        }
        MetricArg::Kl => {
            let q_path = a.q.as_ref().ok_or_else(|| usage("kl needs --q"))?;
            // A density CSV fixes the grid; otherwise use the default for d.
            let grid = if is_csv(&a.p) {
                *GridDensity::load_csv(&a.p)?.grid()
            } else if is_csv(q_path) {
                *GridDensity::load_csv(q_path)?.grid()
            } else {
                grid_for(Potential::load(&a.p)?.d(), a.grid_points)?
            };
            let p = load_density(&a.p, &grid)?;
            let q = load_density(q_path, &grid)?;
            ("kl", kl_divergence(&p, &q)?)
        }
        MetricArg::Loss => {
            let pot = Potential::load(&a.p)?;
            let grid = grid_for(pot.d(), a.grid_points)?;
            let target = match (&a.samples, &a.q) {
                (Some(s), _) => Target::Empirical(SampleSet::load_csv(s)?),
                (None, Some(q)) => Target::Population(load_density(q, &grid)?),
                (None, None) => return Err(usage("loss needs --samples or --q")),
            };
            ("loss", loss_backward(&pot, &target, &grid)?)
        }
    };
    println!("{name}={value}");
    Ok(CommandOutcome {
        master_seed: None,
        result: json!({ name: value }),
        outputs: Outputs::default(),
        exit_code: 0,
    })
}
