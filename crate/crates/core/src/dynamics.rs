//! MMD gradient flow of a grid density toward a target measure.
//!
//! With the feature kernel `k(x, x') = (1/m) Σ_j σ_j(x) σ_j(x')` the flow is
//! `dQ/dt = v̄(Q) Q`, where `v(x) = E_{(Q'−Q)(x')}[k(x, x')]` and
//! `v̄ = v − E_Q[v]`. Along it `‖Q_t − Q'‖_k²` is nonincreasing.

use std::io::Write;

use crate::error::{check_dim, invalid, Result};
use crate::measures::{mmd_sq_from_embeddings, Grid, GridDensity};
use crate::model::{ActivationTable, FeatureSet};
use crate::numeric;
use crate::objectives::Target;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DtPolicy {
    /// Always `dt`; a step that would make a mass negative is retried with
    /// half the step.
    Fixed,
    /// `dt_s = min(dt, 0.5 / max|v̄|, 2·dt_{s−1})`, halved until the squared
    /// MMD does not increase.
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureFlowConfig {
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    pub policy: DtPolicy,
    /// Keep the density every this many steps.
    pub snapshot_every: Option<usize>,
}

impl Default for MeasureFlowConfig {
    fn default() -> Self {
        MeasureFlowConfig {
            dt: 1.0,
            steps: 1000,
            record_every: 1,
            policy: DtPolicy::Adaptive,
            snapshot_every: None,
        }
    }
}

impl MeasureFlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if self.snapshot_every == Some(0) {
            return Err(invalid("snapshot_every must be at least 1"));
        }
        Ok(())
    }
}

/// `v` and its `Q`-centered version `v̄` on every grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub v: Vec<f64>,
    pub vbar: Vec<f64>,
}

/// Precomputed kernel pieces for one (grid, target, features) triple.
pub struct FlowOperator {
    grid: Grid,
    table: ActivationTable,
    target_embedding: Vec<f64>,
}

impl FlowOperator {
    pub fn new(grid: &Grid, target: &Target, features: &FeatureSet) -> Result<Self> {
        check_dim(features.d(), grid.d())?;
        if let Target::Population(q) = target {
            if q.grid() != grid {
                return Err(invalid("population target lives on a different grid"));
            }
        }
        Ok(FlowOperator {
            grid: *grid,
            table: grid.activation_table(features),
            target_embedding: target.embedding(features)?,
        })
    }

    pub fn embedding(&self, q: &GridDensity) -> Vec<f64> {
        self.table.embedding(q.mass())
    }

    /// `v` and `v̄` given `Q` and its embedding.
    pub fn velocity(&self, q: &GridDensity, embedding: &[f64]) -> VelocityField {
        let coeffs: Vec<f64> = self
            .target_embedding
            .iter()
            .zip(embedding)
            .map(|(t, e)| t - e)
            .collect();
        // (1/m) Σ_j σ_j(x) c_j is exactly the potential map of the table.
        let v = self.table.potential(&coeffs);
        let mean = numeric::dot(q.mass(), &v);
        let vbar = v.iter().map(|x| x - mean).collect();
        VelocityField { v, vbar }
    }

    pub fn mmd_sq(&self, embedding: &[f64]) -> f64 {
        mmd_sq_from_embeddings(embedding, &self.target_embedding)
    }

    /// `max_x k(x, x)` over the grid nodes.
    pub fn max_diagonal_kernel(&self) -> f64 {
        (0..self.table.rows())
            .map(|i| {
                let r = self.table.row(i);
                numeric::dot(r, r) / self.table.m() as f64
            })
            .fold(0.0, f64::max)
    }
}

/// `v(x) = E_{Q'−Q}[k(x,·)]` and `v̄ = v − E_Q[v]` on every node of `q`'s grid.
pub fn velocity_field(q: &GridDensity, target: &Target, features: &FeatureSet) -> Result<VelocityField> {
    let op = FlowOperator::new(q.grid(), target, features)?;
    let e = op.embedding(q);
    Ok(op.velocity(q, &e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecord {
    pub step: usize,
    pub time: f64,
    pub mmd_sq: f64,
    pub min_mass: f64,
    pub max_vbar: f64,
    /// Step size used to leave this state (0 at the last step).
    pub dt: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    pub final_density: GridDensity,
    pub snapshots: Vec<(usize, GridDensity)>,
    /// Squared MMD after every step, starting with the initial state.
    pub mmd_curve: Vec<f64>,
    /// Steps retried with a halved `dt`.
    pub rejected: usize,
    /// Largest `|Σ mass − 1|` seen before renormalization.
    pub max_mass_drift: f64,
}

impl FlowTrajectory {
    /// Steps at which the squared MMD rose by more than `tol`.
    pub fn lyapunov_violations(&self, tol: f64) -> usize {
        self.mmd_curve.windows(2).filter(|w| w[1] > w[0] + tol).count()
    }

    /// CSV `step,mmd_sq,min_mass,max_vbar`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "mmd_sq", "min_mass", "max_vbar"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.mmd_sq.to_string(),
                r.min_mass.to_string(),
                r.max_vbar.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Forward Euler in multiplicative form, `mass_i ← mass_i (1 + dt v̄_i)`.
pub fn evolve_measure(
    q0: &GridDensity,
    target: &Target,
    features: &FeatureSet,
    cfg: &MeasureFlowConfig,
) -> Result<FlowTrajectory> {
    cfg.validate()?;
    let op = FlowOperator::new(q0.grid(), target, features)?;
    evolve_with_operator(&op, q0, cfg)
}

pub fn evolve_with_operator(op: &FlowOperator, q0: &GridDensity, cfg: &MeasureFlowConfig) -> Result<FlowTrajectory> {
    cfg.validate()?;
    if q0.grid() != &op.grid {
        return Err(invalid("initial density lives on a different grid"));
    }
    let mut q = q0.clone();
    let mut emb = op.embedding(&q);
    let mut mmd = op.mmd_sq(&emb);
    let mut out = FlowTrajectory {
        records: Vec::new(),
        final_density: q0.clone(),
        snapshots: Vec::new(),
        mmd_curve: vec![mmd],
        rejected: 0,
        max_mass_drift: 0.0,
    };
    let mut time = 0.0;
    let mut last_dt = cfg.dt;
    let mut next = vec![0.0; q.mass().len()];
    for step in 0..=cfg.steps {
        let field = op.velocity(&q, &emb);
        let max_vbar = field.vbar.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min_mass = q.mass().iter().cloned().fold(f64::INFINITY, f64::min);
        let record = step % cfg.record_every == 0 || step == cfg.steps;
        if let Some(every) = cfg.snapshot_every {
            if step % every == 0 || step == cfg.steps {
                out.snapshots.push((step, q.clone()));
            }
        }
        if step == cfg.steps {
            if record {
                out.records.push(FlowRecord {
                    step,
                    time,
                    mmd_sq: mmd,
                    min_mass,
                    max_vbar,
                    dt: 0.0,
                });
            }
            break;
        }

        let mut dt = match cfg.policy {
            DtPolicy::Fixed => cfg.dt,
            DtPolicy::Adaptive => {
                let cap = if max_vbar > 0.0 { 0.5 / max_vbar } else { f64::INFINITY };
                cfg.dt.min(cap).min(2.0 * last_dt)
            }
        };
        let (new_emb, new_mmd) = loop {
            for ((n, m), v) in next.iter_mut().zip(q.mass()).zip(&field.vbar) {
                *n = m * (1.0 + dt * v);
            }
            let negative = next.iter().any(|&x| x < 0.0);
            if !negative {
                let total = numeric::sum(&next);
                let drift = (total - 1.0).abs();
                out.max_mass_drift = out.max_mass_drift.max(drift);
                if drift > 1e-12 {
                    next.iter_mut().for_each(|x| *x /= total);
                }
                let e = op.table.embedding(&next);
                let candidate = op.mmd_sq(&e);
                if cfg.policy == DtPolicy::Fixed || candidate <= mmd {
                    break (e, candidate);
                }
            }
            out.rejected += 1;
            dt *= 0.5;
            if dt < 1e-300 {
                return Err(crate::Error::Numeric("measure flow step size underflowed".into()));
            }
        };
        if record {
            out.records.push(FlowRecord {
                step,
                time,
                mmd_sq: mmd,
                min_mass,
                max_vbar,
                dt,
            });
        }
        q = GridDensity::from_parts_unchecked(op.grid, next.clone());
        emb = new_emb;
        mmd = new_mmd;
        out.mmd_curve.push(mmd);
        time += dt;
        last_dt = dt;
    }
    out.final_density = q;
    Ok(out)
}

/// Mass within `radius` cells (per axis) of the cell holding any target atom.
pub fn mass_near_atoms(q: &GridDensity, atoms: &crate::measures::SampleSet, radius: usize) -> Result<f64> {
    let grid = q.grid();
    check_dim(grid.d(), atoms.d())?;
    let centers: Vec<Vec<usize>> = atoms.iter().map(|x| grid.multi_index(grid.cell_of(x))).collect();
    let terms: Vec<f64> = q
        .mass()
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let idx = grid.multi_index(*i);
            centers
                .iter()
                .any(|c| c.iter().zip(&idx).all(|(a, b)| a.abs_diff(*b) <= radius))
        })
        .map(|(_, m)| *m)
        .collect();
    Ok(numeric::sum(&terms))
}

/// Quantities for telling fixed points of the flow apart.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointDiagnostics {
    pub max_abs_vbar: f64,
    pub mmd_sq: f64,
    /// Smallest `Q` mass over the cells charged by the target.
    pub min_target_cell_mass: f64,
}

pub fn fixed_point_diagnostics(
    q: &GridDensity,
    target: &Target,
    features: &FeatureSet,
) -> Result<FixedPointDiagnostics> {
    let op = FlowOperator::new(q.grid(), target, features)?;
    let e = op.embedding(q);
    let field = op.velocity(q, &e);
    let grid = q.grid();
    let cells: Vec<usize> = match target {
        Target::Empirical(s) => s.iter().map(|x| grid.cell_of(x)).collect(),
        Target::Population(t) => (0..t.mass().len()).filter(|&i| t.mass()[i] > 0.0).collect(),
    };
    Ok(FixedPointDiagnostics {
        max_abs_vbar: field.vbar.iter().fold(0.0, |a, v| a.max(v.abs())),
        mmd_sq: op.mmd_sq(&e),
        min_target_cell_mass: cells.iter().map(|&i| q.mass()[i]).fold(f64::INFINITY, f64::min),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    /// `max_x |V^a_s − V^k_s|` after centering under `P`, for each step.
    pub per_step: Vec<f64>,
    pub max_deviation: f64,
}

/// Runs coefficient-space gradient descent `a ← a − η (E_{Q'}[σ] − E_Q[σ])`
/// and the potential-space flow `V ← V + η E_{Q−Q'}[k(x,·)]` (with an explicit
/// kernel matrix) side by side and compares the two potentials on the grid.
pub fn potential_flow_equivalence_check(
    features: &FeatureSet,
    target: &Target,
    grid: &Grid,
    init: &[f64],
    step_size: f64,
    steps: usize,
) -> Result<EquivalenceReport> {
    check_dim(features.m(), init.len())?;
    let m = features.m() as f64;
    let nodes = grid.points();
    let table = ActivationTable::new(features, &nodes);
    let cells = table.rows();
    let (tpoints, tweights) = match target {
        Target::Population(q) => {
            if q.grid() != grid {
                return Err(invalid("population target lives on a different grid"));
            }
            (nodes.clone(), q.mass().to_vec())
        }
        Target::Empirical(s) => (s.points().to_vec(), vec![1.0 / s.len() as f64; s.len()]),
    };
    let ttable = ActivationTable::new(features, &tpoints);

    // Explicit kernel pieces: K q for any grid weights q, and K_target w.
    let mut kernel = vec![0.0; cells * cells];
    for i in 0..cells {
        for l in 0..cells {
            kernel[i * cells + l] = numeric::dot(table.row(i), table.row(l)) / m;
        }
    }
    let mut target_term = vec![0.0; cells];
    for (i, t) in target_term.iter_mut().enumerate() {
        let ks: Vec<f64> = (0..ttable.rows())
            .map(|r| tweights[r] * numeric::dot(table.row(i), ttable.row(r)) / m)
            .collect();
        *t = numeric::sum(&ks);
    }
    let target_embedding = ttable.embedding(&tweights);

    let center = |v: &[f64]| -> Vec<f64> {
        let mu = numeric::mean(v);
        v.iter().map(|x| x - mu).collect()
    };
    let mut a = init.to_vec();
    let mut vk = table.potential(&a);
    let mut per_step = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let va = table.potential(&a);
        let dev = center(&va)
            .iter()
            .zip(center(&vk).iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        per_step.push(dev);
        if s == steps {
            break;
        }
        let qa = GridDensity::from_potential_values(*grid, &va)?;
        let model_embedding = table.embedding(qa.mass());
        for j in 0..a.len() {
            a[j] -= step_size * (target_embedding[j] - model_embedding[j]);
        }
        let qk = GridDensity::from_potential_values(*grid, &vk)?;
        for i in 0..cells {
            let kq = numeric::dot(&kernel[i * cells..(i + 1) * cells], qk.mass());
            vk[i] += step_size * (kq - target_term[i]);
        }
    }
    let max_deviation = per_step.iter().cloned().fold(0.0, f64::max);
    Ok(EquivalenceReport {
        per_step,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{density_from_potential, SampleSet};
    use crate::model::{sample_features, Potential};
    use std::sync::Arc;

    fn setup() -> (Arc<FeatureSet>, Grid, GridDensity) {
        let f = Arc::new(sample_features(1, 60, 5).unwrap());
        let g = Grid::new(1, 32).unwrap();
        let q = density_from_potential(&Potential::constant(f.clone(), 20.0), &g).unwrap();
        (f, g, q)
    }

    #[test]
    fn target_is_a_fixed_point() {
        let (f, _, q) = setup();
        let field = velocity_field(&q, &Target::Population(q.clone()), &f).unwrap();
        assert!(field.v.iter().all(|v| v.abs() < 1e-15));
        assert!(field.vbar.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn centering_is_exact() {
        let (f, g, _) = setup();
        let atoms = SampleSet::new(1, vec![-0.3, 0.6], None).unwrap();
        let q = GridDensity::from_weights(g, (0..32).map(|i| 1.0 + (i % 5) as f64).collect()).unwrap();
        let field = velocity_field(&q, &Target::Empirical(atoms), &f).unwrap();
        assert!(numeric::dot(q.mass(), &field.vbar).abs() < 1e-12);
    }

    #[test]
    fn flow_from_the_target_stays_put() {
        let (f, _, q) = setup();
        let cfg = MeasureFlowConfig {
            steps: 20,
            ..Default::default()
        };
        let t = evolve_measure(&q, &Target::Population(q.clone()), &f, &cfg).unwrap();
        for (a, b) in t.final_density.mass().iter().zip(q.mass()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mmd_descends_and_mass_is_conserved() {
        let (f, g, _) = setup();
        let atoms = SampleSet::new(1, vec![-0.5, 0.1, 0.7], None).unwrap();
        let cfg = MeasureFlowConfig {
            steps: 200,
            ..Default::default()
        };
        let t = evolve_measure(&GridDensity::uniform(g), &Target::Empirical(atoms), &f, &cfg).unwrap();
        assert_eq!(t.lyapunov_violations(1e-12), 0);
        assert!((numeric::sum(t.final_density.mass()) - 1.0).abs() <= 1e-12);
        assert!(t.mmd_curve.last().unwrap() < &t.mmd_curve[0]);
        assert_eq!(t.records.len(), 201);
    }

    #[test]
    fn single_step_equivalence_is_exact() {
        let (f, g, _) = setup();
        let atoms = SampleSet::new(1, vec![-0.5, 0.1, 0.7], None).unwrap();
        let r = potential_flow_equivalence_check(&f, &Target::Empirical(atoms), &g, &vec![0.0; 60], 0.5, 1).unwrap();
        assert!(r.max_deviation < 1e-12);
    }

    #[test]
    fn mass_near_atoms_counts_windows() {
        let g = Grid::new(1, 10).unwrap();
        let atoms = SampleSet::new(1, vec![0.05], None).unwrap();
        let q = GridDensity::uniform(g);
        let near = mass_near_atoms(&q, &atoms, 1).unwrap();
        assert!((near - 0.3).abs() < 1e-12);
    }
}
