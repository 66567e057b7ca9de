//! Convex KL-based objectives in coefficient space.
//!
//! With `Q = e^{-V} P / Z` and a target `Q_*`:
//!
//! * backward: `L⁻(V) = E_{Q_*}[V] + log E_P[e^{-V}]`, whose excess over the
//!   optimum is `KL(Q_*‖Q)`;
//! * forward: `L⁺(V) = −E_P[V] + log E_{Q_*}[e^{V}]`.
//!
//! Gradients are returned in the functional (`L²(ρ₀)`) convention:
//! `g_j = m · ∂L/∂a_j`, so a gradient step is `a ← a − η g`.

use std::sync::Arc;

use crate::error::{check_dim, invalid, Result};
use crate::measures::{Grid, GridDensity, SampleSet};
use crate::model::{ActivationTable, FeatureSet, Potential};
use crate::numeric;

/// The distribution being learned: exact on the grid, or an empirical sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Population(GridDensity),
    Empirical(SampleSet),
}

impl Target {
    pub fn d(&self) -> usize {
        match self {
            Target::Population(q) => q.grid().d(),
            Target::Empirical(s) => s.d(),
        }
    }

    /// `E_target[σ_j]` for every feature.
    pub fn embedding(&self, features: &FeatureSet) -> Result<Vec<f64>> {
        check_dim(features.d(), self.d())?;
        Ok(match self {
            Target::Population(q) => q.grid().activation_table(features).embedding(q.mass()),
            Target::Empirical(s) => {
                if s.is_empty() {
                    return Err(invalid("empirical target has no samples"));
                }
                crate::measures::mean_embedding(crate::measures::MeasureRef::Samples(s), features)?
            }
        })
    }
}

/// A functional gradient `g ∈ R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub g: Vec<f64>,
    /// Set when the `e^V` reweighting of the forward objective has an
    /// effective sample size below 2.
    pub degenerate_weights: bool,
}

impl GradientVector {
    /// Empirical `L²(ρ₀)` norm `sqrt((1/m) Σ g_j²)`.
    pub fn norm(&self) -> f64 {
        numeric::rms(&self.g)
    }
}

/// Precomputed pieces of `L⁻` for repeated evaluation: the grid activation
/// table and the target mean embedding.
#[derive(Clone, Debug)]
pub struct BackwardObjective {
    grid: Grid,
    table: Arc<ActivationTable>,
    target_embedding: Vec<f64>,
}

/// One evaluation of `L⁻` at a coefficient vector.
#[derive(Clone, Debug)]
pub struct BackwardEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub density: GridDensity,
}

impl BackwardObjective {
    pub fn new(features: &FeatureSet, target: &Target, grid: &Grid) -> Result<Self> {
        check_dim(features.d(), grid.d())?;
        check_dim(grid.d(), target.d())?;
        if let Target::Population(q) = target {
            if q.grid() != grid {
                return Err(invalid("population target lives on a different grid"));
            }
        }
        let table = Arc::new(grid.activation_table(features));
        let target_embedding = match target {
            Target::Population(q) => table.embedding(q.mass()),
            Target::Empirical(_) => target.embedding(features)?,
        };
        Ok(BackwardObjective {
            grid: *grid,
            table,
            target_embedding,
        })
    }

    pub fn from_parts(grid: Grid, table: Arc<ActivationTable>, target_embedding: Vec<f64>) -> Self {
        BackwardObjective {
            grid,
            table,
            target_embedding,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn table(&self) -> &ActivationTable {
        &self.table
    }

    pub fn target_embedding(&self) -> &[f64] {
        &self.target_embedding
    }

    pub fn m(&self) -> usize {
        self.table.m()
    }

    /// Model density on the grid.
    pub fn density(&self, coeffs: &[f64]) -> Result<GridDensity> {
        let v = self.table.potential(coeffs);
        GridDensity::from_potential_values(self.grid, &v)
    }

    pub fn loss(&self, coeffs: &[f64]) -> Result<f64> {
        let v = self.table.potential(coeffs);
        let lz = crate::measures::log_partition_from_values(&v)?;
        Ok(numeric::dot(&self.target_embedding, coeffs) / self.m() as f64 + lz)
    }

    /// Loss, functional gradient `E_target[σ_j] − E_Q[σ_j]`, and `Q`.
    pub fn eval(&self, coeffs: &[f64]) -> Result<BackwardEval> {
        self.eval_with_embedding(coeffs, &self.target_embedding)
    }

    /// As [`eval`](Self::eval) but with the gradient taken against another
    /// target embedding (a minibatch, for SGD). The reported loss still uses
    /// the full target.
    pub fn eval_with_embedding(&self, coeffs: &[f64], target_embedding: &[f64]) -> Result<BackwardEval> {
        let v = self.table.potential(coeffs);
        let lz = crate::measures::log_partition_from_values(&v)?;
        let density = GridDensity::from_potential_values(self.grid, &v)?;
        let model_embedding = self.table.embedding(density.mass());
        let grad: Vec<f64> = target_embedding
            .iter()
            .zip(&model_embedding)
            .map(|(t, q)| t - q)
            .collect();
        let loss = numeric::dot(&self.target_embedding, coeffs) / self.m() as f64 + lz;
        Ok(BackwardEval { loss, grad, density })
    }
}

/// `L⁻(V) = E_target[V] + log E_P[e^{-V}]`.
pub fn loss_backward(pot: &Potential, target: &Target, grid: &Grid) -> Result<f64> {
    BackwardObjective::new(pot.features(), target, grid)?.loss(pot.coeffs())
}

/// `g_j = E_target[σ_j] − E_Q[σ_j]`, the functional gradient of `L⁻`.
pub fn grad_backward(pot: &Potential, target: &Target, grid: &Grid) -> Result<GradientVector> {
    let eval = BackwardObjective::new(pot.features(), target, grid)?.eval(pot.coeffs())?;
    Ok(GradientVector {
        g: eval.grad,
        degenerate_weights: false,
    })
}

/// Target points, their base weights and activation table, for `L⁺`.
struct ForwardParts {
    table_grid: ActivationTable,
    target_table: ActivationTable,
    target_weights: Vec<f64>,
}

fn forward_parts(pot: &Potential, target: &Target, grid: &Grid) -> Result<ForwardParts> {
    check_dim(pot.d(), grid.d())?;
    check_dim(grid.d(), target.d())?;
    let table_grid = grid.activation_table(pot.features());
    let (target_table, target_weights) = match target {
        Target::Population(q) => {
            if q.grid() != grid {
                return Err(invalid("population target lives on a different grid"));
            }
            (table_grid.clone(), q.mass().to_vec())
        }
        Target::Empirical(s) => {
            if s.is_empty() {
                return Err(invalid("empirical target has no samples"));
            }
            let n = s.len();
            (
                ActivationTable::new(pot.features(), s.points()),
                vec![1.0 / n as f64; n],
            )
        }
    };
    Ok(ForwardParts {
        table_grid,
        target_table,
        target_weights,
    })
}

/// `log Σ_k w_k e^{V_k}` over the target support, together with the
/// self-normalized weights `w_k e^{V_k} / Σ`.
fn reweight(weights: &[f64], v: &[f64]) -> (Vec<f64>, f64) {
    let logits: Vec<f64> = weights
        .iter()
        .zip(v)
        .map(|(w, vi)| if *w > 0.0 { w.ln() + vi } else { f64::NEG_INFINITY })
        .collect();
    numeric::softmax(&logits)
}

/// `L⁺(V) = −E_P[V] + log E_target[e^V]`.
pub fn loss_forward(pot: &Potential, target: &Target, grid: &Grid) -> Result<f64> {
    let parts = forward_parts(pot, target, grid)?;
    let vg = parts.table_grid.potential(pot.coeffs());
    let vt = parts.target_table.potential(pot.coeffs());
    let (_, lse) = reweight(&parts.target_weights, &vt);
    Ok(-numeric::mean(&vg) + lse)
}

/// `g_j = E_{P_*}[σ_j] − E_P[σ_j]` with `P_* ∝ e^V Q_*`.
pub fn grad_forward(pot: &Potential, target: &Target, grid: &Grid) -> Result<GradientVector> {
    let parts = forward_parts(pot, target, grid)?;
    let vt = parts.target_table.potential(pot.coeffs());
    let (w, _) = reweight(&parts.target_weights, &vt);
    let ess = 1.0 / numeric::dot(&w, &w);
    let biased = parts.target_table.embedding(&w);
    let base = parts.table_grid.uniform_embedding();
    Ok(GradientVector {
        g: biased.iter().zip(&base).map(|(a, b)| a - b).collect(),
        degenerate_weights: ess < 2.0,
    })
}
