//! Random-feature potentials.
//!
//! A [`FeatureSet`] holds `m` fixed parameters `(w_j, b_j) ∈ R^{d+1}` drawn
//! uniformly from the ℓ¹ unit sphere `‖w‖₁ + |b| = 1`. A [`Potential`] pairs a
//! feature set with coefficients `a ∈ R^m` and evaluates
//! `V(x) = (1/m) Σ_j a_j σ(w_j·x + b_j)`.
//!
//! Points are augmented as `x̃ = (x, 1)` so that `w_j·x̃ = w_j·x + b_j`.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::numeric;

/// Activation applied to the pre-activation `w·x̃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `σ_β(z) = log(1 + e^{βz}) / β`; its derivative is Lipschitz.
    SmoothedRelu {
        beta: f64,
    },
}

impl Activation {
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::SmoothedRelu { beta } => {
                let t = beta * z;
                let sp = if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                };
                sp / beta
            }
        }
    }

    /// Derivative in `z`. The ReLU subgradient at `0` is taken to be `0`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SmoothedRelu { beta } => {
                let t = beta * z;
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
        }
    }
}

/// `m` fixed features on the ℓ¹ unit sphere of `R^{d+1}`, stored row-major as
/// `[w_0, …, w_{d-1}, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    d: usize,
    m: usize,
    seed: u64,
    activation: Activation,
    params: Vec<f64>,
}

/// Draws `m` i.i.d. features uniformly from the ℓ¹ unit sphere in `R^{d+1}`.
///
/// Each component is `sign_i · e_i / Σ e`, with `e_i` standard exponentials
/// and independent fair signs. The result is a pure function of
/// `(d, m, seed)`.
pub fn sample_features(d: usize, m: usize, seed: u64) -> Result<FeatureSet> {
    sample_features_with(d, m, seed, Activation::Relu)
}

pub fn sample_features_with(d: usize, m: usize, seed: u64, activation: Activation) -> Result<FeatureSet> {
    if d == 0 {
        return Err(invalid("d must be at least 1"));
    }
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = d + 1;
    let mut params = Vec::with_capacity(m * k);
    let mut row = vec![0.0; k];
    for _ in 0..m {
        let mut total = 0.0;
        for r in row.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *r = e;
            total += e;
        }
        for r in row.iter_mut() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *r = sign * *r / total;
        }
        params.extend_from_slice(&row);
    }
    Ok(FeatureSet {
        d,
        m,
        seed,
        activation,
        params,
    })
}

impl FeatureSet {
    /// Builds a feature set from explicit rows `[w…, b]`. Rows are not
    /// required to lie on the sphere (hand-built test features often don't).
    pub fn from_rows(d: usize, rows: &[Vec<f64>], seed: u64, activation: Activation) -> Result<Self> {
        if d == 0 || rows.is_empty() {
            return Err(invalid("feature set needs d >= 1 and at least one row"));
        }
        let mut params = Vec::with_capacity(rows.len() * (d + 1));
        for r in rows {
            check_dim(d + 1, r.len())?;
            params.extend_from_slice(r);
        }
        Ok(FeatureSet {
            d,
            m: rows.len(),
            seed,
            activation,
            params,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Row `j` as `[w…, b]`.
    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        let k = self.d + 1;
        &self.params[j * k..(j + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.params.chunks_exact(self.d + 1)
    }

    /// `w_j·x + b_j`.
    #[inline]
    pub fn preactivation(&self, j: usize, x: &[f64]) -> f64 {
        let r = self.row(j);
        let mut z = r[self.d];
        for (w, xi) in r[..self.d].iter().zip(x) {
            z += w * xi;
        }
        z
    }

    #[inline]
    pub fn activate(&self, j: usize, x: &[f64]) -> f64 {
        self.activation.value(self.preactivation(j, x))
    }

    /// Same features, different activation.
    pub fn with_activation(&self, activation: Activation) -> Self {
        FeatureSet {
            activation,
            ..self.clone()
        }
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("feature subset must be nonempty"));
        }
        let mut params = Vec::with_capacity(indices.len() * (self.d + 1));
        for &j in indices {
            if j >= self.m {
                return Err(invalid(format!("feature index {j} out of range")));
            }
            params.extend_from_slice(self.row(j));
        }
        Ok(FeatureSet {
            d: self.d,
            m: indices.len(),
            seed: self.seed,
            activation: self.activation,
            params,
        })
    }
}

/// The `2(d+1)` signed coordinate directions `±e_i` of `R^{d+1}`.
pub fn coordinate_features(d: usize, activation: Activation) -> Result<FeatureSet> {
    let k = d + 1;
    let mut rows = Vec::with_capacity(2 * k);
    for i in 0..k {
        for sign in [1.0, -1.0] {
            let mut r = vec![0.0; k];
            r[i] = sign;
            rows.push(r);
        }
    }
    FeatureSet::from_rows(d, &rows, 0, activation)
}

/// Monte-Carlo estimate of the RKHS kernel:
/// `k(x, x') = (1/m) Σ_j σ(w_j·x̃) σ(w_j·x̃')`.
pub fn empirical_kernel(features: &FeatureSet, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(features.d(), x.len())?;
    check_dim(features.d(), y.len())?;
    let mut acc = 0.0;
    for j in 0..features.m() {
        acc += features.activate(j, x) * features.activate(j, y);
    }
    Ok(acc / features.m() as f64)
}

/// A random-feature potential `V(x) = (1/m) Σ a_j σ(w_j·x̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    features: Arc<FeatureSet>,
    coeffs: Vec<f64>,
}

impl Potential {
    pub fn new(features: Arc<FeatureSet>, coeffs: Vec<f64>) -> Result<Self> {
        check_dim(features.m(), coeffs.len())?;
        Ok(Potential { features, coeffs })
    }

    pub fn zeros(features: Arc<FeatureSet>) -> Self {
        let m = features.m();
        Potential {
            features,
            coeffs: vec![0.0; m],
        }
    }

    /// All coefficients equal to `value`.
    pub fn constant(features: Arc<FeatureSet>, value: f64) -> Self {
        let m = features.m();
        Potential {
            features,
            coeffs: vec![value; m],
        }
    }

    pub fn features(&self) -> &Arc<FeatureSet> {
        &self.features
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn m(&self) -> usize {
        self.features.m()
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        Potential::new(self.features.clone(), coeffs)
    }

    /// `V(x)`. Points outside the box are allowed.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d(), x.len())?;
        Ok(self.value(x))
    }

    /// Unchecked evaluation; `x.len()` must equal `d`.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let f = &self.features;
        let mut acc = 0.0;
        for (j, a) in self.coeffs.iter().enumerate() {
            acc += a * f.activate(j, x);
        }
        acc / f.m() as f64
    }

    /// `∇V(x) = (1/m) Σ a_j σ'(w_j·x̃) w_j`, written into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let f = &self.features;
        let d = f.d();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, a) in self.coeffs.iter().enumerate() {
            let s = f.activation().derivative(f.preactivation(j, x));
            if s != 0.0 {
                let r = f.row(j);
                for k in 0..d {
                    out[k] += a * s * r[k];
                }
            }
        }
        let inv = 1.0 / f.m() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    /// Empirical `L²(ρ₀)` norm of the coefficients, `sqrt((1/m) Σ a_j²)`.
    pub fn rkhs_norm(&self) -> f64 {
        rkhs_norm(&self.coeffs)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PotentialFile {
            schema_version: 1,
            d: self.d(),
            m: self.m(),
            seed: self.features.seed(),
            activation: self.features.activation(),
            features: self.features.rows().map(|r| r.to_vec()).collect(),
            coeffs: self.coeffs.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PotentialFile = serde_json::from_str(text)?;
        if file.schema_version != 1 {
            return Err(invalid(format!(
                "unsupported potential schema_version {}",
                file.schema_version
            )));
        }
        check_dim(file.m, file.features.len())?;
        let features = FeatureSet::from_rows(file.d, &file.features, file.seed, file.activation)?;
        Potential::new(Arc::new(features), file.coeffs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Potential::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `sqrt((1/m) Σ a_j²)`.
pub fn rkhs_norm(coeffs: &[f64]) -> f64 {
    if coeffs.is_empty() {
        return 0.0;
    }
    numeric::rms(coeffs)
}

#[derive(Serialize, Deserialize)]
struct PotentialFile {
    schema_version: u32,
    d: usize,
    m: usize,
    seed: u64,
    activation: Activation,
    features: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
}

/// Feature activations `σ(w_j·x̃_i)` on a fixed point set, row-major
/// (`rows × m`). Training loops reuse one table for every step.
#[derive(Clone, Debug)]
pub struct ActivationTable {
    rows: usize,
    m: usize,
    values: Vec<f64>,
}

impl ActivationTable {
    /// `points` is row-major `n × d`.
    pub fn new(features: &FeatureSet, points: &[f64]) -> Self {
        let d = features.d();
        let m = features.m();
        let rows = points.len() / d;
        let mut values = vec![0.0; rows * m];
        values.par_chunks_mut(m).zip(points.par_chunks(d)).for_each(|(out, x)| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = features.activate(j, x);
            }
        });
        ActivationTable { rows, m, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    /// `V_i = (1/m) Σ_j a_j σ_ij` for every row.
    pub fn potential(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.potential_into(coeffs, &mut out);
        out
    }

    pub fn potential_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.m);
        let inv = 1.0 / self.m as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o = numeric::dot(self.row(i), coeffs) * inv;
        }
    }

    /// Weighted column sums `e_j = Σ_i weights_i σ_ij`; with probability
    /// weights this is the mean embedding `E[σ_j]`.
    pub fn embedding(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.embedding_into(weights, &mut out);
        out
    }

    pub fn embedding_into(&self, weights: &[f64], out: &mut [f64]) {
        debug_assert_eq!(weights.len(), self.rows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                numeric::axpy(w, self.row(i), out);
            }
        }
    }

    /// Column means, i.e. the embedding under uniform weights.
    pub fn uniform_embedding(&self) -> Vec<f64> {
        let w = vec![1.0 / self.rows as f64; self.rows];
        self.embedding(&w)
    }
}

/// A finite scaled two-layer network `V(x) = (1/m) Σ a_j σ(w_j·x + b_j)`
/// in which every particle `(a_j, w_j, b_j)` is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    d: usize,
    m: usize,
    beta: f64,
    /// Row-major `m × (d+2)`: `[a, w_0, …, w_{d-1}, b]`.
    particles: Vec<f64>,
}

impl TwoLayerNet {
    pub fn new(d: usize, beta: f64, particles: Vec<f64>) -> Result<Self> {
        if d == 0 || particles.is_empty() || !particles.len().is_multiple_of(d + 2) {
            return Err(invalid("particles must be a nonempty m × (d+2) array"));
        }
        if !(beta > 0.0) {
            return Err(invalid("smoothing beta must be positive"));
        }
        Ok(TwoLayerNet {
            d,
            m: particles.len() / (d + 2),
            beta,
            particles,
        })
    }

    /// Particles `(a_j, w_j, b_j)` taken from a feature set and coefficients.
    pub fn from_features(features: &FeatureSet, coeffs: &[f64], beta: f64) -> Result<Self> {
        check_dim(features.m(), coeffs.len())?;
        let d = features.d();
        let mut particles = Vec::with_capacity(features.m() * (d + 2));
        for (row, a) in features.rows().zip(coeffs) {
            particles.push(*a);
            particles.extend_from_slice(row);
        }
        TwoLayerNet::new(d, beta, particles)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn activation(&self) -> Activation {
        Activation::SmoothedRelu { beta: self.beta }
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn particles_mut(&mut self) -> &mut [f64] {
        &mut self.particles
    }

    #[inline]
    pub fn particle(&self, j: usize) -> &[f64] {
        let k = self.d + 2;
        &self.particles[j * k..(j + 1) * k]
    }

    /// Hidden-layer view: rows `[w…, b]` with the smoothed activation.
    pub fn hidden_features(&self) -> FeatureSet {
        let rows: Vec<Vec<f64>> = (0..self.m).map(|j| self.particle(j)[1..].to_vec()).collect();
        FeatureSet::from_rows(self.d, &rows, 0, self.activation()).expect("particle rows are well formed")
    }

    /// Output weights `a_j`.
    pub fn output_weights(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.particle(j)[0]).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x.len())?;
        let act = self.activation();
        let mut acc = 0.0;
        for j in 0..self.m {
            let p = self.particle(j);
            let mut z = p[self.d + 1];
            for k in 0..self.d {
                z += p[1 + k] * x[k];
            }
            acc += p[0] * act.value(z);
        }
        Ok(acc / self.m as f64)
    }
}
