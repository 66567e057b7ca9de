//! Discrete probability measures on `[-1,1]^d`.
//!
//! Absolutely continuous measures live on a midpoint tensor grid
//! ([`GridDensity`]); empirical measures are point clouds ([`SampleSet`]).
//! Integrals against the base measure `P` (uniform on the box) become grid
//! averages.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{ActivationTable, FeatureSet, Potential};
use crate::numeric;

/// Uniform tensor grid with `p` cells per axis and nodes at the cell centers
/// `x_i = -1 + (2i+1)/p`. Cells are indexed row-major with the last axis
/// fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    d: usize,
    p: usize,
}

impl Grid {
    pub fn new(d: usize, p: usize) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(invalid("grid needs d >= 1 and p >= 1"));
        }
        let cells = (p as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
        if cells > 1 << 31 {
            return Err(invalid(format!("grid {p}^{d} is too large")));
        }
        Ok(Grid { d, p })
    }

    /// Default resolution per dimension: 1024, 128, 48, 20, 12 for d = 1..5.
    pub fn default_for(d: usize) -> Result<Self> {
        let p = match d {
            1 => 1024,
            2 => 128,
            3 => 48,
            4 => 20,
            5 => 12,
            0 => return Err(invalid("d must be at least 1")),
            _ => ((2.5e5f64).powf(1.0 / d as f64).floor() as usize).max(2),
        };
        Grid::new(d, p)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn points_per_dim(&self) -> usize {
        self.p
    }

    pub fn cells(&self) -> usize {
        self.p.pow(self.d as u32)
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.p as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn node(&self, i: usize) -> f64 {
        -1.0 + (2 * i + 1) as f64 / self.p as f64
    }

    /// Per-axis node indices of cell `index`.
    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for k in (0..self.d).rev() {
            out[k] = index % self.p;
            index /= self.p;
        }
        out
    }

    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        let mut rem = index;
        for k in (0..self.d).rev() {
            out[k] = self.node(rem % self.p);
            rem /= self.p;
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.point_into(index, &mut out);
        out
    }

    /// All nodes, row-major `cells × d`.
    pub fn points(&self) -> Vec<f64> {
        let n = self.cells();
        let mut out = vec![0.0; n * self.d];
        for (i, chunk) in out.chunks_exact_mut(self.d).enumerate() {
            self.point_into(i, chunk);
        }
        out
    }

    /// Per-axis cell index containing coordinate `x` (clamped to the box).
    pub fn axis_cell(&self, x: f64) -> usize {
        let i = ((x + 1.0) / self.spacing()).floor();
        (i.max(0.0) as usize).min(self.p - 1)
    }

    /// Index of the cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        x.iter().fold(0, |acc, &xi| acc * self.p + self.axis_cell(xi))
    }

    /// Feature activations at every node.
    pub fn activation_table(&self, features: &FeatureSet) -> ActivationTable {
        ActivationTable::new(features, &self.points())
    }
}

/// A probability vector over the cells of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    mass: Vec<f64>,
}

impl GridDensity {
    /// Validates nonnegativity and unit total mass (within 1e-10).
    pub fn new(grid: Grid, mass: Vec<f64>) -> Result<Self> {
        check_dim(grid.cells(), mass.len())?;
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(invalid("density mass must be finite and nonnegative"));
        }
        let total = numeric::sum(&mass);
        if (total - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("density mass sums to {total}, not 1")));
        }
        Ok(GridDensity { grid, mass })
    }

    /// Normalizes nonnegative weights into a density.
    pub fn from_weights(grid: Grid, mut weights: Vec<f64>) -> Result<Self> {
        check_dim(grid.cells(), weights.len())?;
        let total = numeric::sum(&weights);
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Numeric("weights cannot be normalized".into()));
        }
        let inv = 1.0 / total;
        weights.iter_mut().for_each(|w| *w *= inv);
        Ok(GridDensity { grid, mass: weights })
    }

    pub fn uniform(grid: Grid) -> Self {
        let n = grid.cells();
        GridDensity {
            grid,
            mass: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(grid: Grid, cell: usize) -> Result<Self> {
        if cell >= grid.cells() {
            return Err(invalid("cell index out of range"));
        }
        let mut mass = vec![0.0; grid.cells()];
        mass[cell] = 1.0;
        Ok(GridDensity { grid, mass })
    }

    /// Gibbs density `∝ e^{-values}` on the grid nodes.
    pub fn from_potential_values(grid: Grid, values: &[f64]) -> Result<Self> {
        check_dim(grid.cells(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite potential value on the grid".into()));
        }
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        let (mass, _) = numeric::softmax(&neg);
        Ok(GridDensity { grid, mass })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, mass: Vec<f64>) -> Self {
        GridDensity { grid, mass }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// Density value (mass / cell volume) at each node.
    pub fn density_values(&self) -> Vec<f64> {
        let v = self.grid.cell_volume();
        self.mass.iter().map(|m| m / v).collect()
    }

    /// CSV with header `cell_index,x0,…,x{d-1},mass`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.grid.d();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cell_index".to_string()];
        header.extend((0..d).map(|k| format!("x{k}")));
        header.push("mass".into());
        w.write_record(&header)?;
        let mut x = vec![0.0; d];
        for (i, m) in self.mass.iter().enumerate() {
            self.grid.point_into(i, &mut x);
            let mut rec = vec![i.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            rec.push(m.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the format of [`write_csv`](Self::write_csv). The grid is
    /// recovered from the column count and the number of rows; node
    /// coordinates are not re-checked.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "cell_index" || &headers[headers.len() - 1] != "mass" {
            return Err(invalid("density CSV needs columns cell_index,x0,…,mass"));
        }
        let d = headers.len() - 2;
        let mut mass = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            check_dim(d + 2, rec.len())?;
            let field = &rec[d + 1];
            mass.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("bad mass '{field}'")))?,
            );
        }
        let p = (mass.len() as f64).powf(1.0 / d as f64).round() as usize;
        if p == 0 || p.checked_pow(d as u32) != Some(mass.len()) {
            return Err(invalid(format!(
                "{} rows is not a full {d}-dimensional grid",
                mass.len()
            )));
        }
        GridDensity::new(Grid::new(d, p)?, mass)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        GridDensity::read_csv(std::fs::File::open(path)?)
    }
}

/// A finite signed measure on the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedGridMeasure {
    grid: Grid,
    mass: Vec<f64>,
}

impl SignedGridMeasure {
    pub fn new(grid: Grid, mass: Vec<f64>) -> Result<Self> {
        check_dim(grid.cells(), mass.len())?;
        if mass.iter().any(|m| !m.is_finite()) {
            return Err(invalid("signed measure must be finite"));
        }
        Ok(SignedGridMeasure { grid, mass })
    }

    /// `p − q` for two densities on the same grid.
    pub fn difference(p: &GridDensity, q: &GridDensity) -> Result<Self> {
        same_grid(p.grid(), q.grid())?;
        let mass = p.mass.iter().zip(&q.mass).map(|(a, b)| a - b).collect();
        Ok(SignedGridMeasure { grid: p.grid, mass })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
}

/// `n` points in `[-1,1]^d`, the empirical measure `Q^{(n)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    d: usize,
    points: Vec<f64>,
    seed: Option<u64>,
}

impl SampleSet {
    /// `points` is row-major `n × d`; coordinates must lie in `[-1, 1]`.
    pub fn new(d: usize, points: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        if d == 0 || !points.len().is_multiple_of(d) {
            return Err(invalid("sample points must form an n × d array with d >= 1"));
        }
        if points.iter().any(|x| !(x.is_finite() && (-1.0..=1.0).contains(x))) {
            return Err(invalid("sample coordinates must lie in [-1, 1]"));
        }
        Ok(SampleSet { d, points, seed })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: Option<u64>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut points = Vec::with_capacity(rows.len() * d.max(1));
        for r in rows {
            check_dim(d, r.len())?;
            points.extend_from_slice(r);
        }
        SampleSet::new(d.max(1), points, seed)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.d..(k + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    /// CSV with header `x0,…,x{d-1}`, one row per point.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.d).map(|k| format!("x{k}")).collect();
        w.write_record(&header)?;
        for p in self.iter() {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let d = headers.len();
        for (k, h) in headers.iter().enumerate() {
            if h.trim() != format!("x{k}") {
                return Err(invalid(format!("unexpected sample CSV column '{h}'")));
            }
        }
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            check_dim(d, rec.len())?;
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad sample coordinate '{field}'")))?;
                points.push(v);
            }
        }
        SampleSet::new(d, points, None)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        SampleSet::read_csv(std::fs::File::open(path)?)
    }
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(invalid(format!(
            "grids differ: {}^{} vs {}^{}",
            a.points_per_dim(),
            a.d(),
            b.points_per_dim(),
            b.d()
        )))
    }
}

/// Potential values at every grid node.
pub fn potential_on_grid(pot: &Potential, grid: &Grid) -> Result<Vec<f64>> {
    check_dim(pot.d(), grid.d())?;
    Ok(grid.activation_table(pot.features()).potential(pot.coeffs()))
}

/// `Q = e^{-V} P / Z` on the grid: `mass_i = e^{-V(x_i)} / Σ_j e^{-V(x_j)}`.
pub fn density_from_potential(pot: &Potential, grid: &Grid) -> Result<GridDensity> {
    let values = potential_on_grid(pot, grid)?;
    GridDensity::from_potential_values(*grid, &values)
}

/// `log Z = log E_P[e^{-V}] = log((1/N) Σ_i e^{-V(x_i)})`.
pub fn log_partition(pot: &Potential, grid: &Grid) -> Result<f64> {
    let values = potential_on_grid(pot, grid)?;
    log_partition_from_values(&values)
}

pub fn log_partition_from_values(values: &[f64]) -> Result<f64> {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    let lz = numeric::log_sum_exp(&neg) - (values.len() as f64).ln();
    if lz.is_finite() {
        Ok(lz)
    } else {
        Err(Error::Numeric("log partition is not finite".into()))
    }
}

/// `KL(p‖q) = Σ p_i log(p_i/q_i)` with `0·log(0/q) = 0`. Returns `+∞` when
/// `p` charges a cell where `q` has no mass.
pub fn kl_divergence(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    same_grid(p.grid(), q.grid())?;
    Ok(kl_masses(p.mass(), q.mass()))
}

pub(crate) fn kl_masses(p: &[f64], q: &[f64]) -> f64 {
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            terms.push(pi * (pi / qi).ln());
        }
    }
    numeric::sum(&terms)
}

/// `E_q[f] = Σ_i q_i f(x_i)`.
pub fn expectation_on_grid<F: Fn(&[f64]) -> f64>(f: F, q: &GridDensity) -> f64 {
    let grid = q.grid();
    let mut x = vec![0.0; grid.d()];
    let terms: Vec<f64> = q
        .mass()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            grid.point_into(i, &mut x);
            m * f(&x)
        })
        .collect();
    numeric::sum(&terms)
}

/// `(1/n) Σ_k f(x_k)`.
pub fn expectation_on_samples<F: Fn(&[f64]) -> f64>(f: F, s: &SampleSet) -> Result<f64> {
    if s.is_empty() {
        return Err(invalid("expectation over an empty sample set"));
    }
    let terms: Vec<f64> = s.iter().map(f).collect();
    Ok(numeric::mean(&terms))
}

/// A measure accepted by the MMD routines.
#[derive(Clone, Copy, Debug)]
pub enum MeasureRef<'a> {
    Grid(&'a GridDensity),
    Signed(&'a SignedGridMeasure),
    Samples(&'a SampleSet),
}

impl MeasureRef<'_> {
    fn d(&self) -> usize {
        match self {
            MeasureRef::Grid(g) => g.grid().d(),
            MeasureRef::Signed(s) => s.grid().d(),
            MeasureRef::Samples(s) => s.d(),
        }
    }
}

/// Mean embedding `E_μ[σ(w_j·x̃)]` for every feature `j`. Sample atoms are
/// used at their exact locations.
pub fn mean_embedding(mu: MeasureRef<'_>, features: &FeatureSet) -> Result<Vec<f64>> {
    check_dim(features.d(), mu.d())?;
    Ok(match mu {
        MeasureRef::Grid(g) => g.grid().activation_table(features).embedding(g.mass()),
        MeasureRef::Signed(s) => s.grid().activation_table(features).embedding(s.mass()),
        MeasureRef::Samples(s) => {
            if s.is_empty() {
                return Err(invalid("empty sample set"));
            }
            sample_embedding(s, features)
        }
    })
}

const EMBED_CHUNK: usize = 4096;

/// Column means of `σ(w_j·x̃_k)` over the samples, in blocks of points so the
/// activation table never exceeds `EMBED_CHUNK × m`.
fn sample_embedding(s: &SampleSet, features: &FeatureSet) -> Vec<f64> {
    let d = s.d();
    if s.len() <= EMBED_CHUNK {
        return ActivationTable::new(features, s.points()).uniform_embedding();
    }
    let mut total = vec![0.0; features.m()];
    for block in s.points().chunks(EMBED_CHUNK * d) {
        let table = ActivationTable::new(features, block);
        let ones = vec![1.0; table.rows()];
        numeric::axpy(1.0, &table.embedding(&ones), &mut total);
    }
    let n = s.len() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    total
}

/// `(1/m) Σ_j (e_j − e'_j)²`.
pub fn mmd_sq_from_embeddings(e1: &[f64], e2: &[f64]) -> f64 {
    let diff: Vec<f64> = e1.iter().zip(e2).map(|(a, b)| a - b).collect();
    numeric::dot(&diff, &diff) / diff.len() as f64
}

/// Squared MMD `‖Σ_i c_i μ_i‖_k²` of a signed combination of measures under
/// the empirical feature kernel, via mean embeddings.
pub fn mmd_sq(terms: &[(f64, MeasureRef<'_>)], features: &FeatureSet) -> Result<f64> {
    let mut total = vec![0.0; features.m()];
    for (c, mu) in terms {
        let e = mean_embedding(*mu, features)?;
        numeric::axpy(*c, &e, &mut total);
    }
    Ok(numeric::dot(&total, &total) / features.m() as f64)
}

/// `‖μ − ν‖_k²`.
pub fn mmd_sq_between(mu: MeasureRef<'_>, nu: MeasureRef<'_>, features: &FeatureSet) -> Result<f64> {
    mmd_sq(&[(1.0, mu), (-1.0, nu)], features)
}

/// Both sides of `|log E_P[e^{-V₁}] − log E_P[e^{-V₂}]| ≤ ‖V₁ − V₂‖_∞` on the
/// grid, returned as `(gap, bound)`.
pub fn log_partition_lipschitz_check(v1: &Potential, v2: &Potential, grid: &Grid) -> Result<(f64, f64)> {
    check_dim(v1.d(), v2.d())?;
    let a = potential_on_grid(v1, grid)?;
    let b = potential_on_grid(v2, grid)?;
    let gap = (log_partition_from_values(&a)? - log_partition_from_values(&b)?).abs();
    let bound = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok((gap, bound))
}
