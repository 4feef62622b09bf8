//! Convex quadratic programs
//!
//! ```text
//! minimize ½ zᵀQz + cᵀz   subject to   Az ≤ b,  l ≤ z ≤ u
//! ```
//!
//! with a primal-dual interior-point solver and KKT residual reporting.

mod ipm;
pub mod linalg;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ipm::solve;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50_000;

/// Map from a contiguous range of variables to values at constraint sites.
#[derive(Clone, Debug, PartialEq)]
pub enum Basis {
    /// Site values are `V · z[range]`, one row of `V` per site.
    Dense(DMatrix<f64>),
    /// Site values are the variables themselves.
    Identity(usize),
}

impl Basis {
    pub fn n_sites(&self) -> usize {
        match self {
            Basis::Dense(v) => v.nrows(),
            Basis::Identity(n) => *n,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Basis::Dense(v) => v.ncols(),
            Basis::Identity(n) => *n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteBlock {
    pub var_offset: usize,
    pub basis: Basis,
}

/// One constraint row `Σ g_s · site_s + Σ e_k · z_k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiteRow {
    /// (global site index, coefficient)
    pub sites: Vec<(usize, f64)>,
    /// (variable index, coefficient) for variables outside every block
    pub direct: Vec<(usize, f64)>,
}

/// Constraint matrix factored through a small set of sites: `A = G·V + E`
/// with `V` block diagonal and `G`, `E` sparse. Sites are numbered by
/// concatenating the blocks in order.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteMatrix {
    pub n_vars: usize,
    pub blocks: Vec<SiteBlock>,
    pub rows: Vec<SiteRow>,
}

impl SiteMatrix {
    pub fn n_sites(&self) -> usize {
        self.blocks.iter().map(|b| b.basis.n_sites()).sum()
    }

    /// First global site index of each block.
    pub fn site_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for b in &self.blocks {
            out.push(acc);
            acc += b.basis.n_sites();
        }
        out
    }

    /// Values at every site for the point `z`.
    pub fn site_values(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_sites());
        let mut s0 = 0;
        for b in &self.blocks {
            let w = b.basis.width();
            let zb = z.rows(b.var_offset, w);
            match &b.basis {
                Basis::Dense(v) => out.rows_mut(s0, v.nrows()).gemv(1.0, v, &zb, 0.0),
                Basis::Identity(n) => out.rows_mut(s0, *n).copy_from(&zb),
            }
            s0 += b.basis.n_sites();
        }
        out
    }

    /// Adds `Vᵀ y` into the block variables of `out`.
    pub fn add_sites_transpose(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let mut s0 = 0;
        for b in &self.blocks {
            let n = b.basis.n_sites();
            let ys = y.rows(s0, n);
            let w = b.basis.width();
            let mut ob = out.rows_mut(b.var_offset, w);
            match &b.basis {
                Basis::Dense(v) => ob.gemv_tr(1.0, v, &ys, 1.0),
                Basis::Identity(_) => ob += ys,
            }
            s0 += n;
        }
    }

    fn validate(&self) -> Result<()> {
        let mut owner = vec![false; self.n_vars];
        for b in &self.blocks {
            if b.var_offset + b.basis.width() > self.n_vars {
                return Err(Error::Structure("site block exceeds the variable range".into()));
            }
            for k in b.var_offset..b.var_offset + b.basis.width() {
                if owner[k] {
                    return Err(Error::Structure(format!("variable {k} belongs to two site blocks")));
                }
                owner[k] = true;
            }
        }
        let n_sites = self.n_sites();
        for (r, row) in self.rows.iter().enumerate() {
            if row.sites.iter().any(|(s, _)| *s >= n_sites) {
                return Err(Error::Structure(format!("row {r} references a missing site")));
            }
            if row.direct.len() > 1 {
                return Err(Error::Structure(format!("row {r} has more than one direct variable")));
            }
            if row.direct.iter().any(|(k, _)| *k >= self.n_vars || owner[*k]) {
                return Err(Error::Structure(format!("row {r} has a direct term on a block variable")));
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.n_vars);
        let offsets = self.site_offsets();
        for (r, row) in self.rows.iter().enumerate() {
            for &(s, g) in &row.sites {
                let bi = offsets.partition_point(|&o| o <= s) - 1;
                let b = &self.blocks[bi];
                let local = s - offsets[bi];
                match &b.basis {
                    Basis::Dense(v) => {
                        for k in 0..v.ncols() {
                            a[(r, b.var_offset + k)] += g * v[(local, k)];
                        }
                    }
                    Basis::Identity(_) => a[(r, b.var_offset + local)] += g,
                }
            }
            for &(k, e) in &row.direct {
                a[(r, k)] += e;
            }
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintMatrix {
    Dense(DMatrix<f64>),
    Sites(SiteMatrix),
}

impl ConstraintMatrix {
    pub fn nrows(&self) -> usize {
        match self {
            ConstraintMatrix::Dense(a) => a.nrows(),
            ConstraintMatrix::Sites(s) => s.rows.len(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            ConstraintMatrix::Dense(a) => a.ncols(),
            ConstraintMatrix::Sites(s) => s.n_vars,
        }
    }

    pub fn mul(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintMatrix::Dense(a) => a * z,
            ConstraintMatrix::Sites(s) => {
                let sv = s.site_values(z);
                DVector::from_iterator(
                    s.rows.len(),
                    s.rows.iter().map(|row| {
                        row.sites.iter().map(|&(i, g)| g * sv[i]).sum::<f64>() + row.direct.iter().map(|&(k, e)| e * z[k]).sum::<f64>()
                    }),
                )
            }
        }
    }

    pub fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintMatrix::Dense(a) => a.tr_mul(y),
            ConstraintMatrix::Sites(s) => {
                let mut out = DVector::zeros(s.n_vars);
                let mut sy = DVector::zeros(s.n_sites());
                for (row, &yr) in s.rows.iter().zip(y.iter()) {
                    for &(i, g) in &row.sites {
                        sy[i] += g * yr;
                    }
                    for &(k, e) in &row.direct {
                        out[k] += e * yr;
                    }
                }
                s.add_sites_transpose(&sy, &mut out);
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ConstraintMatrix::Dense(a) => a.clone(),
            ConstraintMatrix::Sites(s) => s.to_dense(),
        }
    }
}

/// `minimize ½zᵀQz + cᵀz  s.t.  Az ≤ b, lower ≤ z ≤ upper`; infinite bounds
/// are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: ConstraintMatrix,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem over `n` variables.
    pub fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        QpProblem {
            q,
            c,
            a: ConstraintMatrix::Dense(DMatrix::zeros(0, n)),
            b: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.q * z)) + self.c.dot(z)
    }

    /// Dimensions, symmetry, bounds, site structure and positive
    /// semidefiniteness of `Q`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.q.nrows() != n || self.q.ncols() != n {
            return Err(Error::Dimension(format!("Q is {}x{}, expected {n}x{n}", self.q.nrows(), self.q.ncols())));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, expected {}x{n}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension("bound vectors do not match the variable count".into()));
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] || self.lower[i] == f64::INFINITY || self.upper[i] == f64::NEG_INFINITY {
                return Err(Error::Dimension(format!("empty box for variable {i}")));
            }
            for j in 0..i {
                if (self.q[(i, j)] - self.q[(j, i)]).abs() > 1e-10 {
                    return Err(Error::NotPsd(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        let non_finite = self.q.iter().chain(self.c.iter()).chain(self.b.iter()).any(|v| !v.is_finite());
        if non_finite {
            return Err(Error::Dimension("non-finite entry in Q, c or b".into()));
        }
        match &self.a {
            ConstraintMatrix::Dense(a) => {
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Dimension("non-finite entry in A".into()));
                }
                if !linalg::is_psd(&self.q) {
                    return Err(Error::NotPsd("Cholesky factorization failed".into()));
                }
            }
            ConstraintMatrix::Sites(s) => {
                s.validate()?;
                let (block, direct) = self.partition_vars(s);
                for &k in &direct {
                    if self.q[(k, k)] < 0.0 {
                        return Err(Error::NotPsd(format!("negative diagonal at {k}")));
                    }
                    if (0..n).any(|j| j != k && self.q[(k, j)] != 0.0) {
                        return Err(Error::Structure(format!("direct variable {k} is coupled in Q")));
                    }
                }
                let qb = self.q.select_rows(&block).select_columns(&block);
                if !linalg::is_psd(&qb) {
                    return Err(Error::NotPsd("Cholesky factorization failed".into()));
                }
            }
        }
        Ok(())
    }

    /// Block variables in block order, then the remaining (direct) variables.
    fn partition_vars(&self, s: &SiteMatrix) -> (Vec<usize>, Vec<usize>) {
        let mut in_block = vec![false; self.n_vars()];
        let mut block = Vec::new();
        for b in &s.blocks {
            for k in b.var_offset..b.var_offset + b.basis.width() {
                in_block[k] = true;
                block.push(k);
            }
        }
        let direct = (0..self.n_vars()).filter(|&k| !in_block[k]).collect();
        (block, direct)
    }

    pub fn to_json(&self) -> Result<String> {
        let a = self.a.to_dense();
        let file = QpFile {
            q: rows_of(&self.q),
            c: self.c.iter().copied().collect(),
            a: rows_of(&a),
            b: self.b.iter().copied().collect(),
            lower: self.lower.iter().map(|v| v.is_finite().then_some(*v)).collect(),
            upper: self.upper.iter().map(|v| v.is_finite().then_some(*v)).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: QpFile = serde_json::from_str(text)?;
        let n = f.c.len();
        let q = matrix_from_rows(&f.q, n, "Q")?;
        let a = matrix_from_rows(&f.a, n, "A")?;
        let p = QpProblem {
            q,
            c: DVector::from_vec(f.c),
            a: ConstraintMatrix::Dense(a),
            b: DVector::from_vec(f.b),
            lower: DVector::from_iterator(f.lower.len(), f.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY))),
            upper: DVector::from_iterator(f.upper.len(), f.upper.iter().map(|v| v.unwrap_or(f64::INFINITY))),
        };
        p.validate()?;
        Ok(p)
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, name: &str) -> Result<DMatrix<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::Dimension(format!("row of {name} has {} entries, expected {n}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct QpFile {
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIterations,
    /// Step lengths collapsed before the tolerance was reached.
    Stalled,
    Infeasible,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: Vec<f64>,
    /// Multipliers of `Az ≤ b`.
    pub lambda: Vec<f64>,
    /// Multipliers of `z ≥ lower` (zero where the bound is infinite).
    pub eta_lower: Vec<f64>,
    /// Multipliers of `z ≤ upper`.
    pub eta_upper: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// Complementarity measure after each iteration.
    pub mu_trace: Vec<f64>,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }

    /// Fails unless the solver reported success.
    pub fn require_solved(self) -> Result<Self> {
        if self.is_solved() {
            Ok(self)
        } else {
            Err(Error::Solver(format!("{:?} after {} iterations, residuals {:?}", self.status, self.iterations, self.residuals)))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// KKT residuals of a primal-dual point, computed directly from the data.
pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> Result<KktResiduals> {
    let n = p.n_vars();
    if s.z.len() != n || s.lambda.len() != p.n_rows() || s.eta_lower.len() != n || s.eta_upper.len() != n {
        return Err(Error::Dimension("solution does not match the problem".into()));
    }
    let z = DVector::from_column_slice(&s.z);
    let lambda = DVector::from_column_slice(&s.lambda);
    Ok(residuals_at(p, &z, &lambda, &DVector::from_column_slice(&s.eta_lower), &DVector::from_column_slice(&s.eta_upper)))
}

pub(crate) fn residuals_at(p: &QpProblem, z: &DVector<f64>, lambda: &DVector<f64>, eta_l: &DVector<f64>, eta_u: &DVector<f64>) -> KktResiduals {
    let grad = &p.q * z + &p.c + p.a.tr_mul(lambda) - eta_l + eta_u;
    let stationarity = grad.amax();
    let slack = p.a.mul(z) - &p.b;
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..slack.len() {
        primal = primal.max(slack[i]);
        complementarity = complementarity.max((lambda[i] * slack[i]).abs());
    }
    for i in 0..z.len() {
        if p.lower[i].is_finite() {
            primal = primal.max(p.lower[i] - z[i]);
            complementarity = complementarity.max((eta_l[i] * (z[i] - p.lower[i])).abs());
        }
        if p.upper[i].is_finite() {
            primal = primal.max(z[i] - p.upper[i]);
            complementarity = complementarity.max((eta_u[i] * (p.upper[i] - z[i])).abs());
        }
    }
    KktResiduals { stationarity, primal, complementarity }
}

#[cfg(test)]
mod tests;
