//! Kernel-expansion predicates trained under pointwise, consistency and
//! logical constraints.
//!
//! Each predicate is `p_j(x) = Σ_s α_s k_j(x_s, x) + b_j` over its constraint
//! sites `𝒮_j`. The Gram matrix on `𝒮_j` is factored as `K ≈ L Lᵀ` by a
//! pivoted Cholesky decomposition; the QP works with `p_j = Lβ + b_j` and
//! `‖ω_j‖² = ‖β‖²`, and `α` is recovered on the pivot points afterwards.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraint::{soft_constraints, SoftConstraint, VariableResolver};
use crate::error::{Error, Result};
use crate::ground::GroundOptions;
use crate::parser::SourceKb;
use crate::qp::{self, Basis, ConstraintMatrix, KktResiduals, QpProblem, QpStatus, SiteBlock, SiteMatrix, SiteRow};

/// Pivots whose remaining diagonal falls below this fraction of the
/// largest kernel diagonal are dropped from the factorization.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    Polynomial { degree: u32, offset: f64 },
    Linear,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(Error::Kernel(format!("sigma must be positive, got {sigma}"))),
            KernelSpec::Polynomial { degree: 0, .. } => Err(Error::Kernel("polynomial degree must be at least 1".into())),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
            KernelSpec::Linear => dot(x, y),
        }
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Supervised and unsupervised points of one predicate.
#[derive(Clone, Debug, PartialEq)]
pub struct PredicateData {
    pub name: String,
    pub kernel: KernelSpec,
    /// Points with labels in `{−1, +1}`.
    pub labeled: Vec<(Vec<f64>, f64)>,
    pub unlabeled: Vec<Vec<f64>>,
}

impl PredicateData {
    /// `𝒮_j = 𝒰_j ∪ ℒ_j'`, duplicates removed, first occurrence kept.
    pub fn sites(&self) -> Vec<Vec<f64>> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for x in self.unlabeled.iter().chain(self.labeled.iter().map(|(x, _)| x)) {
            if seen.insert(point_key(x), out.len()).is_none() {
                out.push(x.clone());
            }
        }
        out
    }

    fn dim(&self) -> Option<usize> {
        self.unlabeled.first().or(self.labeled.first().map(|(x, _)| x)).map(Vec::len)
    }
}

fn point_key(x: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 are the same point
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSets {
    pub predicates: Vec<PredicateData>,
    /// Points named by knowledge-base constants; a grounded atom `P(c)` is
    /// the site of `P` at the point of `c` (arguments are concatenated).
    pub constants: BTreeMap<String, Vec<f64>>,
}

impl TrainingSets {
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for p in &self.predicates {
            if !names.insert(&p.name) {
                return Err(Error::Kernel(format!("predicate `{}` listed twice", p.name)));
            }
            p.kernel.validate()?;
            let dim = p.dim();
            for (x, y) in &p.labeled {
                if *y != 1.0 && *y != -1.0 {
                    return Err(Error::Kernel(format!("label {y} of `{}` is not ±1", p.name)));
                }
                if Some(x.len()) != dim {
                    return Err(Error::Dimension(format!("points of `{}` have different dimensions", p.name)));
                }
            }
            if p.unlabeled.iter().any(|x| Some(x.len()) != dim) {
                return Err(Error::Dimension(format!("points of `{}` have different dimensions", p.name)));
            }
        }
        Ok(())
    }
}

/// Resolves grounded atoms `P(c1,…)` to global site indices.
struct SiteResolver<'a> {
    constants: &'a BTreeMap<String, Vec<f64>>,
    sites: BTreeMap<(&'a str, Vec<u64>), usize>,
}

impl<'a> SiteResolver<'a> {
    fn new(data: &'a TrainingSets) -> Self {
        let mut sites = BTreeMap::new();
        let mut offset = 0;
        for p in &data.predicates {
            let s = p.sites();
            for (i, x) in s.iter().enumerate() {
                sites.insert((p.name.as_str(), point_key(x)), offset + i);
            }
            offset += s.len();
        }
        SiteResolver { constants: &data.constants, sites }
    }
}

impl VariableResolver for SiteResolver<'_> {
    fn index(&self, name: &str) -> Option<usize> {
        let (pred, rest) = name.split_once('(')?;
        let args = rest.strip_suffix(')')?;
        let mut point = Vec::new();
        for c in args.split(',') {
            point.extend_from_slice(self.constants.get(c)?);
        }
        self.sites.get(&(pred, point_key(&point))).copied()
    }
}

/// Logical constraints of `kb` over the sites of `data`. Every grounded
/// atom must name a site of its predicate.
pub fn logic_constraints(kb: &SourceKb, data: &TrainingSets, opts: GroundOptions) -> Result<Vec<SoftConstraint>> {
    let resolver = SiteResolver::new(data);
    soft_constraints(kb, &resolver, opts).map_err(|e| match e {
        Error::Grounding(m) => Error::Kernel(format!("logical constraint references a point outside every 𝒮_j: {m}")),
        other => other,
    })
}

/// Pivoted partial Cholesky factor `K ≈ L Lᵀ` (columns in pivot order).
pub fn pivoted_cholesky(k: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, Vec<usize>) {
    let n = k.nrows();
    let mut d: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    let stop = rel_tol * d.iter().fold(0.0f64, |a, &b| a.max(b)).max(f64::MIN_POSITIVE);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut used = vec![false; n];
    loop {
        let mut best = None;
        for i in 0..n {
            if !used[i] && best.is_none_or(|b: usize| d[i] > d[b]) {
                best = Some(i);
            }
        }
        let Some(p) = best else { break };
        if d[p] <= stop {
            break;
        }
        let root = d[p].sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            if used[i] {
                continue;
            }
            let mut v = k[(i, p)];
            for c in &cols {
                v -= c[i] * c[p];
            }
            col[i] = v / root;
        }
        col[p] = root;
        used[p] = true;
        for i in 0..n {
            if !used[i] {
                d[i] -= col[i] * col[i];
            }
        }
        cols.push(col);
        pivots.push(p);
    }
    let l = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    (l, pivots)
}

/// Factorization and variable layout of one predicate.
#[derive(Clone, Debug)]
pub struct PredicateBlock {
    pub name: String,
    pub kernel: KernelSpec,
    pub sites: Vec<Vec<f64>>,
    pub site_offset: usize,
    pub var_offset: usize,
    pub l: DMatrix<f64>,
    pub pivots: Vec<usize>,
}

impl PredicateBlock {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn bias_index(&self) -> usize {
        self.var_offset + self.rank()
    }
}

/// The assembled primal problem with its bookkeeping.
#[derive(Clone, Debug)]
pub struct KernelProblem {
    pub qp: QpProblem,
    pub blocks: Vec<PredicateBlock>,
    /// (predicate, global site) of each supervision, aligned with its slack.
    pub supervisions: Vec<(usize, usize, f64)>,
    pub pointwise_offset: usize,
    pub logic_offset: usize,
    pub constraints: Vec<SoftConstraint>,
    pub c1: f64,
    pub c2: f64,
}

impl KernelProblem {
    pub fn n_sites(&self) -> usize {
        self.blocks.iter().map(|b| b.sites.len()).sum()
    }

    /// Site values `p̄` for a decision vector.
    pub fn site_values(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_sites());
        for b in &self.blocks {
            let beta = DVector::from_column_slice(&z[b.var_offset..b.var_offset + b.rank()]);
            let vals = &b.l * beta;
            let bias = z[b.bias_index()];
            out.extend(vals.iter().map(|v| v + bias));
        }
        out
    }

    /// Row counts: (pointwise, consistency, logic).
    pub fn row_counts(&self) -> (usize, usize, usize) {
        let logic = self.constraints.iter().map(|c| c.rows.len()).sum();
        (self.supervisions.len(), 2 * self.n_sites(), logic)
    }
}

/// Builds
///
/// ```text
/// min ½ Σ_j ‖ω_j‖² + C₁ Σ ξ_l + C₂ Σ_h w_h ξ_h
///   s.t. y_l (2 p_j(x_l) − 1) ≥ 1 − 2ξ_l,   0 ≤ p_j(x_s) ≤ 1,
///        M_i^h · p̄ + q_i^h ≤ ξ_h,           ξ ≥ 0
/// ```
///
/// over `z = (β_1, b_1, …, β_J, b_J, ξ_pointwise, ξ_logic)`. The logical
/// constraints index global sites (predicates concatenated in order).
pub fn assemble_primal(data: &TrainingSets, logic: &[SoftConstraint], c1: f64, c2: f64) -> Result<KernelProblem> {
    data.validate()?;
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Kernel(format!("C1 and C2 must be positive, got {c1} and {c2}")));
    }
    let mut blocks = Vec::new();
    let mut site_offset = 0;
    let mut var_offset = 0;
    for p in &data.predicates {
        let sites = p.sites();
        let k = p.kernel.gram(&sites);
        let (l, pivots) = pivoted_cholesky(&k, RANK_TOL);
        let r = pivots.len();
        blocks.push(PredicateBlock {
            name: p.name.clone(),
            kernel: p.kernel,
            site_offset,
            var_offset,
            l,
            pivots,
            sites,
        });
        site_offset += blocks.last().unwrap().sites.len();
        var_offset += r + 1;
    }
    let n_sites = site_offset;
    let n_basis = var_offset;

    let mut supervisions = Vec::new();
    for (j, p) in data.predicates.iter().enumerate() {
        let index: BTreeMap<Vec<u64>, usize> = blocks[j].sites.iter().enumerate().map(|(i, x)| (point_key(x), i)).collect();
        for (x, y) in &p.labeled {
            supervisions.push((j, blocks[j].site_offset + index[&point_key(x)], *y));
        }
    }
    let pointwise_offset = n_basis;
    let logic_offset = n_basis + supervisions.len();
    let n = logic_offset + logic.len();

    let mut q = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let upper = DVector::from_element(n, f64::INFINITY);
    for b in &blocks {
        for i in b.var_offset..b.var_offset + b.rank() {
            q[(i, i)] = 1.0;
        }
    }
    for k in pointwise_offset..logic_offset {
        c[k] = c1;
        lower[k] = 0.0;
    }
    for (h, sc) in logic.iter().enumerate() {
        if sc.weight < 0.0 {
            return Err(Error::NegativeWeight { rule: sc.rule.clone(), weight: sc.weight });
        }
        c[logic_offset + h] = c2 * sc.weight;
        lower[logic_offset + h] = 0.0;
    }

    let mut rows = Vec::new();
    let mut b = Vec::new();
    for (l, &(_, site, y)) in supervisions.iter().enumerate() {
        // y(2p − 1) ≥ 1 − 2ξ  ⇔  −2y p − 2ξ ≤ −1 − y
        rows.push(SiteRow { sites: vec![(site, -2.0 * y)], direct: vec![(pointwise_offset + l, -2.0)] });
        b.push(-1.0 - y);
    }
    for s in 0..n_sites {
        rows.push(SiteRow { sites: vec![(s, 1.0)], direct: vec![] });
        b.push(1.0);
        rows.push(SiteRow { sites: vec![(s, -1.0)], direct: vec![] });
        b.push(0.0);
    }
    for (h, sc) in logic.iter().enumerate() {
        for row in &sc.rows {
            if let Some(&(i, _)) = row.terms.iter().find(|(i, _)| *i >= n_sites) {
                return Err(Error::Kernel(format!("logical row references site {i}, only {n_sites} sites exist")));
            }
            rows.push(SiteRow { sites: row.terms.clone(), direct: vec![(logic_offset + h, -1.0)] });
            b.push(-row.constant);
        }
    }
    let site_blocks = blocks
        .iter()
        .map(|blk| {
            let mut v = DMatrix::from_element(blk.sites.len(), blk.rank() + 1, 1.0);
            v.view_mut((0, 0), (blk.sites.len(), blk.rank())).copy_from(&blk.l);
            SiteBlock { var_offset: blk.var_offset, basis: Basis::Dense(v) }
        })
        .collect();
    let qp = QpProblem {
        q,
        c,
        a: ConstraintMatrix::Sites(SiteMatrix { n_vars: n, blocks: site_blocks, rows }),
        b: DVector::from_vec(b),
        lower,
        upper,
    };
    Ok(KernelProblem { qp, blocks, supervisions, pointwise_offset, logic_offset, constraints: logic.to_vec(), c1, c2 })
}

/// A trained predicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateModel {
    pub name: String,
    pub kernel: KernelSpec,
    pub points: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub bias: f64,
}

impl PredicateModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if let Some(p) = self.points.first() {
            if p.len() != x.len() {
                return Err(Error::Dimension(format!("`{}` expects {} features, got {}", self.name, p.len(), x.len())));
            }
        }
        Ok(self.bias + self.points.iter().zip(&self.alpha).filter(|(_, a)| **a != 0.0).map(|(p, a)| a * self.kernel.eval(p, x)).sum::<f64>())
    }

    /// `αᵀ K α`, the squared feature-space norm.
    pub fn norm_squared(&self) -> f64 {
        let a = DVector::from_column_slice(&self.alpha);
        a.dot(&(self.kernel.gram(&self.points) * &a))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub predicates: Vec<PredicateModel>,
    pub c1: f64,
    pub c2: f64,
    pub pointwise_slacks: Vec<f64>,
    pub logic_slacks: Vec<f64>,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub objective: f64,
}

impl KernelModel {
    pub fn predicate(&self, name: &str) -> Result<&PredicateModel> {
        self.predicates.iter().find(|p| p.name == name).ok_or_else(|| Error::Kernel(format!("unknown predicate `{name}`")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: KernelModel = serde_json::from_str(text)?;
        for p in &m.predicates {
            p.kernel.validate()?;
            if p.points.len() != p.alpha.len() {
                return Err(Error::Kernel(format!("`{}` has {} points and {} coefficients", p.name, p.points.len(), p.alpha.len())));
            }
        }
        Ok(m)
    }
}

/// Evaluates predicate `name` of `model` at `x`. Values are not clipped.
pub fn predict(model: &KernelModel, name: &str, x: &[f64]) -> Result<f64> {
    model.predicate(name)?.predict(x)
}

/// Recovers a model from a decision vector of `problem`.
pub fn model_from_solution(problem: &KernelProblem, z: &[f64]) -> KernelModel {
    let mut predicates = Vec::new();
    for b in &problem.blocks {
        let r = b.rank();
        let beta = DVector::from_column_slice(&z[b.var_offset..b.var_offset + r]);
        let t = DMatrix::from_fn(r, r, |i, j| b.l[(b.pivots[i], j)]);
        let alpha_p = t.transpose().solve_upper_triangular(&beta).unwrap_or_else(|| DVector::zeros(r));
        let mut alpha = vec![0.0; b.sites.len()];
        for (k, &p) in b.pivots.iter().enumerate() {
            alpha[p] = alpha_p[k];
        }
        predicates.push(PredicateModel { name: b.name.clone(), kernel: b.kernel, points: b.sites.clone(), alpha, bias: z[b.bias_index()] });
    }
    KernelModel {
        predicates,
        c1: problem.c1,
        c2: problem.c2,
        pointwise_slacks: z[problem.pointwise_offset..problem.logic_offset].to_vec(),
        logic_slacks: z[problem.logic_offset..].to_vec(),
        status: QpStatus::Solved,
        residuals: KktResiduals::default(),
        objective: 0.0,
    }
}

/// Solves the primal problem and extracts the model.
pub fn train(problem: &KernelProblem, tol: f64, max_iter: usize) -> Result<KernelModel> {
    let sol = qp::solve(&problem.qp, tol, max_iter)?.require_solved()?;
    let mut m = model_from_solution(problem, &sol.z);
    m.status = sol.status;
    m.residuals = sol.residuals;
    m.objective = sol.objective;
    Ok(m)
}

/// Rows of a dataset file: optional id, features, optional label.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Empty when the file has no `id` column.
    pub ids: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<Option<f64>>,
}

/// Reads CSV with header `[id,]x1,…,xn,label`; a blank label marks an
/// unsupervised point.
pub fn read_dataset(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let has_id = header.get(0) == Some("id");
    if header.iter().next_back() != Some("label") {
        return Err(Error::Values { line: 1, message: "last column must be `label`".into() });
    }
    let first = usize::from(has_id);
    let n_feat = header.len() - 1 - first;
    if n_feat == 0 {
        return Err(Error::Values { line: 1, message: "no feature columns".into() });
    }
    let mut ds = Dataset { ids: Vec::new(), points: Vec::new(), labels: Vec::new() };
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(csv_error)?;
        if rec.len() != header.len() {
            return Err(Error::Values { line, message: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        let mut x = Vec::with_capacity(n_feat);
        for f in first..first + n_feat {
            x.push(rec[f].parse::<f64>().map_err(|_| Error::Values { line, message: format!("`{}` is not a number", &rec[f]) })?);
        }
        let label = match &rec[header.len() - 1] {
            "" => None,
            "1" | "+1" | "1.0" => Some(1.0),
            "-1" | "-1.0" => Some(-1.0),
            other => return Err(Error::Values { line, message: format!("label `{other}` is not ±1") }),
        };
        if has_id {
            ds.ids.push(rec[0].to_string());
        }
        ds.points.push(x);
        ds.labels.push(label);
    }
    Ok(ds)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Values { line, message: e.to_string() }
}

impl PredicateData {
    pub fn from_dataset(name: impl Into<String>, kernel: KernelSpec, ds: &Dataset) -> Self {
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for (x, y) in ds.points.iter().zip(&ds.labels) {
            match y {
                Some(y) => labeled.push((x.clone(), *y)),
                None => unlabeled.push(x.clone()),
            }
        }
        PredicateData { name: name.into(), kernel, labeled, unlabeled }
    }
}
