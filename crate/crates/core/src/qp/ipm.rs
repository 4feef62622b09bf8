//! Mehrotra predictor-corrector interior-point method.
//!
//! Inequalities carry slacks `w ≥ 0` (`Az + w = b`) and finite bounds carry
//! `t_l = z − l ≥ 0`, `t_u = u − z ≥ 0`. Each Newton step is reduced to
//! `(Q + AᵀD_wA + D_box) Δz = r`, factored either densely or through the
//! site structure of the constraint matrix.

use nalgebra::{DMatrix, DVector};

use super::linalg::{cholesky_solve, regularized_cholesky};
use super::{residuals_at, Basis, ConstraintMatrix, KktResiduals, QpProblem, QpSolution, QpStatus, SiteMatrix};
use crate::error::{Error, Result};

const STEP_FRACTION: f64 = 0.995;
const DIVERGENCE: f64 = 1e12;
const STALL_LIMIT: usize = 12;
const SHORT_STEP: f64 = 1e-2;
/// Extra iterations allowed after the tolerance is met, spent driving
/// complementarity towards `tol²` so degenerate active rows settle.
const POLISH_STEPS: usize = 15;

/// Solves the problem to the given KKT tolerance. Non-convergence is
/// reported through the status of the returned solution, not as an error.
pub fn solve(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Solver(format!("tolerance must be positive, got {tol}")));
    }
    let layout = match &p.a {
        ConstraintMatrix::Sites(s) => Some(SiteLayout::new(p, s)),
        ConstraintMatrix::Dense(_) => None,
    };
    let mut ipm = Ipm::start(p, layout.as_ref());
    if ipm.n_constraints() == 0 {
        return ipm.solve_unconstrained(tol);
    }
    ipm.run(tol, max_iter)
}

struct Ipm<'a> {
    p: &'a QpProblem,
    layout: Option<&'a SiteLayout>,
    lo: Vec<usize>,
    up: Vec<usize>,
    z: DVector<f64>,
    w: DVector<f64>,
    lambda: DVector<f64>,
    tl: DVector<f64>,
    etal: DVector<f64>,
    tu: DVector<f64>,
    etau: DVector<f64>,
}

/// A Newton direction in all primal and dual blocks.
struct Direction {
    z: DVector<f64>,
    w: DVector<f64>,
    lambda: DVector<f64>,
    tl: DVector<f64>,
    etal: DVector<f64>,
    tu: DVector<f64>,
    etau: DVector<f64>,
}

/// Right-hand sides of the linearized complementarity equations.
struct Centering {
    w: DVector<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
}

struct Residuals {
    dual: DVector<f64>,
    primal: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl<'a> Ipm<'a> {
    fn start(p: &'a QpProblem, layout: Option<&'a SiteLayout>) -> Self {
        let n = p.n_vars();
        let lo: Vec<usize> = (0..n).filter(|&i| p.lower[i].is_finite()).collect();
        let up: Vec<usize> = (0..n).filter(|&i| p.upper[i].is_finite()).collect();
        let z = DVector::from_fn(n, |i, _| 0.0f64.max(p.lower[i]).min(p.upper[i]));
        let w = (&p.b - p.a.mul(&z)).map(|v| v.max(1.0));
        let tl = DVector::from_iterator(lo.len(), lo.iter().map(|&i| (z[i] - p.lower[i]).max(1.0)));
        let tu = DVector::from_iterator(up.len(), up.iter().map(|&i| (p.upper[i] - z[i]).max(1.0)));
        Ipm {
            p,
            layout,
            z,
            lambda: DVector::from_element(w.len(), 1.0),
            w,
            etal: DVector::from_element(lo.len(), 1.0),
            tl,
            etau: DVector::from_element(up.len(), 1.0),
            tu,
            lo,
            up,
        }
    }

    fn n_constraints(&self) -> usize {
        self.w.len() + self.tl.len() + self.tu.len()
    }

    fn mu(&self) -> f64 {
        (self.w.dot(&self.lambda) + self.tl.dot(&self.etal) + self.tu.dot(&self.etau)) / self.n_constraints() as f64
    }

    fn full_etas(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.p.n_vars();
        let mut el = DVector::zeros(n);
        let mut eu = DVector::zeros(n);
        for (k, &i) in self.lo.iter().enumerate() {
            el[i] = self.etal[k];
        }
        for (k, &i) in self.up.iter().enumerate() {
            eu[i] = self.etau[k];
        }
        (el, eu)
    }

    fn kkt(&self) -> KktResiduals {
        let (el, eu) = self.full_etas();
        residuals_at(self.p, &self.z, &self.lambda, &el, &eu)
    }

    fn residuals(&self) -> Residuals {
        let p = self.p;
        let (el, eu) = self.full_etas();
        let dual = &p.q * &self.z + &p.c + p.a.tr_mul(&self.lambda) - el + eu;
        let primal = p.a.mul(&self.z) + &self.w - &p.b;
        let lower = DVector::from_iterator(self.lo.len(), self.lo.iter().enumerate().map(|(k, &i)| self.z[i] - self.tl[k] - p.lower[i]));
        let upper = DVector::from_iterator(self.up.len(), self.up.iter().enumerate().map(|(k, &i)| self.z[i] + self.tu[k] - p.upper[i]));
        Residuals { dual, primal, lower, upper }
    }

    fn solution(&self, status: QpStatus, iterations: usize, mu_trace: Vec<f64>) -> QpSolution {
        let (el, eu) = self.full_etas();
        QpSolution {
            status,
            objective: self.p.objective(&self.z),
            residuals: self.kkt(),
            z: self.z.iter().copied().collect(),
            lambda: self.lambda.iter().copied().collect(),
            eta_lower: el.iter().copied().collect(),
            eta_upper: eu.iter().copied().collect(),
            iterations,
            mu_trace,
        }
    }

    fn solve_unconstrained(&mut self, tol: f64) -> Result<QpSolution> {
        let n = self.p.n_vars();
        let status = if n == 0 {
            QpStatus::Solved
        } else {
            let (l, _) = regularized_cholesky(&self.p.q).ok_or_else(|| Error::Solver("singular quadratic term".into()))?;
            let mut z = -&self.p.c;
            cholesky_solve(&l, &mut z);
            self.z = z;
            if self.kkt().max() <= tol {
                QpStatus::Solved
            } else {
                QpStatus::Stalled
            }
        };
        Ok(self.solution(status, 1, Vec::new()))
    }

    fn run(&mut self, tol: f64, max_iter: usize) -> Result<QpSolution> {
        let mut mu_trace = Vec::new();
        let mut stalls = 0;
        let data_scale = self.p.c.amax().max(self.p.q.amax()).max(1.0);
        let mut converged: Option<(QpSolution, usize)> = None;
        for iter in 0..max_iter {
            let kkt = self.kkt();
            if kkt.max() <= tol {
                let polished = kkt.complementarity <= 1e-2 * tol * tol;
                match &converged {
                    None if !polished => converged = Some((self.solution(QpStatus::Solved, iter, mu_trace.clone()), iter)),
                    Some((_, first)) if !polished && iter - first < POLISH_STEPS => {}
                    _ => return Ok(self.solution(QpStatus::Solved, iter, mu_trace)),
                }
            } else if let Some((snapshot, _)) = converged {
                return Ok(snapshot);
            }
            let multipliers = self.lambda.amax().max(if self.etal.is_empty() { 0.0 } else { self.etal.amax() }).max(if self.etau.is_empty() {
                0.0
            } else {
                self.etau.amax()
            });
            if kkt.primal > tol && multipliers > DIVERGENCE * data_scale {
                return Ok(self.solution(QpStatus::Infeasible, iter, mu_trace));
            }
            let mu = self.mu();
            let res = self.residuals();
            let system = self.factor()?;

            let affine = Centering { w: -self.w.component_mul(&self.lambda), l: -self.tl.component_mul(&self.etal), u: -self.tu.component_mul(&self.etau) };
            let da = self.direction(&system, &res, &affine);
            let alpha_aff = self.max_step(&da);
            let mu_aff = self.mu_after(&da, alpha_aff);
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

            let corrected = Centering {
                w: affine.w.add_scalar(sigma * mu) - da.w.component_mul(&da.lambda),
                l: affine.l.add_scalar(sigma * mu) - da.tl.component_mul(&da.etal),
                u: affine.u.add_scalar(sigma * mu) - da.tu.component_mul(&da.etau),
            };
            let mut dir = self.direction(&system, &res, &corrected);
            let mut alpha = self.safe_step(&dir, mu).unwrap_or(0.0);
            // the corrector can make μ grow to first order; plain centering
            // always decreases it for small steps
            if alpha < SHORT_STEP {
                let centering = Centering { w: affine.w.add_scalar(0.5 * mu), l: affine.l.add_scalar(0.5 * mu), u: affine.u.add_scalar(0.5 * mu) };
                let alt = self.direction(&system, &res, &centering);
                let alt_alpha = self.safe_step(&alt, mu).unwrap_or(0.0);
                if alt_alpha > alpha {
                    dir = alt;
                    alpha = alt_alpha;
                }
            }
            if alpha < 1e-12 {
                stalls += 1;
                if stalls >= STALL_LIMIT {
                    if let Some((snapshot, _)) = converged {
                        return Ok(snapshot);
                    }
                    let status = if kkt.primal > tol { QpStatus::Infeasible } else { QpStatus::Stalled };
                    return Ok(self.solution(status, iter, mu_trace));
                }
            } else {
                stalls = 0;
                drop(system);
                self.take(&dir, alpha);
            }
            mu_trace.push(self.mu());
        }
        if let Some((snapshot, _)) = converged {
            if self.kkt().max() > tol {
                return Ok(snapshot);
            }
        }
        let status = if self.kkt().max() <= tol { QpStatus::Solved } else { QpStatus::MaxIterations };
        Ok(self.solution(status, max_iter, mu_trace))
    }

    /// Largest step (after the fraction-to-boundary rule) that does not
    /// increase `μ`, found by halving.
    fn safe_step(&self, d: &Direction, mu: f64) -> Option<f64> {
        let mut alpha = self.max_step(d);
        for _ in 0..40 {
            if self.mu_after(d, alpha) <= mu {
                return Some(alpha);
            }
            alpha *= 0.5;
        }
        None
    }

    fn max_step(&self, d: &Direction) -> f64 {
        let mut a: f64 = 1.0 / STEP_FRACTION;
        for (x, dx) in [
            (&self.w, &d.w),
            (&self.lambda, &d.lambda),
            (&self.tl, &d.tl),
            (&self.etal, &d.etal),
            (&self.tu, &d.tu),
            (&self.etau, &d.etau),
        ] {
            for (xi, di) in x.iter().zip(dx.iter()) {
                if *di < 0.0 {
                    a = a.min(-xi / di);
                }
            }
        }
        (STEP_FRACTION * a).min(1.0)
    }

    fn mu_after(&self, d: &Direction, alpha: f64) -> f64 {
        let pair = |x: &DVector<f64>, dx: &DVector<f64>, y: &DVector<f64>, dy: &DVector<f64>| -> f64 {
            x.iter().zip(dx.iter()).zip(y.iter().zip(dy.iter())).map(|((x, dx), (y, dy))| (x + alpha * dx) * (y + alpha * dy)).sum()
        };
        (pair(&self.w, &d.w, &self.lambda, &d.lambda) + pair(&self.tl, &d.tl, &self.etal, &d.etal) + pair(&self.tu, &d.tu, &self.etau, &d.etau))
            / self.n_constraints() as f64
    }

    fn take(&mut self, d: &Direction, alpha: f64) {
        self.z.axpy(alpha, &d.z, 1.0);
        self.w.axpy(alpha, &d.w, 1.0);
        self.lambda.axpy(alpha, &d.lambda, 1.0);
        self.tl.axpy(alpha, &d.tl, 1.0);
        self.etal.axpy(alpha, &d.etal, 1.0);
        self.tu.axpy(alpha, &d.tu, 1.0);
        self.etau.axpy(alpha, &d.etau, 1.0);
    }

    fn scalings(&self) -> (DVector<f64>, DVector<f64>) {
        let d_rows = self.lambda.component_div(&self.w);
        let mut d_box = DVector::zeros(self.p.n_vars());
        for (k, &i) in self.lo.iter().enumerate() {
            d_box[i] += self.etal[k] / self.tl[k];
        }
        for (k, &i) in self.up.iter().enumerate() {
            d_box[i] += self.etau[k] / self.tu[k];
        }
        (d_rows, d_box)
    }

    fn factor(&self) -> Result<NewtonSystem<'a>> {
        let (d_rows, d_box) = self.scalings();
        let p: &'a QpProblem = self.p;
        let factor = match (&p.a, self.layout) {
            (ConstraintMatrix::Dense(a), _) => dense_factor(self.p, a, &d_rows, &d_box)?,
            (ConstraintMatrix::Sites(s), Some(layout)) => Factor::Sites(layout.factor(self.p, s, &d_rows, &d_box)?),
            (ConstraintMatrix::Sites(_), None) => unreachable!("site layout is built for site matrices"),
        };
        Ok(NewtonSystem { factor, d_rows, d_box })
    }

    fn direction(&self, sys: &NewtonSystem, res: &Residuals, cent: &Centering) -> Direction {
        let p = self.p;
        // (rc_w + λ r_p) / w
        let row_term = (&cent.w + self.lambda.component_mul(&res.primal)).component_div(&self.w);
        let mut rhs = -&res.dual - p.a.tr_mul(&row_term);
        let low_term = (&cent.l - self.etal.component_mul(&res.lower)).component_div(&self.tl);
        let up_term = (&cent.u + self.etau.component_mul(&res.upper)).component_div(&self.tu);
        for (k, &i) in self.lo.iter().enumerate() {
            rhs[i] += low_term[k];
        }
        for (k, &i) in self.up.iter().enumerate() {
            rhs[i] -= up_term[k];
        }
        let dz = sys.solve_refined(p, &rhs);
        let adz = p.a.mul(&dz);
        let dw = -&res.primal - &adz;
        let dlambda = &row_term + sys.d_rows.component_mul(&adz);
        let dz_lo = DVector::from_iterator(self.lo.len(), self.lo.iter().map(|&i| dz[i]));
        let dz_up = DVector::from_iterator(self.up.len(), self.up.iter().map(|&i| dz[i]));
        let dtl = &dz_lo + &res.lower;
        let detal = &low_term - self.etal.component_mul(&dz_lo).component_div(&self.tl);
        let dtu = -&res.upper - &dz_up;
        let detau = &up_term + self.etau.component_mul(&dz_up).component_div(&self.tu);
        Direction { z: dz, w: dw, lambda: dlambda, tl: dtl, etal: detal, tu: dtu, etau: detau }
    }
}

enum Factor<'a> {
    Dense(DMatrix<f64>),
    Sites(SiteFactor<'a>),
}

struct NewtonSystem<'a> {
    factor: Factor<'a>,
    d_rows: DVector<f64>,
    d_box: DVector<f64>,
}

impl NewtonSystem<'_> {
    fn apply(&self, p: &QpProblem, x: &DVector<f64>) -> DVector<f64> {
        let ax = p.a.mul(x).component_mul(&self.d_rows);
        &p.q * x + self.d_box.component_mul(x) + p.a.tr_mul(&ax)
    }

    fn solve_once(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Dense(l) => {
                let mut x = rhs.clone();
                cholesky_solve(l, &mut x);
                x
            }
            Factor::Sites(f) => f.solve(rhs),
        }
    }

    /// Solve followed by two steps of iterative refinement against the
    /// unfactored operator.
    fn solve_refined(&self, p: &QpProblem, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve_once(rhs);
        for _ in 0..2 {
            let r = rhs - self.apply(p, &x);
            x += self.solve_once(&r);
        }
        x
    }
}

fn dense_factor(p: &QpProblem, a: &DMatrix<f64>, d_rows: &DVector<f64>, d_box: &DVector<f64>) -> Result<Factor<'static>> {
    let mut h = p.q.clone();
    for i in 0..h.nrows() {
        h[(i, i)] += d_box[i];
    }
    if a.nrows() > 0 {
        let mut da = a.clone();
        for (r, d) in d_rows.iter().enumerate() {
            da.row_mut(r).scale_mut(*d);
        }
        h.gemm(1.0, &a.transpose(), &da, 1.0);
    }
    let (l, _) = regularized_cholesky(&h).ok_or_else(|| Error::Solver("Newton system could not be factored".into()))?;
    Ok(Factor::Dense(l))
}

/// Index bookkeeping for eliminating direct variables through the site
/// structure.
struct SiteLayout {
    n: usize,
    block_vars: Vec<usize>,
    /// Position of each block's first variable within `block_vars`.
    block_pos: Vec<usize>,
    site_block: Vec<(usize, usize)>,
    direct: Vec<usize>,
    /// Rows grouped by their direct variable, aligned with `direct`.
    rows_of_direct: Vec<Vec<usize>>,
    plain_rows: Vec<usize>,
    basis_rows: Vec<Option<DMatrix<f64>>>,
}

impl SiteLayout {
    fn new(p: &QpProblem, s: &SiteMatrix) -> Self {
        let n = p.n_vars();
        let mut in_block = vec![false; n];
        let mut block_vars = Vec::new();
        let mut block_pos = Vec::new();
        let mut site_block = Vec::new();
        for (bi, b) in s.blocks.iter().enumerate() {
            block_pos.push(block_vars.len());
            for k in b.var_offset..b.var_offset + b.basis.width() {
                in_block[k] = true;
                block_vars.push(k);
            }
            for local in 0..b.basis.n_sites() {
                site_block.push((bi, local));
            }
        }
        let direct: Vec<usize> = (0..n).filter(|&k| !in_block[k]).collect();
        let mut slot = vec![usize::MAX; n];
        for (i, &k) in direct.iter().enumerate() {
            slot[k] = i;
        }
        let mut rows_of_direct = vec![Vec::new(); direct.len()];
        let mut plain_rows = Vec::new();
        for (r, row) in s.rows.iter().enumerate() {
            match row.direct.first() {
                Some(&(k, _)) => rows_of_direct[slot[k]].push(r),
                None => plain_rows.push(r),
            }
        }
        // transposed copies give contiguous access to rows of V
        let basis_rows = s
            .blocks
            .iter()
            .map(|b| match &b.basis {
                Basis::Dense(v) => Some(v.transpose()),
                Basis::Identity(_) => None,
            })
            .collect();
        SiteLayout { n, block_vars, block_pos, site_block, direct, rows_of_direct, plain_rows, basis_rows }
    }

    fn factor<'s>(&'s self, p: &QpProblem, s: &'s SiteMatrix, d_rows: &DVector<f64>, d_box: &DVector<f64>) -> Result<SiteFactor<'s>> {
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        for &r in &self.plain_rows {
            let row = &s.rows[r];
            for &(i, gi) in &row.sites {
                for &(j, gj) in &row.sites {
                    trip.push((i, j, d_rows[r] * gi * gj));
                }
            }
        }
        let mut h_direct = Vec::with_capacity(self.direct.len());
        let mut w_direct = Vec::with_capacity(self.direct.len());
        for (slot, &k) in self.direct.iter().enumerate() {
            let rows = &self.rows_of_direct[slot];
            let base = p.q[(k, k)] + d_box[k];
            let de2: Vec<f64> = rows.iter().map(|&r| d_rows[r] * s.rows[r].direct[0].1.powi(2)).collect();
            let total: f64 = de2.iter().sum();
            let h = (base + total).max(1e-14);
            h_direct.push(h);
            // Block of G_kᵀ S G_k with S = D − D e eᵀ D / h, written so that
            // no entry is a difference of large numbers.
            for (a, &ra) in rows.iter().enumerate() {
                for (b, &rb) in rows.iter().enumerate() {
                    let sab = if a == b {
                        d_rows[ra] * (h - de2[a]).max(0.0) / h
                    } else {
                        let (ea, eb) = (s.rows[ra].direct[0].1, s.rows[rb].direct[0].1);
                        -d_rows[ra] * d_rows[rb] * ea * eb / h
                    };
                    for &(i, gi) in &s.rows[ra].sites {
                        for &(j, gj) in &s.rows[rb].sites {
                            trip.push((i, j, sab * gi * gj));
                        }
                    }
                }
            }
            let mut w: Vec<(usize, f64)> = Vec::new();
            for &r in rows {
                let e = s.rows[r].direct[0].1;
                for &(i, g) in &s.rows[r].sites {
                    w.push((i, d_rows[r] * e * g));
                }
            }
            w_direct.push(combine(w));
        }
        let sb = &self.site_block;
        trip.sort_by(|a, b| (sb[a.0].0, sb[a.1].0, a.0, a.1).cmp(&(sb[b.0].0, sb[b.1].0, b.0, b.1)));

        let nb = self.block_vars.len();
        let mut h = DMatrix::zeros(nb, nb);
        for (a, &i) in self.block_vars.iter().enumerate() {
            for (b, &j) in self.block_vars.iter().enumerate() {
                h[(a, b)] = p.q[(i, j)];
            }
            h[(a, a)] += d_box[i];
        }
        // group the sparse site matrix by block pair and add VᵢᵀMᵢⱼVⱼ
        let mut start = 0;
        while start < trip.len() {
            let (bi, _) = self.site_block[trip[start].0];
            let (bj, _) = self.site_block[trip[start].1];
            let mut end = start;
            while end < trip.len() && self.site_block[trip[end].0].0 == bi && self.site_block[trip[end].1].0 == bj {
                end += 1;
            }
            self.add_pair(s, bi, bj, &trip[start..end], &mut h);
            start = end;
        }
        let (l, _) = regularized_cholesky(&h).ok_or_else(|| Error::Solver("reduced Newton system could not be factored".into()))?;
        Ok(SiteFactor { l, h_direct, w_direct, layout: self, sites: s })
    }

    fn add_pair(&self, s: &SiteMatrix, bi: usize, bj: usize, entries: &[(usize, usize, f64)], h: &mut DMatrix<f64>) {
        let site_off_i = entries[0].0 - self.site_block[entries[0].0].1;
        let site_off_j = entries[0].1 - self.site_block[entries[0].1].1;
        let (wi, wj) = (s.blocks[bi].basis.width(), s.blocks[bj].basis.width());
        let ni = s.blocks[bi].basis.n_sites();
        // T = M_ij V_j  (n_sites_i × width_j)
        let mut t = DMatrix::zeros(ni, wj);
        for &(i, j, v) in entries {
            let (li, lj) = (i - site_off_i, j - site_off_j);
            match &self.basis_rows[bj] {
                Some(vt) => {
                    let src = vt.column(lj);
                    for k in 0..wj {
                        t[(li, k)] += v * src[k];
                    }
                }
                None => t[(li, lj)] += v,
            }
        }
        let (pi, pj) = (self.block_pos[bi], self.block_pos[bj]);
        let mut target = h.view_mut((pi, pj), (wi, wj));
        match &s.blocks[bi].basis {
            Basis::Dense(_) => target.gemm(1.0, self.basis_rows[bi].as_ref().expect("dense basis"), &t, 1.0),
            Basis::Identity(_) => target += &t,
        }
    }
}

struct SiteFactor<'a> {
    l: DMatrix<f64>,
    h_direct: Vec<f64>,
    w_direct: Vec<Vec<(usize, f64)>>,
    layout: &'a SiteLayout,
    sites: &'a SiteMatrix,
}

impl SiteFactor<'_> {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let lay = self.layout;
        // eliminate direct variables from the right-hand side
        let mut u = DVector::zeros(self.sites.n_sites());
        for (slot, &k) in lay.direct.iter().enumerate() {
            let scale = rhs[k] / self.h_direct[slot];
            for &(i, w) in &self.w_direct[slot] {
                u[i] += w * scale;
            }
        }
        let mut vtu = DVector::zeros(lay.n);
        self.sites.add_sites_transpose(&u, &mut vtu);
        let mut rb = DVector::from_iterator(lay.block_vars.len(), lay.block_vars.iter().map(|&k| rhs[k] - vtu[k]));
        cholesky_solve(&self.l, &mut rb);
        let mut x = DVector::zeros(lay.n);
        for (a, &k) in lay.block_vars.iter().enumerate() {
            x[k] = rb[a];
        }
        let sv = self.sites.site_values(&x);
        for (slot, &k) in lay.direct.iter().enumerate() {
            let coupling: f64 = self.w_direct[slot].iter().map(|&(i, w)| w * sv[i]).sum();
            x[k] = (rhs[k] - coupling) / self.h_direct[slot];
        }
        x
    }
}

fn combine(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (i, x) in v {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += x,
            _ => out.push((i, x)),
        }
    }
    out
}
