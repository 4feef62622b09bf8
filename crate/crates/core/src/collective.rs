//! Collective classification: move prior grounding values as little as
//! possible while satisfying compiled logical constraints.
//!
//! ```text
//! min_p ‖p̄ − p̂‖² + C₁ Σ_h w_h ξ_h   s.t.  M_i^h · p̄ + q_i^h ≤ ξ_h,  0 ≤ p̄ ≤ 1,  ξ ≥ 0
//! ```

use nalgebra::{DMatrix, DVector};

use crate::constraint::{LinearRow, SoftConstraint};
use crate::error::{Error, Result};
use crate::ground::GroundingMap;
use crate::qp::{self, Basis, ConstraintMatrix, KktResiduals, QpProblem, QpStatus, SiteBlock, SiteMatrix, SiteRow};
use crate::values::ValueTable;

/// Manifold pairs with `R` below this are dropped.
pub const DEFAULT_CUTOFF: f64 = 0.01;

/// Priors `p̂` aligned with a grounding map. Values may lie outside
/// `[0, 1]` (raw model scores); solutions never do.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorTable {
    pub values: Vec<f64>,
}

impl PriorTable {
    pub fn from_values(table: &ValueTable, map: &GroundingMap) -> Result<Self> {
        let (values, _) = table.align(map)?;
        let names = map.names();
        let values = values
            .into_iter()
            .zip(&names)
            .map(|(v, n)| v.ok_or_else(|| Error::Grounding(format!("no prior for `{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(PriorTable { values })
    }
}

/// `R(x₁, x₂) = exp(−‖x₁ − x₂‖² / σ²)` over the groundings of one predicate.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldRelation {
    pub predicate: String,
    pub sigma: f64,
    pub cutoff: f64,
    /// (index in `p̄`, point)
    pub points: Vec<(usize, Vec<f64>)>,
}

impl ManifoldRelation {
    pub fn new(predicate: impl Into<String>, sigma: f64, points: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Kernel(format!("sigma must be positive, got {sigma}")));
        }
        Ok(ManifoldRelation { predicate: predicate.into(), sigma, cutoff: DEFAULT_CUTOFF, points })
    }

    pub fn weight(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (self.sigma * self.sigma)).exp()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.points.len();
        DMatrix::from_fn(n, n, |i, j| self.weight(&self.points[i].1, &self.points[j].1))
    }
}

/// Two rows `R + p₁ − p₂ − 1 ≤ ξ`, `R − p₁ + p₂ − 1 ≤ ξ` per pair with
/// `R ≥ cutoff`, each pair with its own slack. `R` is folded into the
/// constant.
pub fn manifold_rows(rel: &ManifoldRelation, weight: f64) -> Vec<SoftConstraint> {
    let mut out = Vec::new();
    for (a, (i, x)) in rel.points.iter().enumerate() {
        for (j, y) in &rel.points[a + 1..] {
            let r = rel.weight(x, y);
            if r < rel.cutoff {
                continue;
            }
            let rows = vec![
                LinearRow { terms: vec![(*i, 1.0), (*j, -1.0)], constant: r - 1.0 },
                LinearRow { terms: vec![(*i, -1.0), (*j, 1.0)], constant: r - 1.0 },
            ];
            out.push(SoftConstraint { rule: format!("manifold_{}", rel.predicate), weight, grounding: format!("{i},{j}"), rows });
        }
    }
    out
}

/// Builds the QP over `z = (p̄, ξ)`. With `weighted`, the slack of each
/// constraint costs `C₁ · weight`; otherwise all cost `C₁`.
pub fn assemble_collective(priors: &PriorTable, constraints: &[SoftConstraint], c1: f64, weighted: bool) -> Result<QpProblem> {
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(Error::Config(format!("C1 must be positive, got {c1}")));
    }
    let u = priors.values.len();
    if let Some(v) = priors.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain { name: "prior".into(), value: *v });
    }
    let n = u + constraints.len();
    let mut q = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let lower = DVector::zeros(n);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for i in 0..u {
        q[(i, i)] = 2.0;
        c[i] = -2.0 * priors.values[i];
        upper[i] = 1.0;
    }
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for (h, sc) in constraints.iter().enumerate() {
        if sc.weight < 0.0 {
            return Err(Error::NegativeWeight { rule: sc.rule.clone(), weight: sc.weight });
        }
        c[u + h] = if weighted { c1 * sc.weight } else { c1 };
        for row in &sc.rows {
            if let Some(&(i, _)) = row.terms.iter().find(|(i, _)| *i >= u) {
                return Err(Error::Dimension(format!("constraint `{}` references index {i}, only {u} priors", sc.rule)));
            }
            rows.push(SiteRow { sites: row.terms.clone(), direct: vec![(u + h, -1.0)] });
            b.push(-row.constant);
        }
    }
    let a = ConstraintMatrix::Sites(SiteMatrix { n_vars: n, blocks: vec![SiteBlock { var_offset: 0, basis: Basis::Identity(u) }], rows });
    Ok(QpProblem { q, c, a, b: DVector::from_vec(b), lower, upper })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveSolution {
    pub values: Vec<f64>,
    pub slacks: Vec<f64>,
    /// `‖p̄ − p̂‖² + C₁ Σ w_h ξ_h`
    pub objective: f64,
    pub status: QpStatus,
    pub residuals: KktResiduals,
}

impl CollectiveSolution {
    pub fn to_values(&self, map: &GroundingMap, constraints: &[SoftConstraint]) -> ValueTable {
        let mut t = ValueTable::from_vector(map, &self.values, &vec![false; self.values.len()]);
        t.slacks = constraints.iter().zip(&self.slacks).map(|(sc, &x)| (sc.rule.clone(), sc.grounding.clone(), x)).collect();
        t
    }
}

pub fn solve_collective(priors: &PriorTable, constraints: &[SoftConstraint], c1: f64, weighted: bool, tol: f64, max_iter: usize) -> Result<CollectiveSolution> {
    let p = assemble_collective(priors, constraints, c1, weighted)?;
    let sol = qp::solve(&p, tol, max_iter)?.require_solved()?;
    let u = priors.values.len();
    let shift: f64 = priors.values.iter().map(|v| v * v).sum();
    Ok(CollectiveSolution {
        values: sol.z.as_slice()[..u].to_vec(),
        slacks: sol.z.as_slice()[u..].to_vec(),
        objective: sol.objective + shift,
        status: sol.status,
        residuals: sol.residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::formula_rows;
    use crate::parser::parse_formula;
    use proptest::prelude::*;

    const TOL: f64 = 1e-8;

    fn implication(a: usize, b: usize) -> SoftConstraint {
        SoftConstraint { rule: "r".into(), weight: 1.0, grounding: String::new(), rows: vec![LinearRow { terms: vec![(a, 1.0), (b, -1.0)], constant: 0.0 }] }
    }

    fn run(priors: &[f64], cs: &[SoftConstraint], c1: f64) -> CollectiveSolution {
        solve_collective(&PriorTable { values: priors.to_vec() }, cs, c1, false, TOL, qp::DEFAULT_MAX_ITER).unwrap()
    }

    #[test]
    fn no_logic_returns_priors() {
        let s = run(&[0.2, 0.9, 0.5], &[], 1.0);
        for (a, b) in s.values.iter().zip([0.2, 0.9, 0.5]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_prior_is_boxed() {
        let s = run(&[1.3, -0.4], &[], 1.0);
        assert!((s.values[0] - 1.0).abs() < 1e-6 && s.values[1].abs() < 1e-6);
    }

    #[test]
    fn implication_matches_grid_oracle() {
        let c1 = 10.0;
        let s = run(&[0.9, 0.1], &[implication(0, 1)], c1);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=1000 {
            for j in 0..=1000 {
                let (a, b) = (i as f64 * 1e-3, j as f64 * 1e-3);
                let f = (a - 0.9).powi(2) + (b - 0.1).powi(2) + c1 * (a - b).max(0.0);
                if f < best.0 {
                    best = (f, a, b);
                }
            }
        }
        assert!((s.values[0] - best.1).abs() < 2e-3 && (s.values[1] - best.2).abs() < 2e-3, "{:?} {best:?}", s.values);
        assert!(s.values[0] <= s.values[1] + 1e-6);
        assert!((s.objective - best.0).abs() < 1e-4);
    }

    #[test]
    fn manifold_pair_rows() {
        let rel = ManifoldRelation::new("p", 1.0, vec![(0, vec![0.0]), (1, vec![0.0])]).unwrap();
        let cs = manifold_rows(&rel, 1.0);
        assert_eq!(cs.len(), 1);
        assert!((cs[0].violation(&[0.3, 0.8]) - 0.5).abs() < 1e-15);
        let far = ManifoldRelation::new("p", 1.0, vec![(0, vec![0.0]), (1, vec![5.0])]).unwrap();
        assert!(manifold_rows(&far, 1.0).is_empty());
        let m = rel.matrix();
        assert_eq!(m, m.transpose());
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn identical_points_converge() {
        let rel = ManifoldRelation::new("p", 1.0, vec![(0, vec![1.0, 2.0]), (1, vec![1.0, 2.0])]).unwrap();
        let s = run(&[0.2, 0.7], &manifold_rows(&rel, 1.0), 100.0);
        assert!((s.values[0] - s.values[1]).abs() < 10.0 * TOL, "{:?}", s.values);
        assert!((s.values[0] - 0.45).abs() < 1e-6);
    }

    #[test]
    fn weights_scale_slack_cost() {
        let mut strong = implication(0, 1);
        strong.weight = 100.0;
        let priors = PriorTable { values: vec![0.9, 0.1] };
        let loose = solve_collective(&priors, &[strong.clone()], 0.1, false, TOL, qp::DEFAULT_MAX_ITER).unwrap();
        let tight = solve_collective(&priors, &[strong], 0.1, true, TOL, qp::DEFAULT_MAX_ITER).unwrap();
        assert!(tight.slacks[0] < loose.slacks[0]);
    }

    #[test]
    fn index_misalignment() {
        assert!(matches!(assemble_collective(&PriorTable { values: vec![0.5] }, &[implication(0, 3)], 1.0, false), Err(Error::Dimension(_))));
    }

    fn rule_constraints() -> Vec<SoftConstraint> {
        let idx = |v: &str| ["a", "b", "c"].iter().position(|x| *x == v);
        ["a -> b", "(~b + c) ^ (b + ~a)", "~a + ~c"]
            .iter()
            .map(|s| SoftConstraint { rule: s.to_string(), weight: 1.0, grounding: String::new(), rows: formula_rows(&parse_formula(s).unwrap(), &idx).unwrap() })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn objective_beats_clipped_priors(p in proptest::collection::vec(-0.5f64..1.5, 3), c1 in 0.1f64..20.0) {
            let cs = rule_constraints();
            let s = run(&p, &cs, c1);
            let clipped: Vec<f64> = p.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let base: f64 = clipped.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                + c1 * cs.iter().map(|c| c.violation(&clipped)).sum::<f64>();
            prop_assert!(s.objective <= base + 1e-6);
            prop_assert!(s.values.iter().all(|v| (-1e-7..=1.0 + 1e-7).contains(v)));
        }

        #[test]
        fn satisfying_priors_are_fixed_points(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            // a ≤ b satisfies a → b
            let p = [a.min(b), a.max(b)];
            let s = run(&p, &[implication(0, 1)], 5.0);
            prop_assert!((s.values[0] - p[0]).abs() <= 1e-6 && (s.values[1] - p[1]).abs() <= 1e-6);
            let again = run(&s.values, &[implication(0, 1)], 5.0);
            prop_assert!((again.values[0] - s.values[0]).abs() <= 10.0 * TOL.max(1e-7));
        }
    }
}
