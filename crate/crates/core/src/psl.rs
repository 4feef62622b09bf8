//! Hinge-loss MRF over rule groundings.
//!
//! A rule `c_j` with weight `λ_j` contributes `λ_j Φ_j(ℐ)`, where `Φ_j` sums
//! the potential `φ_j(g) = 1 − f_{c_j}(g)` over its groundings. For concave
//! rules `φ_j` is a maximum of affine pieces, so MAP inference is a linear
//! program in epigraph form.

use nalgebra::{DMatrix, DVector};

use crate::constraint::{soft_constraints, SoftConstraint};
use crate::error::{Error, Result};
use crate::formula::{Assignment, Formula};
use crate::ground::{GroundOptions, GroundingMap};
use crate::normal::{normalize, FragmentLabel};
use crate::parser::SourceKb;
use crate::pwl::{compile, negate_form, PiecewiseLinearForm};
use crate::qp::{self, Basis, ConstraintMatrix, QpProblem, QpStatus, SiteBlock, SiteMatrix, SiteRow};
use crate::values::ValueTable;

/// Weight of the proximal term `ε‖q − ½‖²` that picks one point of a face
/// of LP optima.
pub const PROXIMAL_EPS: f64 = 1e-9;

/// The potential `1 − f` of a propositional concave-fragment formula.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    pub form: PiecewiseLinearForm,
}

impl Potential {
    pub fn new(f: &Formula) -> Result<Self> {
        Ok(Potential { form: negate_form(&compile(&normalize(f), FragmentLabel::Concave)?) })
    }

    /// Value at `g`, ordered like `form.vars`.
    pub fn value(&self, g: &[f64]) -> Result<f64> {
        if g.len() != self.form.vars.len() {
            return Err(Error::Dimension(format!("potential over {} variables given {} values", self.form.vars.len(), g.len())));
        }
        Ok(self.form.envelope(g))
    }

    pub fn evaluate(&self, a: &Assignment) -> Result<f64> {
        self.form.evaluate(a)
    }
}

/// Rules of a knowledge base grounded over its full grounding map.
#[derive(Clone, Debug)]
pub struct WeightedRuleSet {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
    pub map: GroundingMap,
    /// Per rule, one constraint per grounding, indexed into the full vector.
    pub groundings: Vec<Vec<SoftConstraint>>,
}

fn has_exists(f: &Formula) -> bool {
    match f {
        Formula::Exists(..) => true,
        Formula::ForAll(_, b) | Formula::Not(b) => has_exists(b),
        Formula::Implies(a, b) => has_exists(a) || has_exists(b),
        Formula::Apply(_, args) => args.iter().any(has_exists),
        _ => false,
    }
}

impl WeightedRuleSet {
    pub fn from_kb(kb: &SourceKb, opts: GroundOptions) -> Result<Self> {
        kb.validate()?;
        let map = GroundingMap::from_kb(kb)?;
        let mut groundings = Vec::new();
        for rule in &kb.rules {
            if rule.weight < 0.0 {
                return Err(Error::NegativeWeight { rule: rule.name.clone(), weight: rule.weight });
            }
            if has_exists(&rule.formula) {
                return Err(Error::Kb(format!("rule `{}`: existential quantifiers are not allowed in hinge-loss rules", rule.name)));
            }
            let single = SourceKb { domains: kb.domains.clone(), predicates: kb.predicates.clone(), rules: vec![rule.clone()] };
            groundings.push(soft_constraints(&single, &|v: &str| map.index_of(v), opts)?);
        }
        Ok(WeightedRuleSet { names: kb.rules.iter().map(|r| r.name.clone()).collect(), weights: kb.rules.iter().map(|r| r.weight).collect(), map, groundings })
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::Dimension(format!("{} weights for {} rules", weights.len(), self.weights.len())));
        }
        if let Some((i, &w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
            return Err(Error::NegativeWeight { rule: self.names[i].clone(), weight: w });
        }
        self.weights = weights.to_vec();
        Ok(())
    }

    /// `Φ_j(ℐ)` for every rule.
    pub fn phi(&self, values: &[f64]) -> Vec<f64> {
        self.groundings.iter().map(|gs| gs.iter().map(|g| g.violation(values)).sum()).collect()
    }

    /// `Σ_j λ_j Φ_j(ℐ)`
    pub fn energy(&self, values: &[f64]) -> f64 {
        self.phi(values).iter().zip(&self.weights).map(|(p, w)| p * w).sum()
    }

    /// Evidence laid out along the grounding map; `None` marks a query atom.
    pub fn evidence(&self, table: &ValueTable) -> Result<Vec<Option<f64>>> {
        let (values, _) = table.align(&self.map)?;
        for (v, name) in values.iter().zip(self.map.names()) {
            if let Some(x) = v {
                if !(0.0..=1.0).contains(x) {
                    return Err(Error::Domain { name, value: *x });
                }
            }
        }
        Ok(values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub values: Vec<f64>,
    pub fixed: Vec<bool>,
    pub phi: Vec<f64>,
    /// `Σ_j λ_j Φ_j` at `values`.
    pub objective: f64,
    pub status: QpStatus,
}

impl MapResult {
    pub fn to_values(&self, map: &GroundingMap) -> ValueTable {
        ValueTable::from_vector(map, &self.values, &self.fixed)
    }
}

/// Minimizes `Σ_j λ_j Φ_j` over the query atoms with evidence held fixed.
pub fn map_inference(rules: &WeightedRuleSet, evidence: &[Option<f64>], tol: f64, max_iter: usize) -> Result<MapResult> {
    if evidence.len() != rules.map.len() {
        return Err(Error::Dimension(format!("evidence has {} entries, grounding map {}", evidence.len(), rules.map.len())));
    }
    let mut query = vec![usize::MAX; evidence.len()];
    let mut nq = 0;
    for (i, e) in evidence.iter().enumerate() {
        if e.is_none() {
            query[i] = nq;
            nq += 1;
        }
    }
    // epigraph rows with evidence folded into constants
    let mut rows = Vec::new();
    let mut b = Vec::new();
    let mut costs = Vec::new();
    for (gs, &w) in rules.groundings.iter().zip(&rules.weights) {
        if w < 0.0 {
            return Err(Error::NegativeWeight { rule: gs.first().map(|g| g.rule.clone()).unwrap_or_default(), weight: w });
        }
        if w == 0.0 {
            continue;
        }
        for g in gs {
            let slack = nq + costs.len();
            let mut any = false;
            for row in &g.rows {
                let mut constant = row.constant;
                let mut sites = Vec::new();
                for &(i, c) in &row.terms {
                    match evidence[i] {
                        Some(x) => constant += c * x,
                        None => sites.push((query[i], c)),
                    }
                }
                if sites.is_empty() && constant <= 0.0 {
                    continue;
                }
                rows.push(SiteRow { sites, direct: vec![(slack, -1.0)] });
                b.push(-constant);
                any = true;
            }
            if any {
                costs.push(w);
            }
        }
    }
    let n = nq + costs.len();
    let mut q = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let lower = DVector::zeros(n);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for i in 0..nq {
        q[(i, i)] = 2.0 * PROXIMAL_EPS;
        c[i] = -PROXIMAL_EPS;
        upper[i] = 1.0;
    }
    for (k, w) in costs.iter().enumerate() {
        c[nq + k] = *w;
    }
    let problem = QpProblem {
        q,
        c,
        a: ConstraintMatrix::Sites(SiteMatrix { n_vars: n, blocks: vec![SiteBlock { var_offset: 0, basis: Basis::Identity(nq) }], rows }),
        b: DVector::from_vec(b),
        lower,
        upper,
    };
    let sol = qp::solve(&problem, tol, max_iter)?.require_solved()?;
    let values: Vec<f64> = evidence.iter().zip(&query).map(|(e, &k)| e.unwrap_or_else(|| sol.z[k].clamp(0.0, 1.0))).collect();
    let phi = rules.phi(&values);
    let objective = phi.iter().zip(&rules.weights).map(|(p, w)| p * w).sum();
    Ok(MapResult { fixed: evidence.iter().map(Option::is_some).collect(), values, phi, objective, status: sol.status })
}

/// `Φ_j(ℐ*) − Φ_j(ℐ_t)` with `ℐ*` the MAP state under the current weights.
pub fn weight_gradient(rules: &WeightedRuleSet, evidence: &[Option<f64>], training: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if training.len() != rules.map.len() {
        return Err(Error::Dimension(format!("training interpretation has {} entries, grounding map {}", training.len(), rules.map.len())));
    }
    let map = map_inference(rules, evidence, tol, max_iter)?;
    let target = rules.phi(training);
    Ok(map.phi.iter().zip(&target).map(|(a, b)| a - b).collect())
}

/// Training interpretation from a value table: every atom must be listed;
/// `fixed` entries become evidence.
pub fn split_training(rules: &WeightedRuleSet, table: &ValueTable) -> Result<(Vec<Option<f64>>, Vec<f64>)> {
    let (values, fixed) = table.align(&rules.map)?;
    let mut evidence = Vec::with_capacity(values.len());
    let mut full = Vec::with_capacity(values.len());
    for ((v, f), name) in values.iter().zip(&fixed).zip(rules.map.names()) {
        let x = v.ok_or_else(|| Error::Grounding(format!("training interpretation has no value for `{name}`")))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { name, value: x });
        }
        evidence.push(f.then_some(x));
        full.push(x);
    }
    Ok((evidence, full))
}

/// Projected gradient ascent on the log-likelihood with the MAP
/// approximation of the expectation. Returns the weights after each step.
pub fn learn_weights(rules: &mut WeightedRuleSet, evidence: &[Option<f64>], training: &[f64], rate: f64, steps: usize, tol: f64, max_iter: usize) -> Result<Vec<Vec<f64>>> {
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g = weight_gradient(rules, evidence, training, tol, max_iter)?;
        let w: Vec<f64> = rules.weights.iter().zip(&g).map(|(w, g)| (w + rate * g).max(0.0)).collect();
        rules.set_weights(&w)?;
        trace.push(w);
    }
    Ok(trace)
}
