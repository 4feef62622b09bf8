//! Linear rows `M·p̄ + q ≤ ξ` generated from grounded concave-fragment rules.

use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::ground::{ground_instances, GroundOptions};
use crate::normal::{classify, find_mixing, normalize, FragmentLabel};
use crate::parser::SourceKb;
use crate::pwl::{compile, negate_form};

/// `Σ coeff · p̄[index] + constant`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearRow {
    pub fn value(&self, p: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * p[i]).sum::<f64>()
    }
}

/// The requirement `1 − f(p̄) ≤ ξ` for one grounding of one rule, expressed
/// through the affine pieces of `1 − f`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftConstraint {
    pub rule: String,
    pub weight: f64,
    /// Bindings of the outer universal variables, e.g. `x=g12`.
    pub grounding: String,
    pub rows: Vec<LinearRow>,
}

impl SoftConstraint {
    /// `max(0, max_i row_i(p))`, the smallest admissible slack.
    pub fn violation(&self, p: &[f64]) -> f64 {
        self.rows.iter().map(|r| r.value(p)).fold(0.0, f64::max)
    }
}

/// How grounded variables enter the rows.
pub trait VariableResolver {
    /// Position in the decision vector of a free grounded variable.
    fn index(&self, name: &str) -> Option<usize>;
    /// Value of a grounded variable fixed as evidence.
    fn evidence(&self, _name: &str) -> Option<f64> {
        None
    }
}

impl<F: Fn(&str) -> Option<usize>> VariableResolver for F {
    fn index(&self, name: &str) -> Option<usize> {
        self(name)
    }
}

/// Rows for a propositional concave-fragment formula over grounded
/// variables. The floor piece of `1 − f` is dropped (it only says `ξ ≥ 0`),
/// evidence is folded into the constants, and rows that are constant and
/// nonpositive are removed.
pub fn formula_rows(g: &Formula, resolver: &dyn VariableResolver) -> Result<Vec<LinearRow>> {
    let n = normalize(g);
    let label = classify(&n)?;
    if !label.admits(FragmentLabel::Concave) {
        let detail = find_mixing(&n).map(|m| m.to_string()).unwrap_or_else(|| format!("`{n}` is {label}"));
        return Err(Error::NotInFragment(detail));
    }
    let form = negate_form(&compile(&n, FragmentLabel::Concave)?);
    let mut slots = Vec::with_capacity(form.vars.len());
    for v in &form.vars {
        if let Some(x) = resolver.evidence(v) {
            slots.push(Err(x));
        } else if let Some(i) = resolver.index(v) {
            slots.push(Ok(i));
        } else {
            return Err(Error::Grounding(format!("no decision variable or evidence for `{v}`")));
        }
    }
    let mut rows = Vec::new();
    for piece in form.proper_pieces() {
        let mut row = LinearRow { terms: Vec::new(), constant: piece.constant as f64 };
        for (c, slot) in piece.coeffs.iter().zip(&slots) {
            if *c == 0 {
                continue;
            }
            match slot {
                Ok(i) => row.terms.push((*i, *c as f64)),
                Err(x) => row.constant += *c as f64 * x,
            }
        }
        if row.terms.is_empty() && row.constant <= 0.0 {
            continue;
        }
        if !rows.contains(&row) {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// One soft constraint per grounding of the outer `∀` prefix of every rule.
/// Groundings whose rows are all trivially satisfied are omitted.
pub fn soft_constraints(kb: &SourceKb, resolver: &dyn VariableResolver, opts: GroundOptions) -> Result<Vec<SoftConstraint>> {
    let mut out = Vec::new();
    for rule in &kb.rules {
        let instances = ground_instances(&rule.formula, kb, opts)?;
        for (env, g) in instances {
            let rows = formula_rows(&g, resolver).map_err(|e| match e {
                Error::NotInFragment(d) => Error::NotInFragment(format!("rule `{}`: {d}", rule.name)),
                other => other,
            })?;
            if rows.is_empty() {
                continue;
            }
            let grounding = env.iter().map(|(v, c)| format!("{v}={c}")).collect::<Vec<_>>().join(",");
            out.push(SoftConstraint { rule: rule.name.clone(), weight: rule.weight, grounding, rows });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::GroundingMap;
    use crate::parser::{parse_formula, parse_kb};

    #[test]
    fn implication_rows() {
        let idx = |v: &str| ["a", "b"].iter().position(|x| *x == v);
        let rows = formula_rows(&parse_formula("a -> b").unwrap(), &idx).unwrap();
        assert_eq!(rows, vec![LinearRow { terms: vec![(0, 1.0), (1, -1.0)], constant: 0.0 }]);
    }

    #[test]
    fn experiment_rule_rows() {
        let idx = |v: &str| ["A", "B", "C", "D"].iter().position(|x| *x == v);
        let f = parse_formula("(~A + ~B + C) ^ (~A + ~B + D)").unwrap();
        let rows = formula_rows(&f, &idx).unwrap();
        assert_eq!(
            rows,
            vec![
                LinearRow { terms: vec![(0, 1.0), (1, 1.0), (2, -1.0)], constant: -1.0 },
                LinearRow { terms: vec![(0, 1.0), (1, 1.0), (3, -1.0)], constant: -1.0 },
            ]
        );
        let p = [1.0, 1.0, 0.25, 1.0];
        let sc = SoftConstraint { rule: "r".into(), weight: 1.0, grounding: String::new(), rows };
        assert!((sc.violation(&p) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn non_convex_translation_is_rejected() {
        let idx = |_: &str| Some(0);
        let f = parse_formula("(~A + ~B + C) * (~A + ~B + D)").unwrap();
        let err = formula_rows(&f, &idx).unwrap_err();
        assert!(err.to_string().contains("strong conjunction"), "{err}");
    }

    struct WithEvidence;
    impl VariableResolver for WithEvidence {
        fn index(&self, name: &str) -> Option<usize> {
            (name == "b").then_some(0)
        }
        fn evidence(&self, name: &str) -> Option<f64> {
            (name == "a").then_some(0.9)
        }
    }

    #[test]
    fn evidence_is_folded() {
        let rows = formula_rows(&parse_formula("~a + b").unwrap(), &WithEvidence).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].terms, vec![(0, -1.0)]);
        assert!((rows[0].constant - 0.9).abs() < 1e-15);
    }

    #[test]
    fn one_constraint_per_grounding() {
        let kb = parse_kb("domain U = {a, b, c}; pred p(U); pred q(U); rule r [w=2]: forall x: p(x) -> q(x)").unwrap();
        let map = GroundingMap::from_kb(&kb).unwrap();
        let sc = soft_constraints(&kb, &|v: &str| map.index_of(v), GroundOptions::default()).unwrap();
        assert_eq!(sc.len(), 3);
        assert_eq!(sc[1].grounding, "x=b");
        assert_eq!(sc[1].weight, 2.0);
        assert_eq!(sc[1].rows[0].terms, vec![(1, 1.0), (4, -1.0)]);
    }
}
