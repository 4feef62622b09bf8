//! Negation normal form, fragment classification and CNF fuzzification.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{Connective, Formula};

/// Which convex fragment a normalized formula syntactically belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FragmentLabel {
    /// Built with `∧` and `⊕` only: concave truth function.
    Concave,
    /// Built with `⊗` and `∨` only: convex truth function.
    Convex,
    /// A literal or a constant: affine.
    Both,
    Neither,
}

impl fmt::Display for FragmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FragmentLabel::Concave => "concave",
            FragmentLabel::Convex => "convex",
            FragmentLabel::Both => "both",
            FragmentLabel::Neither => "neither",
        })
    }
}

impl FragmentLabel {
    /// Whether a formula with this label can be used where `target` is required.
    pub fn admits(self, target: FragmentLabel) -> bool {
        self == target || self == FragmentLabel::Both
    }
}

/// Eliminates `→` (`x → y := ¬x ⊕ y`) and pushes negations down to the
/// leaves with the De Morgan laws. Quantifiers are kept; `¬∀` becomes `∃¬`.
pub fn normalize(f: &Formula) -> Formula {
    nnf(f, false)
}

fn nnf(f: &Formula, negated: bool) -> Formula {
    match f {
        Formula::Zero => {
            if negated {
                Formula::One
            } else {
                Formula::Zero
            }
        }
        Formula::One => {
            if negated {
                Formula::Zero
            } else {
                Formula::One
            }
        }
        Formula::Var(_) | Formula::Atom(_) => {
            if negated {
                f.clone().not()
            } else {
                f.clone()
            }
        }
        Formula::Not(g) => nnf(g, !negated),
        Formula::Implies(a, b) => {
            if negated {
                // ¬(¬a ⊕ b) = a ⊗ ¬b
                Formula::strong_and([nnf(a, false), nnf(b, true)])
            } else {
                Formula::strong_or([nnf(a, true), nnf(b, false)])
            }
        }
        Formula::Apply(op, args) => {
            let op = if negated { op.dual() } else { *op };
            Formula::apply(op, args.iter().map(|a| nnf(a, negated)))
        }
        Formula::ForAll(v, body) => {
            let body = Box::new(nnf(body, negated));
            if negated {
                Formula::Exists(v.clone(), body)
            } else {
                Formula::ForAll(v.clone(), body)
            }
        }
        Formula::Exists(v, body) => {
            let body = Box::new(nnf(body, negated));
            if negated {
                Formula::ForAll(v.clone(), body)
            } else {
                Formula::Exists(v.clone(), body)
            }
        }
    }
}

pub fn is_normalized(f: &Formula) -> bool {
    match f {
        Formula::Zero | Formula::One | Formula::Var(_) | Formula::Atom(_) => true,
        Formula::Not(g) => matches!(**g, Formula::Var(_) | Formula::Atom(_)),
        Formula::Implies(..) => false,
        Formula::Apply(_, args) => args.iter().all(is_normalized),
        Formula::ForAll(_, g) | Formula::Exists(_, g) => is_normalized(g),
    }
}

/// Identity rewrites that preserve semantics: unit and absorbing constants
/// (`x ⊕ 0 = x`, `x ⊕ 1 = 1`, `x ∧ 0 = 0`, …) and idempotence of the
/// weak connectives (`x ∧ x = x`). Distributing a strong connective over a
/// weak one is deliberately absent: both sides use the same pair of
/// connectives, so it never changes a fragment label.
pub fn simplify(f: &Formula) -> Formula {
    match f {
        Formula::Not(g) => match simplify(g) {
            Formula::Zero => Formula::One,
            Formula::One => Formula::Zero,
            Formula::Not(h) => *h,
            other => other.not(),
        },
        Formula::Implies(..) => simplify(&normalize(f)),
        Formula::Apply(op, args) => {
            let (unit, absorbing) = match op {
                Connective::StrongAnd | Connective::WeakAnd => (Formula::One, Formula::Zero),
                Connective::StrongOr | Connective::WeakOr => (Formula::Zero, Formula::One),
            };
            let weak = matches!(op, Connective::WeakAnd | Connective::WeakOr);
            let mut kept: Vec<Formula> = Vec::new();
            for arg in args {
                let s = simplify(arg);
                if s == absorbing {
                    return absorbing;
                }
                if s == unit {
                    continue;
                }
                let pieces = match s {
                    Formula::Apply(inner, children) if inner == *op => children,
                    other => vec![other],
                };
                for piece in pieces {
                    if weak && kept.contains(&piece) {
                        continue;
                    }
                    kept.push(piece);
                }
            }
            match kept.len() {
                0 => unit,
                1 => kept.pop().unwrap(),
                _ => Formula::Apply(*op, kept),
            }
        }
        Formula::ForAll(v, g) => Formula::ForAll(v.clone(), Box::new(simplify(g))),
        Formula::Exists(v, g) => Formula::Exists(v.clone(), Box::new(simplify(g))),
        leaf => leaf.clone(),
    }
}

fn side(op: Connective) -> FragmentLabel {
    match op {
        Connective::WeakAnd | Connective::StrongOr => FragmentLabel::Concave,
        Connective::StrongAnd | Connective::WeakOr => FragmentLabel::Convex,
    }
}

// Quantifiers ground to weak connectives: ∀ ↦ ∧, ∃ ↦ ∨.
fn quantifier_connective(f: &Formula) -> Option<Connective> {
    match f {
        Formula::ForAll(..) => Some(Connective::WeakAnd),
        Formula::Exists(..) => Some(Connective::WeakOr),
        _ => None,
    }
}

fn collect_connectives(f: &Formula, out: &mut Vec<Connective>) {
    match f {
        Formula::Apply(op, args) => {
            out.push(*op);
            args.iter().for_each(|a| collect_connectives(a, out));
        }
        Formula::ForAll(_, g) | Formula::Exists(_, g) => {
            out.extend(quantifier_connective(f));
            collect_connectives(g, out);
        }
        Formula::Not(g) => collect_connectives(g, out),
        _ => {}
    }
}

/// Fragment membership of a normalized formula, decided syntactically
/// after [`simplify`].
pub fn classify(f: &Formula) -> Result<FragmentLabel> {
    if !is_normalized(f) {
        return Err(Error::NotNormalized);
    }
    let g = simplify(f);
    let mut ops = Vec::new();
    collect_connectives(&g, &mut ops);
    let concave = ops.iter().all(|op| side(*op) == FragmentLabel::Concave);
    let convex = ops.iter().all(|op| side(*op) == FragmentLabel::Convex);
    Ok(match (ops.is_empty(), concave, convex) {
        (true, _, _) => FragmentLabel::Both,
        (false, true, _) => FragmentLabel::Concave,
        (false, _, true) => FragmentLabel::Convex,
        _ => FragmentLabel::Neither,
    })
}

/// Location of the first node whose connective sits over a connective of
/// the opposite fragment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mixing {
    pub path: Vec<usize>,
    pub outer: Connective,
    pub inner: Connective,
}

impl fmt::Display for Mixing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() {
            "root".to_string()
        } else {
            format!("root/{}", self.path.iter().map(usize::to_string).collect::<Vec<_>>().join("/"))
        };
        write!(
            f,
            "{} (`{}`) over {} (`{}`) at {path}",
            self.outer.name(),
            self.outer.symbol(),
            self.inner.name(),
            self.inner.symbol()
        )
    }
}

/// Finds where a formula leaves both fragments, if it does.
pub fn find_mixing(f: &Formula) -> Option<Mixing> {
    fn first_op_of_side(f: &Formula, wanted: FragmentLabel) -> Option<Connective> {
        match f {
            Formula::Apply(op, args) => {
                if side(*op) == wanted {
                    Some(*op)
                } else {
                    args.iter().find_map(|a| first_op_of_side(a, wanted))
                }
            }
            Formula::ForAll(_, g) | Formula::Exists(_, g) => {
                let op = quantifier_connective(f).unwrap();
                if side(op) == wanted {
                    Some(op)
                } else {
                    first_op_of_side(g, wanted)
                }
            }
            Formula::Not(g) => first_op_of_side(g, wanted),
            _ => None,
        }
    }
    fn walk(f: &Formula, path: &mut Vec<usize>) -> Option<Mixing> {
        let (op, children): (Connective, Vec<&Formula>) = match f {
            Formula::Apply(op, args) => (*op, args.iter().collect()),
            Formula::ForAll(_, g) | Formula::Exists(_, g) => (quantifier_connective(f).unwrap(), vec![g.as_ref()]),
            Formula::Not(g) => {
                path.push(0);
                let r = walk(g, path);
                path.pop();
                return r;
            }
            _ => return None,
        };
        let opposite = match side(op) {
            FragmentLabel::Concave => FragmentLabel::Convex,
            _ => FragmentLabel::Concave,
        };
        for (i, child) in children.iter().enumerate() {
            if let Some(inner) = first_op_of_side(child, opposite) {
                path.push(i);
                let m = Mixing { path: path.clone(), outer: op, inner };
                path.pop();
                return Some(m);
            }
        }
        for (i, child) in children.iter().enumerate() {
            path.push(i);
            let r = walk(child, path);
            path.pop();
            if r.is_some() {
                return r;
            }
        }
        None
    }
    walk(&simplify(f), &mut Vec::new())
}

/// A boolean literal in a CNF clause.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Literal {
    pub var: String,
    pub positive: bool,
}

impl Literal {
    pub fn pos(var: impl Into<String>) -> Self {
        Literal { var: var.into(), positive: true }
    }

    pub fn neg(var: impl Into<String>) -> Self {
        Literal { var: var.into(), positive: false }
    }

    fn to_formula(&self) -> Formula {
        let v = Formula::var(self.var.clone());
        if self.positive {
            v
        } else {
            v.not()
        }
    }
}

/// How the boolean `(∧, ∨)` of a CNF are mapped to Łukasiewicz connectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CnfTranslation {
    /// `⋀ᵢ ⊕ⱼ lᵢⱼ`, lands in the concave fragment.
    Concave,
    /// `⊗ᵢ ⋁ⱼ lᵢⱼ`, lands in the convex fragment.
    Convex,
    /// t-norm / t-conorm pair `(⊗, ⊕)`; in general in neither fragment.
    TNorm,
}

impl CnfTranslation {
    fn connectives(self) -> (Connective, Connective) {
        match self {
            CnfTranslation::Concave => (Connective::WeakAnd, Connective::StrongOr),
            CnfTranslation::Convex => (Connective::StrongAnd, Connective::WeakOr),
            CnfTranslation::TNorm => (Connective::StrongAnd, Connective::StrongOr),
        }
    }
}

/// Translates a boolean CNF into a Łukasiewicz formula. An empty clause
/// becomes `0`.
pub fn fuzzify_cnf(clauses: &[Vec<Literal>], translation: CnfTranslation) -> Result<Formula> {
    if clauses.is_empty() {
        return Err(Error::EmptyClauses);
    }
    let (conj, disj) = translation.connectives();
    let clause_formulas = clauses.iter().map(|clause| {
        if clause.is_empty() {
            Formula::Zero
        } else {
            Formula::apply(disj, clause.iter().map(Literal::to_formula))
        }
    });
    Ok(Formula::apply(conj, clause_formulas))
}
