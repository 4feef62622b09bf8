//! Formula syntax tree and the standard Łukasiewicz semantics on `[0, 1]`.
//!
//! | connective | ascii | value                 |
//! |------------|-------|-----------------------|
//! | `x ⊗ y`    | `*`   | `max{0, x + y - 1}`   |
//! | `x ∧ y`    | `^`   | `min{x, y}`           |
//! | `x ⊕ y`    | `+`   | `min{1, x + y}`       |
//! | `x ∨ y`    | `\|`  | `max{x, y}`           |
//! | `x → y`    | `->`  | `min{1, 1 - x + y}`   |
//! | `¬x`       | `~`   | `1 - x`               |

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Semantic equality tolerance used by the grid and random-point checks.
pub const SEMANTIC_TOL: f64 = 1e-12;

/// Binary lattice and monoidal connectives. Nodes carrying them may be
/// n-ary; `a ∘ b ∘ c` is the left-associated chain `(a ∘ b) ∘ c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Connective {
    StrongAnd,
    WeakAnd,
    StrongOr,
    WeakOr,
}

impl Connective {
    pub fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            Connective::StrongAnd => (x + y - 1.0).max(0.0),
            Connective::WeakAnd => x.min(y),
            Connective::StrongOr => (x + y).min(1.0),
            Connective::WeakOr => x.max(y),
        }
    }

    /// De Morgan dual: `¬(a ∘ b) = ¬a ∘' ¬b`.
    pub fn dual(self) -> Connective {
        match self {
            Connective::StrongAnd => Connective::StrongOr,
            Connective::StrongOr => Connective::StrongAnd,
            Connective::WeakAnd => Connective::WeakOr,
            Connective::WeakOr => Connective::WeakAnd,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Connective::StrongAnd => "*",
            Connective::WeakAnd => "^",
            Connective::StrongOr => "+",
            Connective::WeakOr => "|",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Connective::StrongAnd => "strong conjunction",
            Connective::WeakAnd => "weak conjunction",
            Connective::StrongOr => "strong disjunction",
            Connective::WeakOr => "weak disjunction",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: &[&str]) -> Self {
        Atom {
            predicate: predicate.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Zero,
    One,
    Var(String),
    Atom(Atom),
    Not(Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    /// Invariant: at least two arguments.
    Apply(Connective, Vec<Formula>),
    ForAll(String, Box<Formula>),
    Exists(String, Box<Formula>),
}

impl Formula {
    pub fn var(name: impl Into<String>) -> Formula {
        Formula::Var(name.into())
    }

    pub fn atom(predicate: impl Into<String>, args: &[&str]) -> Formula {
        Formula::Atom(Atom::new(predicate, args))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Formula {
        Formula::Not(Box::new(self))
    }

    pub fn implies(self, rhs: Formula) -> Formula {
        Formula::Implies(Box::new(self), Box::new(rhs))
    }

    pub fn forall(var: impl Into<String>, body: Formula) -> Formula {
        Formula::ForAll(var.into(), Box::new(body))
    }

    pub fn exists(var: impl Into<String>, body: Formula) -> Formula {
        Formula::Exists(var.into(), Box::new(body))
    }

    /// Builds an n-ary node, splicing in children that use the same
    /// connective. A single argument is returned unchanged.
    ///
    /// # Panics
    /// If `args` is empty: the connectives have no syntactic unit here.
    pub fn apply(op: Connective, args: impl IntoIterator<Item = Formula>) -> Formula {
        let mut flat = Vec::new();
        for arg in args {
            match arg {
                Formula::Apply(inner, children) if inner == op => flat.extend(children),
                other => flat.push(other),
            }
        }
        assert!(!flat.is_empty(), "connective applied to no arguments");
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::Apply(op, flat)
        }
    }

    pub fn strong_and(args: impl IntoIterator<Item = Formula>) -> Formula {
        Formula::apply(Connective::StrongAnd, args)
    }

    pub fn weak_and(args: impl IntoIterator<Item = Formula>) -> Formula {
        Formula::apply(Connective::WeakAnd, args)
    }

    pub fn strong_or(args: impl IntoIterator<Item = Formula>) -> Formula {
        Formula::apply(Connective::StrongOr, args)
    }

    pub fn weak_or(args: impl IntoIterator<Item = Formula>) -> Formula {
        Formula::apply(Connective::WeakOr, args)
    }

    pub fn is_literal(&self) -> bool {
        match self {
            Formula::Var(_) | Formula::Atom(_) => true,
            Formula::Not(inner) => matches!(**inner, Formula::Var(_) | Formula::Atom(_)),
            _ => false,
        }
    }

    pub fn is_propositional(&self) -> bool {
        match self {
            Formula::Zero | Formula::One | Formula::Var(_) => true,
            Formula::Atom(_) | Formula::ForAll(..) | Formula::Exists(..) => false,
            Formula::Not(f) => f.is_propositional(),
            Formula::Implies(a, b) => a.is_propositional() && b.is_propositional(),
            Formula::Apply(_, args) => args.iter().all(Formula::is_propositional),
        }
    }

    pub fn has_atoms(&self) -> bool {
        match self {
            Formula::Atom(_) => true,
            Formula::Zero | Formula::One | Formula::Var(_) => false,
            Formula::Not(f) | Formula::ForAll(_, f) | Formula::Exists(_, f) => f.has_atoms(),
            Formula::Implies(a, b) => a.has_atoms() || b.has_atoms(),
            Formula::Apply(_, args) => args.iter().any(Formula::has_atoms),
        }
    }

    /// Propositional variables in order of first occurrence.
    pub fn variables(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        self.visit_vars(&mut |name| {
            if seen.insert(name.to_string()) {
                out.push(name.to_string());
            }
        });
        out
    }

    fn visit_vars(&self, f: &mut impl FnMut(&str)) {
        match self {
            Formula::Var(name) => f(name),
            Formula::Zero | Formula::One | Formula::Atom(_) => {}
            Formula::Not(g) | Formula::ForAll(_, g) | Formula::Exists(_, g) => g.visit_vars(f),
            Formula::Implies(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Formula::Apply(_, args) => args.iter().for_each(|a| a.visit_vars(f)),
        }
    }

    /// Number of leaf occurrences (variables, atoms and constants).
    pub fn leaf_count(&self) -> usize {
        match self {
            Formula::Zero | Formula::One | Formula::Var(_) | Formula::Atom(_) => 1,
            Formula::Not(g) | Formula::ForAll(_, g) | Formula::Exists(_, g) => g.leaf_count(),
            Formula::Implies(a, b) => a.leaf_count() + b.leaf_count(),
            Formula::Apply(_, args) => args.iter().map(Formula::leaf_count).sum(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Zero | Formula::One | Formula::Var(_) | Formula::Atom(_) => 0,
            Formula::Not(g) | Formula::ForAll(_, g) | Formula::Exists(_, g) => 1 + g.depth(),
            Formula::Implies(a, b) => 1 + a.depth().max(b.depth()),
            Formula::Apply(_, args) => 1 + args.iter().map(Formula::depth).max().unwrap_or(0),
        }
    }

    /// Renames propositional variables; names missing from `map` are kept.
    pub fn rename_vars(&self, map: &HashMap<String, String>) -> Formula {
        match self {
            Formula::Var(name) => Formula::Var(map.get(name).cloned().unwrap_or_else(|| name.clone())),
            Formula::Zero | Formula::One | Formula::Atom(_) => self.clone(),
            Formula::Not(g) => Formula::Not(Box::new(g.rename_vars(map))),
            Formula::Implies(a, b) => a.rename_vars(map).implies(b.rename_vars(map)),
            Formula::Apply(op, args) => Formula::Apply(*op, args.iter().map(|a| a.rename_vars(map)).collect()),
            Formula::ForAll(v, g) => Formula::ForAll(v.clone(), Box::new(g.rename_vars(map))),
            Formula::Exists(v, g) => Formula::Exists(v.clone(), Box::new(g.rename_vars(map))),
        }
    }

    /// Truth value under `assignment`.
    pub fn evaluate(&self, assignment: &Assignment) -> Result<f64> {
        self.evaluate_with(&|name| assignment.get(name))
    }

    /// Truth value with variables resolved through `lookup`.
    pub fn evaluate_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        Ok(match self {
            Formula::Zero => 0.0,
            Formula::One => 1.0,
            Formula::Var(name) => {
                let value = lookup(name).ok_or_else(|| Error::UnboundVariable(name.clone()))?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Domain { name: name.clone(), value });
                }
                value
            }
            Formula::Atom(atom) => return Err(Error::NotPropositional(format!("atom {}", atom.predicate))),
            Formula::ForAll(v, _) | Formula::Exists(v, _) => {
                return Err(Error::NotPropositional(format!("quantifier over {v}")))
            }
            Formula::Not(g) => 1.0 - g.evaluate_with(lookup)?,
            Formula::Implies(a, b) => (1.0 - a.evaluate_with(lookup)? + b.evaluate_with(lookup)?).min(1.0),
            Formula::Apply(op, args) => {
                let mut acc = args[0].evaluate_with(lookup)?;
                for arg in &args[1..] {
                    acc = op.apply(acc, arg.evaluate_with(lookup)?);
                }
                acc
            }
        })
    }

    /// Replaces variables by positions in `index`, for repeated evaluation
    /// on dense vectors.
    pub fn index_vars(&self, index: &dyn Fn(&str) -> Option<usize>) -> Result<IndexedFormula> {
        Ok(match self {
            Formula::Zero => IndexedFormula::Const(0.0),
            Formula::One => IndexedFormula::Const(1.0),
            Formula::Var(name) => IndexedFormula::Var(index(name).ok_or_else(|| Error::UnboundVariable(name.clone()))?),
            Formula::Atom(_) | Formula::ForAll(..) | Formula::Exists(..) => {
                return Err(Error::NotPropositional(crate::parser::print(self)))
            }
            Formula::Not(g) => IndexedFormula::Not(Box::new(g.index_vars(index)?)),
            Formula::Implies(a, b) => IndexedFormula::Implies(Box::new(a.index_vars(index)?), Box::new(b.index_vars(index)?)),
            Formula::Apply(op, args) => {
                IndexedFormula::Apply(*op, args.iter().map(|a| a.index_vars(index)).collect::<Result<_>>()?)
            }
        })
    }
}

/// A propositional formula whose variables are positions in a value
/// vector. Evaluation does not range-check its inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum IndexedFormula {
    Const(f64),
    Var(usize),
    Not(Box<IndexedFormula>),
    Implies(Box<IndexedFormula>, Box<IndexedFormula>),
    Apply(Connective, Vec<IndexedFormula>),
}

impl IndexedFormula {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            IndexedFormula::Const(c) => *c,
            IndexedFormula::Var(i) => x[*i],
            IndexedFormula::Not(g) => 1.0 - g.eval(x),
            IndexedFormula::Implies(a, b) => (1.0 - a.eval(x) + b.eval(x)).min(1.0),
            IndexedFormula::Apply(op, args) => {
                let mut acc = args[0].eval(x);
                for arg in &args[1..] {
                    acc = op.apply(acc, arg.eval(x));
                }
                acc
            }
        }
    }

    /// Adds `scale` times a subgradient of the formula at `x` into `grad`.
    /// At a kink the branch chosen by the evaluation order is followed.
    pub fn backprop(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        match self {
            IndexedFormula::Const(_) => {}
            IndexedFormula::Var(i) => grad[*i] += scale,
            IndexedFormula::Not(g) => g.backprop(x, -scale, grad),
            IndexedFormula::Implies(a, b) => {
                if 1.0 - a.eval(x) + b.eval(x) < 1.0 {
                    a.backprop(x, -scale, grad);
                    b.backprop(x, scale, grad);
                }
            }
            IndexedFormula::Apply(op, args) => self.backprop_chain(*op, args, args.len(), x, scale, grad),
        }
    }

    // Gradient of the left-associated prefix `args[..len]`.
    fn backprop_chain(&self, op: Connective, args: &[IndexedFormula], len: usize, x: &[f64], scale: f64, grad: &mut [f64]) {
        if len == 1 {
            args[0].backprop(x, scale, grad);
            return;
        }
        let head = || {
            let mut acc = args[0].eval(x);
            for arg in &args[1..len - 1] {
                acc = op.apply(acc, arg.eval(x));
            }
            acc
        };
        let left = head();
        let right = args[len - 1].eval(x);
        let (into_left, into_right) = match op {
            Connective::StrongAnd => {
                let active = left + right - 1.0 > 0.0;
                (active, active)
            }
            Connective::StrongOr => {
                let active = left + right < 1.0;
                (active, active)
            }
            Connective::WeakAnd => (left <= right, left > right),
            Connective::WeakOr => (left >= right, left < right),
        };
        if into_left {
            self.backprop_chain(op, args, len - 1, x, scale, grad);
        }
        if into_right {
            args[len - 1].backprop(x, scale, grad);
        }
    }
}

/// Variable name → truth value, every value in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    values: BTreeMap<String, f64>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let mut a = Assignment::new();
        for (name, value) in pairs {
            a.insert(name, value)?;
        }
        Ok(a)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain { name, value });
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Checks semantic equality on the uniform grid with `steps` points per
/// axis (`{0, 1/(steps-1), …, 1}`), to within [`SEMANTIC_TOL`].
pub fn equivalent_on_grid(f: &Formula, g: &Formula, steps: usize) -> Result<bool> {
    let mut left = f.variables();
    let mut right = g.variables();
    left.sort();
    right.sort();
    if left != right {
        return Err(Error::VariableMismatch { left, right });
    }
    let axis: Vec<f64> = match steps {
        0 => return Err(Error::Dimension("grid needs at least one step".into())),
        1 => vec![0.0],
        _ => (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect(),
    };
    let n = left.len();
    let index: HashMap<&str, usize> = left.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let fi = f.index_vars(&|name| index.get(name).copied())?;
    let gi = g.index_vars(&|name| index.get(name).copied())?;

    let mut counter = vec![0usize; n];
    let mut point = vec![axis[0]; n];
    loop {
        if (fi.eval(&point) - gi.eval(&point)).abs() > SEMANTIC_TOL {
            return Ok(false);
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == n {
                return Ok(true);
            }
            counter[k] += 1;
            if counter[k] < axis.len() {
                point[k] = axis[counter[k]];
                break;
            }
            counter[k] = 0;
            point[k] = axis[0];
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_formula;

    fn eval(text: &str, pairs: &[(&str, f64)]) -> f64 {
        let f = parse_formula(text).unwrap();
        f.evaluate(&Assignment::from_pairs(pairs.iter().copied()).unwrap()).unwrap()
    }

    #[test]
    fn distributivity_counterexample() {
        let a = [("x", 0.1), ("y", 0.5), ("z", 0.5)];
        assert!((eval("x + (y * z)", &a) - 0.1).abs() <= SEMANTIC_TOL);
        assert!((eval("(x + y) * (x + z)", &a) - 0.2).abs() <= SEMANTIC_TOL);
    }

    #[test]
    fn contradiction_is_zero() {
        for x in [0.0, 0.25, 0.5, 0.9, 1.0] {
            assert_eq!(eval("x * ~x", &[("x", x)]), 0.0);
        }
    }

    #[test]
    fn implication_value() {
        assert!((eval("x -> y", &[("x", 0.3), ("y", 0.8)]) - 1.0).abs() <= SEMANTIC_TOL);
        assert!((eval("x -> y", &[("x", 0.8), ("y", 0.3)]) - 0.5).abs() <= SEMANTIC_TOL);
    }

    #[test]
    fn unbound_and_domain_errors() {
        let f = parse_formula("x + y").unwrap();
        let a = Assignment::from_pairs([("x", 0.2)]).unwrap();
        assert!(matches!(f.evaluate(&a), Err(Error::UnboundVariable(v)) if v == "y"));
        assert!(matches!(Assignment::from_pairs([("x", 1.5)]), Err(Error::Domain { .. })));
        let out_of_range = f.evaluate_with(&|n| if n == "x" { Some(-0.1) } else { Some(0.5) });
        assert!(matches!(out_of_range, Err(Error::Domain { .. })));
    }

    #[test]
    fn grid_equivalences() {
        let p = |s| parse_formula(s).unwrap();
        assert!(equivalent_on_grid(&p("(x -> y) ^ (y -> x)"), &p("(x -> y) * (y -> x)"), 11).unwrap());
        assert!(!equivalent_on_grid(&p("x + (y * z)"), &p("(x + y) * (x + z)"), 11).unwrap());
        assert!(equivalent_on_grid(&p("~~x"), &p("x"), 5).unwrap());
        assert!(matches!(
            equivalent_on_grid(&p("x"), &p("y"), 3),
            Err(Error::VariableMismatch { .. })
        ));
    }

    #[test]
    fn n_ary_flattening() {
        let f = Formula::strong_or([
            Formula::strong_or([Formula::var("a"), Formula::var("b")]),
            Formula::var("c"),
        ]);
        assert_eq!(f, Formula::Apply(Connective::StrongOr, vec![Formula::var("a"), Formula::var("b"), Formula::var("c")]));
        assert_eq!(Formula::weak_and([Formula::var("a")]), Formula::var("a"));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let f = parse_formula("((a + ~b) ^ (c * d)) | (a -> c)").unwrap();
        let names = f.variables();
        let fi = f.index_vars(&|n| names.iter().position(|m| m == n)).unwrap();
        let x = [0.3, 0.45, 0.8, 0.65];
        let mut grad = vec![0.0; 4];
        fi.backprop(&x, 1.0, &mut grad);
        for k in 0..4 {
            let mut hi = x;
            let mut lo = x;
            hi[k] += 1e-7;
            lo[k] -= 1e-7;
            let fd = (fi.eval(&hi) - fi.eval(&lo)) / 2e-7;
            assert!((fd - grad[k]).abs() < 1e-6, "component {k}: {fd} vs {}", grad[k]);
        }
    }
}
